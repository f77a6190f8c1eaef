#include "c3ca.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "json.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "pointcloud.hpp"
#include "synth.hpp"
#include "train.hpp"

struct c3ca_model_s {
  c3ca::LoadedModel loaded;
};

namespace {

using nlohmann::json;

thread_local std::string t_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) c3ca::fail_runtime("out of memory");
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

template <typename Fn>
c3ca_status guarded(Fn&& fn) {
  t_last_error.clear();
  try {
    fn();
    return C3CA_OK;
  } catch (const c3ca::Error& e) {
    t_last_error = e.what();
    return e.code();
  } catch (const std::exception& e) {
    t_last_error = e.what();
    return C3CA_ERR_RUNTIME;
  } catch (...) {
    t_last_error = "unexpected failure";
    return C3CA_ERR_RUNTIME;
  }
}

void require_arg(const void* ptr, const char* name) {
  if (ptr == nullptr) {
    c3ca::fail_invalid(std::string(name) + " must not be null");
  }
}

// Model captions are raw byte strings from the byte-level vocabulary and
// may not form valid UTF-8; serialize them with replacement characters.
std::string dump_replacing(const json& j) {
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

json parse_json_object(const char* text, const std::string& what) {
  std::string body = (text == nullptr || *text == '\0') ? "{}" : text;
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded()) c3ca::fail_invalid(what + ": malformed JSON");
  if (!j.is_object()) c3ca::fail_invalid(what + ": expected a JSON object");
  return j;
}

int64_t int_field(const json& v, const std::string& what,
                  const std::string& key) {
  if (!v.is_number_integer() && !v.is_number_unsigned()) {
    c3ca::fail_invalid(what + ": " + key + " must be an integer");
  }
  return v.get<int64_t>();
}

double num_field(const json& v, const std::string& what,
                 const std::string& key) {
  if (!v.is_number()) {
    c3ca::fail_invalid(what + ": " + key + " must be a number");
  }
  return v.get<double>();
}

std::string str_field(const json& v, const std::string& what,
                      const std::string& key) {
  if (!v.is_string()) {
    c3ca::fail_invalid(what + ": " + key + " must be a string");
  }
  return v.get<std::string>();
}

uint64_t seed_field(const json& v, const std::string& what) {
  if (v.is_number_unsigned()) return v.get<uint64_t>();
  if (v.is_number_integer()) {
    int64_t s = v.get<int64_t>();
    if (s < 0) c3ca::fail_invalid(what + ": seed must be non-negative");
    return static_cast<uint64_t>(s);
  }
  c3ca::fail_invalid(what + ": seed must be an integer");
}

// ---- datagen config ----------------------------------------------------

struct DatagenConfig {
  int64_t count = 128;
  uint64_t seed = 0;
  c3ca::SynthSpec spec;
};

DatagenConfig datagen_config_from_json(const json& j) {
  const std::string what = "datagen config";
  DatagenConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const json& v = it.value();
    if (key == "count") {
      c.count = int_field(v, what, key);
    } else if (key == "seed") {
      c.seed = seed_field(v, what);
    } else if (key == "min_objects") {
      c.spec.min_objects = int_field(v, what, key);
    } else if (key == "max_objects") {
      c.spec.max_objects = int_field(v, what, key);
    } else if (key == "points_per_scene") {
      c.spec.points_per_scene = int_field(v, what, key);
    } else {
      c3ca::fail_invalid(what + ": unknown key '" + key + "'");
    }
  }
  if (c.count < 1) c3ca::fail_invalid(what + ": count must be at least 1");
  if (c.spec.min_objects < 1 || c.spec.max_objects < c.spec.min_objects ||
      c.spec.max_objects > 4) {
    c3ca::fail_invalid(what + ": object count range must lie within [1,4]");
  }
  if (c.spec.points_per_scene < 8) {
    c3ca::fail_invalid(what + ": need at least 8 points per scene");
  }
  return c;
}

json datagen_config_to_json(const DatagenConfig& c) {
  return json{{"count", c.count},
              {"seed", c.seed},
              {"min_objects", c.spec.min_objects},
              {"max_objects", c.spec.max_objects},
              {"points_per_scene", c.spec.points_per_scene}};
}

// ---- train config (two sections: model + optimization) ------------------

struct TrainDoc {
  c3ca::ModelConfig model;
  c3ca::TrainConfig train;
};

TrainDoc train_doc_from_json(const json& j) {
  TrainDoc doc;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    if (key == "model") {
      doc.model = c3ca::model_config_from_json(it.value());
    } else if (key == "train") {
      doc.train = c3ca::train_config_from_json(it.value());
    } else {
      c3ca::fail_invalid("train config: unknown key '" + key +
                         "' (want \"model\" and/or \"train\")");
    }
  }
  return doc;
}

json train_doc_to_json(const TrainDoc& doc) {
  return json{{"model", c3ca::model_config_to_json(doc.model)},
              {"train", c3ca::train_config_to_json(doc.train)}};
}

// ---- caption options -----------------------------------------------------

struct CaptionOptions {
  std::string mode = "greedy";
  int64_t beam_width = 0;  // 0 -> model config default
  int64_t max_len = 0;     // 0 -> model decode budget
  std::string box_source = "none";
};

CaptionOptions caption_options_from_json(const json& j) {
  const std::string what = "caption options";
  CaptionOptions o;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const json& v = it.value();
    if (key == "mode") {
      o.mode = str_field(v, what, key);
      if (o.mode != "greedy" && o.mode != "beam") {
        c3ca::fail_invalid(what + ": mode must be \"greedy\" or \"beam\"");
      }
    } else if (key == "beam_width") {
      o.beam_width = int_field(v, what, key);
      if (o.beam_width < 0) {
        c3ca::fail_invalid(what +
                           ": beam_width must be non-negative (0 = "
                           "checkpoint default)");
      }
    } else if (key == "max_len") {
      o.max_len = int_field(v, what, key);
      if (o.max_len < 0) {
        c3ca::fail_invalid(what + ": max_len must be non-negative");
      }
    } else if (key == "box_source") {
      o.box_source = str_field(v, what, key);
      if (o.box_source != "none" && o.box_source != "gt" &&
          o.box_source != "head") {
        c3ca::fail_invalid(what +
                           ": box_source must be \"none\", \"gt\" or "
                           "\"head\"");
      }
    } else {
      c3ca::fail_invalid(what + ": unknown key '" + key + "'");
    }
  }
  return o;
}

// Caption one scene; beam width 1 realizes greedy mode so every caption
// carries the same re-scored sequence log-probability.
json caption_scene_json(const c3ca::C3caModel& model, const c3ca::Scene& scene,
                        const CaptionOptions& o) {
  c3ca::SceneTokens tokens = model.encode_scene(scene.cloud);
  int64_t width = 1;
  if (o.mode == "beam") {
    width = o.beam_width > 0 ? o.beam_width : model.config().beam_width;
  }
  double log_prob = 0.0;
  std::string caption = model.caption_beam(tokens, width, &log_prob, o.max_len);
  json out{{"caption", caption}, {"log_prob", log_prob}};
  if (o.box_source == "gt") {
    if (scene.objects.empty()) {
      c3ca::fail_invalid("caption: scene has no annotated objects "
                         "(box_source \"gt\")");
    }
    out["box"] = c3ca::box_to_json(scene.objects.front().box);
  } else if (o.box_source == "head") {
    std::vector<c3ca::BoxHeadOutput> boxes = model.predict_boxes(tokens);
    size_t best = 0;
    for (size_t i = 1; i < boxes.size(); ++i) {
      if (boxes[i].confidence > boxes[best].confidence) best = i;
    }
    out["box"] = c3ca::box_to_json(boxes[best].box);
  }
  return out;
}

// ---- retrieval options ---------------------------------------------------

struct RetrievalOptions {
  int64_t batch_size = 8;
  uint64_t seed = 0;
  int64_t trials = 0;  // 0 -> one shuffled pass in full batch chunks
};

RetrievalOptions retrieval_options_from_json(const json& j) {
  const std::string what = "retrieval options";
  RetrievalOptions o;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const json& v = it.value();
    if (key == "batch_size") {
      o.batch_size = int_field(v, what, key);
      if (o.batch_size < 2) {
        c3ca::fail_invalid(what + ": batch_size must be at least 2");
      }
    } else if (key == "seed") {
      o.seed = seed_field(v, what);
    } else if (key == "trials") {
      o.trials = int_field(v, what, key);
      if (o.trials < 0) {
        c3ca::fail_invalid(what + ": trials must be non-negative");
      }
    } else {
      c3ca::fail_invalid(what + ": unknown key '" + key + "'");
    }
  }
  return o;
}

// ---- eval options ----------------------------------------------------------

struct EvalOptions {
  std::vector<double> ious{0.25, 0.5};
  double nms_threshold = 0.5;
  std::vector<std::string> metrics{"cider", "bleu4", "rougel", "meteor"};
  bool all_objects = false;
};

bool known_metric(const std::string& id) {
  return id == "cider" || id == "bleu4" || id == "rougel" || id == "meteor";
}

EvalOptions eval_options_from_json(const json& j) {
  const std::string what = "eval options";
  EvalOptions o;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const json& v = it.value();
    if (key == "ious") {
      if (!v.is_array() || v.empty()) {
        c3ca::fail_invalid(what + ": ious must be a non-empty array");
      }
      o.ious.clear();
      for (const json& e : v) {
        double k = num_field(e, what, "ious entry");
        if (!(k >= 0.0 && k <= 1.0)) {
          c3ca::fail_invalid(what + ": iou thresholds must lie in [0,1]");
        }
        o.ious.push_back(k);
      }
    } else if (key == "nms_threshold") {
      o.nms_threshold = num_field(v, what, key);
      if (!(o.nms_threshold >= 0.0 && o.nms_threshold <= 1.0)) {
        c3ca::fail_invalid(what + ": nms_threshold must lie in [0,1]");
      }
    } else if (key == "metrics") {
      if (!v.is_array() || v.empty()) {
        c3ca::fail_invalid(what + ": metrics must be a non-empty array");
      }
      o.metrics.clear();
      for (const json& e : v) {
        std::string id = str_field(e, what, "metrics entry");
        if (!known_metric(id)) {
          c3ca::fail_invalid(what + ": unknown metric '" + id +
                             "' (want cider|bleu4|rougel|meteor)");
        }
        o.metrics.push_back(std::move(id));
      }
    } else if (key == "all_objects") {
      if (!v.is_boolean()) {
        c3ca::fail_invalid(what + ": all_objects must be a boolean");
      }
      o.all_objects = v.get<bool>();
    } else {
      c3ca::fail_invalid(what + ": unknown key '" + key + "'");
    }
  }
  return o;
}

// ---- prediction lines (caption output joined against ground truth) --------

struct Prediction {
  std::string scene_id;
  int64_t object_id = 0;
  std::string caption;
  double log_prob = 0.0;
  bool has_box = false;
  c3ca::Box3D box;
};

Prediction prediction_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) c3ca::fail_invalid(where + ": expected a JSON object");
  Prediction p;
  bool have_scene = false;
  bool have_caption = false;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const json& v = it.value();
    if (key == "scene_id") {
      p.scene_id = str_field(v, where, key);
      have_scene = true;
    } else if (key == "object_id") {
      p.object_id = int_field(v, where, key);
      if (p.object_id < 0) {
        c3ca::fail_invalid(where + ": object_id must be non-negative");
      }
    } else if (key == "caption") {
      p.caption = str_field(v, where, key);
      have_caption = true;
    } else if (key == "log_prob") {
      p.log_prob = num_field(v, where, key);
      if (!std::isfinite(p.log_prob)) {
        c3ca::fail_invalid(where + ": log_prob must be finite");
      }
    } else if (key == "box") {
      if (v.is_null()) {
        p.has_box = false;
      } else {
        p.box = c3ca::box_from_json(v);
        p.has_box = true;
      }
    } else {
      c3ca::fail_invalid(where + ": unknown key '" + key + "'");
    }
  }
  if (!have_scene) c3ca::fail_invalid(where + ": missing scene_id");
  if (!have_caption) c3ca::fail_invalid(where + ": missing caption");
  return p;
}

std::map<std::pair<std::string, int64_t>, Prediction> load_predictions(
    const std::string& path) {
  std::map<std::pair<std::string, int64_t>, Prediction> preds;
  std::istringstream in(c3ca::read_text_file(path));
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) c3ca::fail_invalid(where + ": malformed JSON");
    Prediction p = prediction_from_json(j, where);
    std::pair<std::string, int64_t> key{p.scene_id, p.object_id};
    if (!preds.emplace(std::move(key), std::move(p)).second) {
      c3ca::fail_invalid(where + ": duplicate prediction for scene '" +
                         j.at("scene_id").get<std::string>() + "'");
    }
  }
  return preds;
}

const c3ca::C3caModel& deref(c3ca_model* model) {
  require_arg(model, "model");
  return *model->loaded.model;
}

}  // namespace

extern "C" {

const char* c3ca_status_name(c3ca_status status) {
  switch (status) {
    case C3CA_OK:
      return "ok";
    case C3CA_ERR_INVALID_ARGUMENT:
      return "invalid_argument";
    case C3CA_ERR_IO:
      return "io";
    case C3CA_ERR_NUMERIC:
      return "numeric";
    case C3CA_ERR_RUNTIME:
      return "runtime";
  }
  return "unknown";
}

const char* c3ca_last_error(void) { return t_last_error.c_str(); }

void c3ca_string_free(char* s) { std::free(s); }

c3ca_status c3ca_resolve_datagen_config(const char* overrides_json,
                                        char** resolved_out) {
  return guarded([&] {
    require_arg(resolved_out, "resolved_out");
    DatagenConfig c = datagen_config_from_json(
        parse_json_object(overrides_json, "datagen config"));
    *resolved_out = dup_string(datagen_config_to_json(c).dump(2));
  });
}

c3ca_status c3ca_resolve_train_config(const char* overrides_json,
                                      char** resolved_out) {
  return guarded([&] {
    require_arg(resolved_out, "resolved_out");
    TrainDoc doc =
        train_doc_from_json(parse_json_object(overrides_json, "train config"));
    *resolved_out = dup_string(train_doc_to_json(doc).dump(2));
  });
}

c3ca_status c3ca_generate_dataset(const char* out_dir,
                                  const char* config_json) {
  return guarded([&] {
    require_arg(out_dir, "out_dir");
    DatagenConfig c = datagen_config_from_json(
        parse_json_object(config_json, "datagen config"));
    c3ca::generate_dataset(out_dir, c.count, c.seed, c.spec);
  });
}

c3ca_status c3ca_train(const char* dataset_dir, const char* config_json,
                       const char* checkpoint_path,
                       const char* metrics_log_path) {
  return guarded([&] {
    require_arg(dataset_dir, "dataset_dir");
    require_arg(checkpoint_path, "checkpoint_path");
    if (*checkpoint_path == '\0') {
      c3ca::fail_invalid("checkpoint_path must not be empty");
    }
    TrainDoc doc =
        train_doc_from_json(parse_json_object(config_json, "train config"));
    doc.train.checkpoint_path = checkpoint_path;
    if (metrics_log_path != nullptr && *metrics_log_path != '\0') {
      doc.train.log_path = metrics_log_path;
    }
    c3ca::validate_train_config(doc.train);

    std::vector<c3ca::TrainExample> examples =
        c3ca::load_training_set(dataset_dir, c3ca::Split::kTrain);
    if (static_cast<int64_t>(examples.size()) < doc.train.batch_size) {
      c3ca::fail_invalid(
          "train split holds " + std::to_string(examples.size()) +
          " scenes but batch_size is " + std::to_string(doc.train.batch_size));
    }
    c3ca::Vocabulary vocab = c3ca::build_dataset_vocabulary(
        dataset_dir, c3ca::Split::kTrain, doc.model.vocab_max_size);
    c3ca::C3caModel model(doc.model, std::move(vocab),
                          c3ca::derive_seed(doc.train.seed, "init"));
    c3ca::Trainer trainer(model, doc.train, std::move(examples));
    trainer.run();
  });
}

c3ca_status c3ca_model_load(const char* checkpoint_path, c3ca_model** out) {
  return guarded([&] {
    require_arg(checkpoint_path, "checkpoint_path");
    require_arg(out, "out");
    auto handle = std::make_unique<c3ca_model_s>();
    handle->loaded = c3ca::load_model(checkpoint_path);
    *out = handle.release();
  });
}

void c3ca_model_free(c3ca_model* model) { delete model; }

c3ca_status c3ca_model_caption_scene(c3ca_model* model,
                                     const char* scene_json_path,
                                     const char* options_json, char** out) {
  return guarded([&] {
    const c3ca::C3caModel& m = deref(model);
    require_arg(scene_json_path, "scene_json_path");
    require_arg(out, "out");
    CaptionOptions o = caption_options_from_json(
        parse_json_object(options_json, "caption options"));
    c3ca::Scene scene = c3ca::load_scene(scene_json_path);
    *out = dup_string(dump_replacing(caption_scene_json(m, scene, o)));
  });
}

c3ca_status c3ca_caption_dataset(c3ca_model* model, const char* dataset_dir,
                                 const char* split, const char* options_json,
                                 const char* out_jsonl_path) {
  return guarded([&] {
    const c3ca::C3caModel& m = deref(model);
    require_arg(dataset_dir, "dataset_dir");
    require_arg(split, "split");
    require_arg(out_jsonl_path, "out_jsonl_path");
    CaptionOptions o = caption_options_from_json(
        parse_json_object(options_json, "caption options"));
    std::vector<c3ca::DatasetEntry> entries =
        c3ca::list_dataset(dataset_dir, c3ca::split_from_name(split));
    std::string lines;
    for (const c3ca::DatasetEntry& entry : entries) {
      c3ca::Scene scene = c3ca::load_scene(entry.path);
      json rec = caption_scene_json(m, scene, o);
      json line{{"scene_id", entry.scene_id}, {"object_id", 0}};
      line["caption"] = rec.at("caption");
      line["log_prob"] = rec.at("log_prob");
      if (rec.contains("box")) line["box"] = rec.at("box");
      lines += dump_replacing(line);
      lines += '\n';
    }
    c3ca::write_text_file_atomic(out_jsonl_path, lines);
  });
}

c3ca_status c3ca_retrieval_accuracy(c3ca_model* model, const char* dataset_dir,
                                    const char* split,
                                    const char* options_json,
                                    double* accuracy_out) {
  return guarded([&] {
    const c3ca::C3caModel& m = deref(model);
    require_arg(dataset_dir, "dataset_dir");
    require_arg(split, "split");
    require_arg(accuracy_out, "accuracy_out");
    RetrievalOptions o = retrieval_options_from_json(
        parse_json_object(options_json, "retrieval options"));
    std::vector<c3ca::TrainExample> examples =
        c3ca::load_training_set(dataset_dir, c3ca::split_from_name(split));
    *accuracy_out =
        o.trials == 0
            ? c3ca::retrieval_pass_accuracy(m, examples, o.batch_size, o.seed)
            : c3ca::retrieval_accuracy(m, examples, o.batch_size, o.trials,
                                       o.seed);
  });
}

c3ca_status c3ca_evaluate_records(const char* records_jsonl_path,
                                  const char* options_json,
                                  char** report_json_out) {
  return guarded([&] {
    require_arg(records_jsonl_path, "records_jsonl_path");
    require_arg(report_json_out, "report_json_out");
    EvalOptions o =
        eval_options_from_json(parse_json_object(options_json, "eval options"));
    std::vector<c3ca::EvalRecord> records =
        c3ca::load_eval_records(records_jsonl_path);
    c3ca::MetricReport report =
        c3ca::evaluate_records(records, o.metrics, o.ious, o.nms_threshold);
    *report_json_out = dup_string(report.to_json().dump(2));
  });
}

c3ca_status c3ca_evaluate_predictions(const char* predictions_jsonl_path,
                                      const char* dataset_dir,
                                      const char* split,
                                      const char* options_json,
                                      char** report_json_out) {
  return guarded([&] {
    require_arg(predictions_jsonl_path, "predictions_jsonl_path");
    require_arg(dataset_dir, "dataset_dir");
    require_arg(split, "split");
    require_arg(report_json_out, "report_json_out");
    EvalOptions o =
        eval_options_from_json(parse_json_object(options_json, "eval options"));
    std::map<std::pair<std::string, int64_t>, Prediction> preds =
        load_predictions(predictions_jsonl_path);
    std::vector<c3ca::DatasetEntry> entries =
        c3ca::list_dataset(dataset_dir, c3ca::split_from_name(split));
    std::vector<c3ca::EvalRecord> records;
    std::vector<char> kept;
    for (const c3ca::DatasetEntry& entry : entries) {
      c3ca::Scene scene = c3ca::load_scene(entry.path);
      size_t n_objects =
          o.all_objects ? scene.objects.size() : std::min<size_t>(1, scene.objects.size());
      size_t scene_begin = records.size();
      for (size_t obj = 0; obj < n_objects; ++obj) {
        const c3ca::SceneObject& object = scene.objects[obj];
        c3ca::EvalRecord r;
        r.gt_box = object.box;
        r.references = object.captions;
        r.scene_id = entry.scene_id;
        r.object_id = static_cast<int64_t>(obj);
        auto it = preds.find({entry.scene_id, static_cast<int64_t>(obj)});
        if (it == preds.end()) {
          // annotated object without a prediction: counts with overlap zero
          r.has_predicted_box = false;
          r.score = 0.0;
        } else {
          const Prediction& p = it->second;
          r.predicted_caption = p.caption;
          r.has_predicted_box = p.has_box;
          if (p.has_box) r.predicted_box = p.box;
          r.score = p.log_prob;
        }
        records.push_back(std::move(r));
      }
      // Duplicate suppression only competes predictions of the same scene.
      std::vector<c3ca::EvalRecord> group(records.begin() + scene_begin,
                                          records.end());
      std::vector<char> group_kept =
          c3ca::nms_keep_mask(group, o.nms_threshold);
      kept.insert(kept.end(), group_kept.begin(), group_kept.end());
    }
    if (records.empty()) {
      c3ca::fail_invalid("evaluate: split '" + std::string(split) +
                         "' holds no annotated objects");
    }
    c3ca::MetricReport report =
        c3ca::evaluate_records_masked(records, kept, o.metrics, o.ious);
    *report_json_out = dup_string(report.to_json().dump(2));
  });
}

c3ca_status c3ca_gradcheck(uint64_t seed, double* max_rel_err) {
  return guarded([&] {
    require_arg(max_rel_err, "max_rel_err");
    *max_rel_err = c3ca::run_gradcheck(seed).max_rel_err;
  });
}

}  // extern "C"

// c3ca command-line front end. Talks to the pipeline exclusively through
// the public C interface; exit codes: 0 success, 1 usage error, 2 runtime
// failure.
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "c3ca.h"
#include "json.hpp"

namespace {

using nlohmann::json;

std::string take(char* s) {
  std::string out = s == nullptr ? "" : s;
  c3ca_string_free(s);
  return out;
}

int status_exit_code(c3ca_status status) {
  return status == C3CA_ERR_INVALID_ARGUMENT ? 1 : 2;
}

int report_failure(c3ca_status status) {
  std::cerr << "error (" << c3ca_status_name(status)
            << "): " << c3ca_last_error() << "\n";
  return status_exit_code(status);
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) {
    throw std::runtime_error("cannot open config file: " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  json j = json::parse(buf.str(), nullptr, false);
  if (j.is_discarded()) {
    throw std::runtime_error("malformed JSON in config file: " + path);
  }
  if (!j.is_object()) {
    throw std::runtime_error("config file must hold a JSON object: " + path);
  }
  return j;
}

void print_resolved(const std::string& label, const std::string& doc) {
  std::cout << "resolved " << label << " config:\n" << doc << "\n";
}

struct ModelHandle {
  c3ca_model* model = nullptr;
  ~ModelHandle() { c3ca_model_free(model); }
};

// Aligned table from the report JSON ({"thresholds": [...], "metrics":
// {name: {"0.25": v, ...}}}).
std::string report_table(const json& report) {
  const json& metrics = report.at("metrics");
  std::vector<double> thresholds =
      report.at("thresholds").get<std::vector<double>>();
  size_t name_width = 6;
  for (auto it = metrics.begin(); it != metrics.end(); ++it) {
    name_width = std::max(name_width, it.key().size());
  }
  auto threshold_key = [](double k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", k);
    return std::string(buf);
  };
  std::string out = "metric";
  out.append(name_width - 6 + 2, ' ');
  for (double k : thresholds) {
    char col[32];
    std::snprintf(col, sizeof(col), "%10s", ("@" + threshold_key(k)).c_str());
    out += col;
  }
  out += '\n';
  for (auto it = metrics.begin(); it != metrics.end(); ++it) {
    out += it.key();
    out.append(name_width - it.key().size() + 2, ' ');
    for (double k : thresholds) {
      char cell[32];
      std::snprintf(cell, sizeof(cell), "%10.6f",
                    it.value().at(threshold_key(k)).get<double>());
      out += cell;
    }
    out += '\n';
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"c3ca: contrastive 3d scene captioning pipeline"};
  app.require_subcommand(1);

  // ---- datagen -----------------------------------------------------------
  auto* datagen = app.add_subcommand(
      "datagen", "generate a synthetic scene/caption dataset");
  std::string dg_out, dg_config;
  int64_t dg_count = 0, dg_min = 0, dg_max = 0, dg_points = 0;
  uint64_t dg_seed = 0;
  datagen->add_option("--out", dg_out, "output dataset directory")
      ->required();
  datagen->add_option("--config", dg_config, "datagen config JSON file");
  datagen->add_option("--count", dg_count, "number of scenes");
  datagen->add_option("--seed", dg_seed, "data seed");
  datagen->add_option("--min-objects", dg_min, "min objects per scene");
  datagen->add_option("--max-objects", dg_max, "max objects per scene");
  datagen->add_option("--points", dg_points, "points per scene");

  // ---- train ---------------------------------------------------------------
  auto* train = app.add_subcommand("train", "run the joint training loop");
  std::string tr_dataset, tr_checkpoint, tr_log, tr_config;
  int64_t tr_steps = 0, tr_epochs = 0, tr_batch = 0, tr_ckpt_every = 0;
  double tr_lr = 0.0, tr_lambda = 0.0, tr_wd = 0.0;
  uint64_t tr_seed = 0;
  train->add_option("--dataset", tr_dataset, "dataset directory")->required();
  train->add_option("--checkpoint", tr_checkpoint, "checkpoint output path")
      ->required();
  train->add_option("--log", tr_log, "JSON-lines metrics log path");
  train->add_option("--config", tr_config,
                    "train config JSON file (model + train sections)");
  train->add_option("--steps", tr_steps, "explicit step budget");
  train->add_option("--epochs", tr_epochs, "epoch count (when steps is 0)");
  train->add_option("--batch", tr_batch, "batch size");
  train->add_option("--lr", tr_lr, "peak learning rate");
  train->add_option("--lambda", tr_lambda, "caption loss weight");
  train->add_option("--weight-decay", tr_wd, "decoupled weight decay");
  train->add_option("--checkpoint-every", tr_ckpt_every,
                    "checkpoint cadence in steps (0 = final only)");
  train->add_option("--seed", tr_seed,
                    "run seed (init and training derive from it)");

  // ---- caption -------------------------------------------------------------
  auto* caption =
      app.add_subcommand("caption", "caption a scene file or a dataset split");
  std::string cap_checkpoint, cap_scene, cap_dataset, cap_split = "all";
  std::string cap_out, cap_mode = "greedy", cap_box = "none";
  int64_t cap_beam = 0, cap_max_len = 0;
  caption->add_option("--checkpoint", cap_checkpoint, "trained checkpoint")
      ->required();
  auto* cap_scene_opt =
      caption->add_option("--scene", cap_scene, "single scene JSON file");
  auto* cap_dataset_opt =
      caption->add_option("--dataset", cap_dataset, "dataset directory");
  cap_scene_opt->excludes(cap_dataset_opt);
  caption->add_option("--split", cap_split, "dataset split (train|val|test|all)");
  caption->add_option("--out", cap_out, "output JSON-lines path");
  caption->add_option("--mode", cap_mode, "decoding mode (greedy|beam)");
  caption->add_option("--beam-width", cap_beam,
                      "beam width (0 = checkpoint default)");
  caption->add_option("--max-len", cap_max_len,
                      "decode budget (0 = checkpoint default)");
  caption->add_option("--box-source", cap_box,
                      "box field source (none|gt|head)");

  // ---- retrieve --------------------------------------------------------------
  auto* retrieve = app.add_subcommand(
      "retrieve", "scene->text top-1 retrieval accuracy over a split");
  std::string re_checkpoint, re_dataset, re_split = "val";
  int64_t re_batch = 8, re_trials = 0;
  uint64_t re_seed = 0;
  retrieve->add_option("--checkpoint", re_checkpoint, "trained checkpoint")
      ->required();
  retrieve->add_option("--dataset", re_dataset, "dataset directory")
      ->required();
  retrieve->add_option("--split", re_split, "dataset split");
  retrieve->add_option("--batch", re_batch, "candidates per batch");
  retrieve->add_option("--trials", re_trials,
                       "random batches (0 = one shuffled full pass)");
  retrieve->add_option("--seed", re_seed, "batch composition seed");

  // ---- eval ------------------------------------------------------------------
  auto* eval = app.add_subcommand(
      "eval", "caption metrics gated by 3D box overlap");
  std::string ev_records, ev_predictions, ev_dataset, ev_split = "val";
  std::vector<double> ev_ious;
  std::vector<std::string> ev_metrics;
  double ev_nms = -1.0;
  bool ev_all_objects = false;
  auto* ev_records_opt = eval->add_option(
      "--records", ev_records, "pre-joined eval record JSON-lines file");
  auto* ev_pred_opt = eval->add_option(
      "--predictions", ev_predictions,
      "prediction JSON-lines file (joined against dataset ground truth)");
  ev_records_opt->excludes(ev_pred_opt);
  eval->add_option("--dataset", ev_dataset,
                   "dataset directory (with --predictions)");
  eval->add_option("--split", ev_split, "dataset split (with --predictions)");
  eval->add_option("--iou", ev_ious, "IoU thresholds")->delimiter(',');
  eval->add_option("--nms-threshold", ev_nms, "suppression IoU threshold");
  eval->add_option("--metrics", ev_metrics,
                   "metric subset (cider,bleu4,rougel,meteor)")
      ->delimiter(',');
  eval->add_flag("--all-objects", ev_all_objects,
                 "evaluate every annotated object, not just each scene's first");

  // ---- gradcheck -------------------------------------------------------------
  auto* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference verification of a tiny model");
  uint64_t gc_seed = 0;
  gradcheck->add_option("--seed", gc_seed, "instance seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (datagen->parsed()) {
      json overrides =
          dg_config.empty() ? json::object() : load_json_file(dg_config);
      if (datagen->count("--count") > 0) overrides["count"] = dg_count;
      if (datagen->count("--seed") > 0) overrides["seed"] = dg_seed;
      if (datagen->count("--min-objects") > 0) overrides["min_objects"] = dg_min;
      if (datagen->count("--max-objects") > 0) overrides["max_objects"] = dg_max;
      if (datagen->count("--points") > 0) overrides["points_per_scene"] = dg_points;
      char* resolved = nullptr;
      c3ca_status s =
          c3ca_resolve_datagen_config(overrides.dump().c_str(), &resolved);
      if (s != C3CA_OK) return report_failure(s);
      std::string config = take(resolved);
      print_resolved("datagen", config);
      s = c3ca_generate_dataset(dg_out.c_str(), config.c_str());
      if (s != C3CA_OK) return report_failure(s);
      std::cout << "dataset written to " << dg_out << "\n";
      return 0;
    }

    if (train->parsed()) {
      json overrides =
          tr_config.empty() ? json::object() : load_json_file(tr_config);
      if (train->count("--steps") > 0) overrides["train"]["steps"] = tr_steps;
      if (train->count("--epochs") > 0) overrides["train"]["epochs"] = tr_epochs;
      if (train->count("--batch") > 0) overrides["train"]["batch_size"] = tr_batch;
      if (train->count("--lr") > 0) overrides["train"]["learning_rate"] = tr_lr;
      if (train->count("--lambda") > 0) overrides["train"]["lambda"] = tr_lambda;
      if (train->count("--weight-decay") > 0) {
        overrides["train"]["weight_decay"] = tr_wd;
      }
      if (train->count("--checkpoint-every") > 0) {
        overrides["train"]["checkpoint_every"] = tr_ckpt_every;
      }
      if (train->count("--seed") > 0) overrides["train"]["seed"] = tr_seed;
      char* resolved = nullptr;
      c3ca_status s =
          c3ca_resolve_train_config(overrides.dump().c_str(), &resolved);
      if (s != C3CA_OK) return report_failure(s);
      std::string config = take(resolved);
      print_resolved("train", config);
      s = c3ca_train(tr_dataset.c_str(), config.c_str(), tr_checkpoint.c_str(),
                     tr_log.empty() ? nullptr : tr_log.c_str());
      if (s != C3CA_OK) return report_failure(s);
      std::cout << "checkpoint written to " << tr_checkpoint << "\n";
      return 0;
    }

    if (caption->parsed()) {
      if (cap_scene.empty() == cap_dataset.empty()) {
        std::cerr << "caption needs exactly one of --scene or --dataset\n";
        return 1;
      }
      json options{{"mode", cap_mode},
                   {"beam_width", cap_beam},
                   {"max_len", cap_max_len},
                   {"box_source", cap_box}};
      json doc{{"checkpoint", cap_checkpoint}, {"options", options}};
      if (!cap_scene.empty()) doc["scene"] = cap_scene;
      if (!cap_dataset.empty()) {
        doc["dataset"] = cap_dataset;
        doc["split"] = cap_split;
      }
      if (!cap_out.empty()) doc["out"] = cap_out;
      print_resolved("caption", doc.dump(2));

      ModelHandle handle;
      c3ca_status s = c3ca_model_load(cap_checkpoint.c_str(), &handle.model);
      if (s != C3CA_OK) return report_failure(s);
      std::string opts = options.dump();
      if (!cap_scene.empty()) {
        char* out = nullptr;
        s = c3ca_model_caption_scene(handle.model, cap_scene.c_str(),
                                     opts.c_str(), &out);
        if (s != C3CA_OK) return report_failure(s);
        std::string line = take(out);
        if (cap_out.empty()) {
          std::cout << line << "\n";
        } else {
          std::ofstream sink(cap_out, std::ios::trunc);
          sink << line << "\n";
          if (!sink.good()) {
            std::cerr << "error (io): cannot write " << cap_out << "\n";
            return 2;
          }
          std::cout << "prediction written to " << cap_out << "\n";
        }
        return 0;
      }
      if (cap_out.empty()) {
        std::cerr << "caption --dataset needs --out\n";
        return 1;
      }
      s = c3ca_caption_dataset(handle.model, cap_dataset.c_str(),
                               cap_split.c_str(), opts.c_str(),
                               cap_out.c_str());
      if (s != C3CA_OK) return report_failure(s);
      std::cout << "predictions written to " << cap_out << "\n";
      return 0;
    }

    if (retrieve->parsed()) {
      json options{{"batch_size", re_batch},
                   {"seed", re_seed},
                   {"trials", re_trials}};
      json doc{{"checkpoint", re_checkpoint},
               {"dataset", re_dataset},
               {"split", re_split},
               {"options", options}};
      print_resolved("retrieve", doc.dump(2));

      ModelHandle handle;
      c3ca_status s = c3ca_model_load(re_checkpoint.c_str(), &handle.model);
      if (s != C3CA_OK) return report_failure(s);
      double accuracy = 0.0;
      s = c3ca_retrieval_accuracy(handle.model, re_dataset.c_str(),
                                  re_split.c_str(), options.dump().c_str(),
                                  &accuracy);
      if (s != C3CA_OK) return report_failure(s);
      std::printf("retrieval_top1 %.10g\n", accuracy);
      return 0;
    }

    if (eval->parsed()) {
      if (ev_records.empty() == ev_predictions.empty()) {
        std::cerr << "eval needs exactly one of --records or --predictions\n";
        return 1;
      }
      if (!ev_predictions.empty() && ev_dataset.empty()) {
        std::cerr << "eval --predictions needs --dataset\n";
        return 1;
      }
      json options = json::object();
      if (!ev_ious.empty()) options["ious"] = ev_ious;
      if (ev_nms >= 0.0) options["nms_threshold"] = ev_nms;
      if (!ev_metrics.empty()) options["metrics"] = ev_metrics;
      if (ev_all_objects) options["all_objects"] = true;
      // display defaults the library will apply
      json shown = options;
      if (!shown.contains("ious")) shown["ious"] = {0.25, 0.5};
      if (!shown.contains("nms_threshold")) shown["nms_threshold"] = 0.5;
      if (!shown.contains("metrics")) {
        shown["metrics"] = {"cider", "bleu4", "rougel", "meteor"};
      }
      if (!shown.contains("all_objects")) shown["all_objects"] = false;
      json doc{{"options", shown}};
      if (!ev_records.empty()) doc["records"] = ev_records;
      if (!ev_predictions.empty()) {
        doc["predictions"] = ev_predictions;
        doc["dataset"] = ev_dataset;
        doc["split"] = ev_split;
      }
      print_resolved("eval", doc.dump(2));

      char* report_text = nullptr;
      c3ca_status s =
          ev_records.empty()
              ? c3ca_evaluate_predictions(ev_predictions.c_str(),
                                          ev_dataset.c_str(), ev_split.c_str(),
                                          options.dump().c_str(), &report_text)
              : c3ca_evaluate_records(ev_records.c_str(),
                                      options.dump().c_str(), &report_text);
      if (s != C3CA_OK) return report_failure(s);
      std::string report = take(report_text);
      std::cout << report << "\n";
      std::cout << report_table(json::parse(report));
      return 0;
    }

    if (gradcheck->parsed()) {
      json doc{{"seed", gc_seed}};
      print_resolved("gradcheck", doc.dump(2));
      double max_rel_err = 0.0;
      c3ca_status s = c3ca_gradcheck(gc_seed, &max_rel_err);
      if (s != C3CA_OK) return report_failure(s);
      std::printf("max_rel_err %.10g\n", max_rel_err);
      if (max_rel_err > 1e-4) {
        std::cerr << "gradient check failed: " << max_rel_err << " > 1e-4\n";
        return 2;
      }
      std::cout << "gradient check passed\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

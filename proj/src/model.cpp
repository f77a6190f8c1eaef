#include "model.hpp"

#include <cmath>
#include <utility>

#include "common.hpp"

namespace c3ca {

namespace {

using nlohmann::json;

int64_t int_field(const json& value, const std::string& key) {
  if (!value.is_number_integer()) {
    fail_invalid("model config: " + key + " must be an integer");
  }
  return value.get<int64_t>();
}

}  // namespace

void validate_model_config(const ModelConfig& c) {
  auto positive = [](int64_t v, const char* what) {
    if (v < 1) fail_invalid(std::string("model config: ") + what +
                            " must be positive");
  };
  positive(c.patches, "patches");
  positive(c.neighbors, "neighbors");
  positive(c.patch_dim, "patch_dim");
  positive(c.patch_hidden, "patch_hidden");
  positive(c.dim, "dim");
  positive(c.mlp_ratio, "mlp_ratio");
  positive(c.scene_layers, "scene_layers");
  positive(c.scene_heads, "scene_heads");
  positive(c.task_tokens, "task_tokens");
  positive(c.text_layers, "text_layers");
  positive(c.text_heads, "text_heads");
  positive(c.max_text_len, "max_text_len");
  positive(c.embed_dim, "embed_dim");
  positive(c.decoder_layers, "decoder_layers");
  positive(c.decoder_heads, "decoder_heads");
  positive(c.beam_width, "beam_width");
  if (c.point_features < 0) {
    fail_invalid("model config: point_features must be non-negative");
  }
  if (c.max_decode_len < 2) {
    fail_invalid("model config: max_decode_len must be at least 2");
  }
  if (c.dim % c.scene_heads != 0 || c.dim % c.text_heads != 0 ||
      c.dim % c.decoder_heads != 0) {
    fail_invalid("model config: dim must be divisible by every head count");
  }
  if (!(c.init_temperature >= 0.01 && c.init_temperature <= 100.0)) {
    fail_invalid("model config: init_temperature must lie in [0.01, 100]");
  }
  if (c.vocab_max_size < 261) {
    fail_invalid("model config: vocab_max_size must cover specials + bytes");
  }
}

ModelConfig model_config_from_json(const json& j) {
  if (!j.is_object()) fail_invalid("model config must be a JSON object");
  ModelConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const json& v = it.value();
    if (key == "patches") c.patches = int_field(v, key);
    else if (key == "neighbors") c.neighbors = int_field(v, key);
    else if (key == "patch_dim") c.patch_dim = int_field(v, key);
    else if (key == "patch_hidden") c.patch_hidden = int_field(v, key);
    else if (key == "point_features") c.point_features = int_field(v, key);
    else if (key == "dim") c.dim = int_field(v, key);
    else if (key == "mlp_ratio") c.mlp_ratio = int_field(v, key);
    else if (key == "scene_layers") c.scene_layers = int_field(v, key);
    else if (key == "scene_heads") c.scene_heads = int_field(v, key);
    else if (key == "task_tokens") c.task_tokens = int_field(v, key);
    else if (key == "text_layers") c.text_layers = int_field(v, key);
    else if (key == "text_heads") c.text_heads = int_field(v, key);
    else if (key == "max_text_len") c.max_text_len = int_field(v, key);
    else if (key == "embed_dim") c.embed_dim = int_field(v, key);
    else if (key == "decoder_layers") c.decoder_layers = int_field(v, key);
    else if (key == "decoder_heads") c.decoder_heads = int_field(v, key);
    else if (key == "max_decode_len") c.max_decode_len = int_field(v, key);
    else if (key == "beam_width") c.beam_width = int_field(v, key);
    else if (key == "vocab_max_size") c.vocab_max_size = int_field(v, key);
    else if (key == "init_temperature") {
      if (!v.is_number()) {
        fail_invalid("model config: init_temperature must be a number");
      }
      c.init_temperature = v.get<double>();
    } else if (key == "use_box_head") {
      if (!v.is_boolean()) {
        fail_invalid("model config: use_box_head must be a boolean");
      }
      c.use_box_head = v.get<bool>();
    } else {
      fail_invalid("model config: unknown key: " + key);
    }
  }
  validate_model_config(c);
  return c;
}

json model_config_to_json(const ModelConfig& c) {
  return json{{"patches", c.patches},
              {"neighbors", c.neighbors},
              {"patch_dim", c.patch_dim},
              {"patch_hidden", c.patch_hidden},
              {"point_features", c.point_features},
              {"dim", c.dim},
              {"mlp_ratio", c.mlp_ratio},
              {"scene_layers", c.scene_layers},
              {"scene_heads", c.scene_heads},
              {"task_tokens", c.task_tokens},
              {"text_layers", c.text_layers},
              {"text_heads", c.text_heads},
              {"max_text_len", c.max_text_len},
              {"embed_dim", c.embed_dim},
              {"decoder_layers", c.decoder_layers},
              {"decoder_heads", c.decoder_heads},
              {"max_decode_len", c.max_decode_len},
              {"beam_width", c.beam_width},
              {"init_temperature", c.init_temperature},
              {"vocab_max_size", c.vocab_max_size},
              {"use_box_head", c.use_box_head}};
}

C3caModel::C3caModel(const ModelConfig& config, Vocabulary vocab,
                     uint64_t init_seed)
    : config_(config), vocab_(std::move(vocab)) {
  validate_model_config(config_);
  Rng root(init_seed);

  Rng rng = root.fork("tokenizer");
  int64_t in_dim = 3 + config_.point_features;
  patch_net_.w1 = make_embedding(store_, "tokenizer_mlp.w1", in_dim,
                                 config_.patch_hidden, rng,
                                 1.0 / std::sqrt(static_cast<double>(in_dim)));
  patch_net_.b1 =
      store_.add("tokenizer_mlp.b1", Tensor::zeros({config_.patch_hidden}, true))
          .tensor;
  patch_net_.w2 = make_embedding(
      store_, "tokenizer_mlp.w2", config_.patch_hidden, config_.patch_dim, rng,
      1.0 / std::sqrt(static_cast<double>(config_.patch_hidden)));
  patch_net_.b2 =
      store_.add("tokenizer_mlp.b2", Tensor::zeros({config_.patch_dim}, true))
          .tensor;

  SceneEncoderConfig scene_cfg;
  scene_cfg.layers = config_.scene_layers;
  scene_cfg.heads = config_.scene_heads;
  scene_cfg.dim = config_.dim;
  scene_cfg.mlp_ratio = config_.mlp_ratio;
  scene_cfg.task_tokens = config_.task_tokens;
  scene_cfg.patches = config_.patches;
  scene_cfg.patch_dim = config_.patch_dim;
  rng = root.fork("scene");
  scene_encoder_ = std::make_unique<SceneEncoder>(scene_cfg, store_, rng);

  TextEncoderConfig text_cfg;
  text_cfg.layers = config_.text_layers;
  text_cfg.heads = config_.text_heads;
  text_cfg.dim = config_.dim;
  text_cfg.mlp_ratio = config_.mlp_ratio;
  text_cfg.max_len = config_.max_text_len;
  rng = root.fork("text");
  text_encoder_ = std::make_unique<TextEncoder>(
      text_cfg, static_cast<int64_t>(vocab_.size()), store_, rng);

  rng = root.fork("proj");
  proj_v_ = make_projection_head(store_, "proj_v", config_.dim,
                                 config_.embed_dim, rng);
  proj_t_ = make_projection_head(store_, "proj_t", config_.dim,
                                 config_.embed_dim, rng);

  log_tau_ = store_
                 .add("contrastive.log_temperature",
                      Tensor::scalar(std::log(config_.init_temperature), true))
                 .tensor;

  DecoderConfig dec_cfg;
  dec_cfg.layers = config_.decoder_layers;
  dec_cfg.heads = config_.decoder_heads;
  dec_cfg.dim = config_.dim;
  dec_cfg.mlp_ratio = config_.mlp_ratio;
  dec_cfg.max_decode_len = config_.max_decode_len;
  rng = root.fork("decoder");
  decoder_ = std::make_unique<CaptionDecoder>(
      dec_cfg, static_cast<int64_t>(vocab_.size()), store_, rng);

  if (config_.use_box_head) {
    rng = root.fork("box_head");
    box_fc1_ = make_linear(store_, "box_head.fc1", config_.dim, config_.dim,
                           rng);
    box_fc2_ = make_linear(store_, "box_head.fc2", config_.dim, 7, rng);
  }

  store_.freeze_prefix("scene_backbone.");
  store_.freeze_prefix("text_backbone.");
}

SceneTokens C3caModel::encode_scene(const PointCloud& cloud) const {
  if (cloud.n_features != config_.point_features) {
    fail_invalid("encode_scene: cloud carries " +
                 std::to_string(cloud.n_features) + " features, model wants " +
                 std::to_string(config_.point_features));
  }
  if (cloud.n_points < config_.patches || cloud.n_points < config_.neighbors) {
    fail_invalid("encode_scene: cloud too small for patch tokenization");
  }
  auto centers = farthest_point_sample(cloud, config_.patches, 0);
  auto patches = knn_group(cloud, centers, config_.neighbors);
  Tensor tokens = embed_patches(cloud, patches, patch_net_);
  return scene_encoder_->encode(tokens);
}

Tensor C3caModel::scene_alignment(const SceneTokens& scene) const {
  return project_and_normalize(scene.f_enc, proj_v_);
}

Tensor C3caModel::text_alignment(const std::vector<int64_t>& ids) const {
  return project_and_normalize(text_encoder_->encode(ids), proj_t_);
}

std::vector<int64_t> C3caModel::tokenize_caption(
    const std::string& caption) const {
  return vocab_.tokenize(caption);
}

void C3caModel::decoder_io(const std::vector<int64_t>& ids,
                           std::vector<int64_t>& input,
                           std::vector<int64_t>& targets) {
  if (ids.size() < 3 || ids[0] != Vocabulary::kCls ||
      ids[1] != Vocabulary::kBos || ids.back() != Vocabulary::kEos) {
    fail_invalid("decoder_io: expected [CLS, BOS, ..., EOS] token stream");
  }
  input.assign(ids.begin() + 1, ids.end() - 1);
  targets.assign(ids.begin() + 2, ids.end());
}

Tensor C3caModel::caption_logits(const std::vector<int64_t>& input,
                                 const SceneTokens& scene) const {
  return decoder_->forward(input, scene.token_outputs);
}

Tensor C3caModel::caption_loss(const std::vector<int64_t>& ids,
                               const SceneTokens& scene) const {
  std::vector<int64_t> input, targets;
  decoder_io(ids, input, targets);
  return decoder_->loss(caption_logits(input, scene), targets);
}

namespace {

int64_t resolve_decode_len(int64_t requested, int64_t budget) {
  if (requested == 0) return budget;
  if (requested < 2 || requested > budget) {
    fail_invalid("decode length must lie in [2, max_decode_len]");
  }
  return requested;
}

}  // namespace

std::string C3caModel::caption_greedy(const SceneTokens& scene,
                                      int64_t max_len) const {
  auto ids = decoder_->generate_greedy(
      scene.token_outputs, resolve_decode_len(max_len, config_.max_decode_len));
  return vocab_.detokenize(ids);
}

std::string C3caModel::caption_beam(const SceneTokens& scene, int64_t width,
                                    double* log_prob, int64_t max_len) const {
  auto ids = decoder_->generate_beam(
      scene.token_outputs, width,
      resolve_decode_len(max_len, config_.max_decode_len));
  if (log_prob != nullptr) {
    // Re-score the emitted sequence; the decoder loss is the summed NLL.
    std::vector<int64_t> input;
    input.push_back(Vocabulary::kBos);
    input.insert(input.end(), ids.begin(), ids.end() - 1);
    Tensor nll = decoder_->loss(decoder_->forward(input, scene.token_outputs),
                                ids);
    *log_prob = -nll.item();
  }
  return vocab_.detokenize(ids);
}

double C3caModel::temperature() const { return std::exp(log_tau_.item()); }

void C3caModel::clamp_temperature() {
  TemperatureClamp clamp;
  double lo = std::log(clamp.min_tau);
  double hi = std::log(clamp.max_tau);
  double& v = log_tau_.mutable_data()[0];
  if (v < lo) v = lo;
  if (v > hi) v = hi;
}

Tensor C3caModel::box_head_raw(const SceneTokens& scene) const {
  if (!config_.use_box_head) fail_invalid("model has no box head");
  Tensor task_rows = row_slice(scene.token_outputs, config_.patches,
                               config_.patches + config_.task_tokens);
  return linear(relu(linear(task_rows, box_fc1_)), box_fc2_);
}

std::vector<BoxHeadOutput> C3caModel::predict_boxes(
    const SceneTokens& scene) const {
  Tensor raw = box_head_raw(scene);
  std::vector<BoxHeadOutput> out;
  for (int64_t slot = 0; slot < config_.task_tokens; ++slot) {
    BoxHeadOutput b;
    for (int axis = 0; axis < 3; ++axis) {
      b.box.center[static_cast<size_t>(axis)] = raw.at(slot, axis);
      b.box.size[static_cast<size_t>(axis)] = std::exp(raw.at(slot, 3 + axis));
    }
    b.confidence = 1.0 / (1.0 + std::exp(-raw.at(slot, 6)));
    out.push_back(b);
  }
  return out;
}

void save_model(const C3caModel& model, const std::string& path,
                const std::vector<CheckpointRecord>& aux) {
  std::vector<CheckpointRecord> records;
  const ParameterStore& store = model.store();
  for (size_t i = 0; i < store.count(); ++i) {
    const Parameter& p = store[i];
    CheckpointRecord rec;
    rec.name = p.name;
    rec.frozen = p.frozen;
    rec.shape = p.tensor.shape();
    rec.data = p.tensor.data();
    records.push_back(std::move(rec));
  }
  for (const auto& rec : aux) {
    if (rec.name.rfind("__", 0) != 0) {
      fail_invalid("auxiliary checkpoint records must start with __: " +
                   rec.name);
    }
    records.push_back(rec);
  }
  save_checkpoint(path, records);
  json meta{{"format", "c3ca-model"},
            {"model_config", model_config_to_json(model.config())}};
  write_text_file_atomic(path + ".meta.json", meta.dump(2) + "\n");
  write_text_file_atomic(path + ".vocab.json", model.vocab().to_json());
}

LoadedModel load_model(const std::string& path) {
  json meta;
  try {
    meta = json::parse(read_text_file(path + ".meta.json"));
  } catch (const json::exception& e) {
    fail_io("cannot parse model meta " + path + ".meta.json: " + e.what());
  }
  if (!meta.is_object() || meta.value("format", "") != "c3ca-model") {
    fail_invalid(path + ".meta.json is not a model descriptor");
  }
  ModelConfig config = model_config_from_json(meta.at("model_config"));
  Vocabulary vocab =
      Vocabulary::from_json(read_text_file(path + ".vocab.json"));

  LoadedModel out;
  out.model = std::make_unique<C3caModel>(config, std::move(vocab), 0);
  auto records = load_checkpoint(path);
  ParameterStore& store = out.model->store();
  size_t applied = 0;
  for (auto& rec : records) {
    if (rec.name.rfind("__", 0) == 0) {
      out.aux.push_back(std::move(rec));
      continue;
    }
    Parameter* param = store.find(rec.name);
    if (param == nullptr) {
      fail_invalid("checkpoint parameter not in model: " + rec.name);
    }
    if (rec.shape != param->tensor.shape()) {
      fail_invalid("checkpoint shape mismatch for " + rec.name);
    }
    if (rec.frozen != param->frozen) {
      fail_invalid("checkpoint frozen flag mismatch for " + rec.name);
    }
    param->tensor.mutable_data() = rec.data;
    ++applied;
  }
  if (applied != store.count()) {
    fail_invalid("checkpoint covers " + std::to_string(applied) + " of " +
                 std::to_string(store.count()) + " model parameters");
  }
  return out;
}

}  // namespace c3ca

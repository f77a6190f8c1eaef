#pragma once

#include <memory>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "contrastive.hpp"
#include "decoder.hpp"
#include "pointcloud.hpp"
#include "scene_encoder.hpp"
#include "text.hpp"
#include "transformer.hpp"

namespace c3ca {

struct ModelConfig {
  // point tokenizer
  int64_t patches = 64;        // M
  int64_t neighbors = 16;      // K
  int64_t patch_dim = 64;      // D_p
  int64_t patch_hidden = 64;
  int64_t point_features = 4;  // F; clouds carry 3 + F columns
  // shared transformer width for scene tower, text tower and decoder
  int64_t dim = 128;
  int64_t mlp_ratio = 4;
  int64_t scene_layers = 4;
  int64_t scene_heads = 4;
  int64_t task_tokens = 4;  // m_t
  int64_t text_layers = 4;
  int64_t text_heads = 4;
  int64_t max_text_len = 64;
  int64_t embed_dim = 128;  // D_s, alignment space
  int64_t decoder_layers = 2;
  int64_t decoder_heads = 4;
  int64_t max_decode_len = 32;
  int64_t beam_width = 3;
  double init_temperature = 0.07;
  int64_t vocab_max_size = 512;
  bool use_box_head = false;
};

void validate_model_config(const ModelConfig& config);
// Strict parse: unknown keys and wrong types are errors. Missing keys keep
// their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json model_config_to_json(const ModelConfig& config);

// Optional localization head: per task-token two-layer perceptron emitting
// (center xyz, log-size xyz, confidence logit).
struct BoxHeadOutput {
  Box3D box;
  double confidence = 0.0;  // sigmoid of the logit
};

// Full captioner: frozen dual towers with trainable tokenizer, task tokens,
// projections, temperature and decoder.
class C3caModel {
 public:
  C3caModel(const ModelConfig& config, Vocabulary vocab, uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }

  // Point cloud -> FPS centers -> kNN patches -> patch MLP -> towers.
  SceneTokens encode_scene(const PointCloud& cloud) const;
  // 1 x embed_dim unit row for the alignment space.
  Tensor scene_alignment(const SceneTokens& scene) const;
  Tensor text_alignment(const std::vector<int64_t>& ids) const;

  // [CLS, BOS, subwords..., EOS]
  std::vector<int64_t> tokenize_caption(const std::string& caption) const;
  // Teacher-forcing views of a tokenized caption: input drops CLS and the
  // final EOS, targets drop CLS and BOS.
  static void decoder_io(const std::vector<int64_t>& ids,
                         std::vector<int64_t>& input,
                         std::vector<int64_t>& targets);

  Tensor caption_logits(const std::vector<int64_t>& input,
                        const SceneTokens& scene) const;
  // Sum of next-token NLL over the caption (teacher forced).
  Tensor caption_loss(const std::vector<int64_t>& ids,
                      const SceneTokens& scene) const;
  // max_len 0 falls back to the configured decode budget; an explicit value
  // must not exceed it (the decoder's position table is sized by config).
  std::string caption_greedy(const SceneTokens& scene,
                             int64_t max_len = 0) const;
  std::string caption_beam(const SceneTokens& scene, int64_t width,
                           double* log_prob = nullptr,
                           int64_t max_len = 0) const;

  Tensor log_temperature() const { return log_tau_; }
  double temperature() const;
  // Projects log-temperature back into [0.01, 100] after an optimizer step.
  void clamp_temperature();

  bool has_box_head() const { return config_.use_box_head; }
  // Raw m_t x 7 head outputs (requires use_box_head).
  Tensor box_head_raw(const SceneTokens& scene) const;
  std::vector<BoxHeadOutput> predict_boxes(const SceneTokens& scene) const;

  uint64_t frozen_hash() const { return store_.frozen_payload_hash(); }

  const CaptionDecoder& decoder() const { return *decoder_; }

 private:
  ModelConfig config_;
  Vocabulary vocab_;
  ParameterStore store_;
  PatchEmbedNet patch_net_;
  std::unique_ptr<SceneEncoder> scene_encoder_;
  std::unique_ptr<TextEncoder> text_encoder_;
  ProjectionHead proj_v_;
  ProjectionHead proj_t_;
  Tensor log_tau_;
  std::unique_ptr<CaptionDecoder> decoder_;
  Linear box_fc1_;
  Linear box_fc2_;
};

// Checkpoint + sidecars <path>.meta.json (model config) and
// <path>.vocab.json. Auxiliary records must be named with a "__" prefix;
// they ride along for trainer state.
void save_model(const C3caModel& model, const std::string& path,
                const std::vector<CheckpointRecord>& aux = {});

struct LoadedModel {
  std::unique_ptr<C3caModel> model;
  std::vector<CheckpointRecord> aux;
};

LoadedModel load_model(const std::string& path);

}  // namespace c3ca

#include "scene_encoder.hpp"

#include "common.hpp"

namespace c3ca {

SceneEncoder::SceneEncoder(const SceneEncoderConfig& config,
                           ParameterStore& store, Rng& rng)
    : config_(config) {
  if (config.dim % config.heads != 0) {
    fail_invalid("scene encoder width must be divisible by head count");
  }
  if (config.task_tokens < 1) fail_invalid("need at least one task token");
  std::vector<double> task(static_cast<size_t>(config.task_tokens * config.patch_dim));
  for (int64_t j = 0; j < config.task_tokens; ++j) {
    for (int64_t d = 0; d < config.patch_dim; ++d) {
      task[j * config.patch_dim + d] = static_cast<double>(j);
    }
  }
  task_embed_ = store
                    .add("task_tokens.embeddings",
                         Tensor::matrix(config.task_tokens, config.patch_dim,
                                        std::move(task), true))
                    .tensor;
  has_adapter_ = config.patch_dim != config.dim;
  if (has_adapter_) {
    adapter_ = make_linear(store, "scene_adapter", config.patch_dim,
                           config.dim, rng);
  }
  pos_embed_ = make_embedding(store, "scene_pos.embeddings",
                              config.patches + config.task_tokens, config.dim,
                              rng);
  for (int64_t i = 0; i < config.layers; ++i) {
    blocks_.push_back(make_encoder_block(
        store, "scene_backbone.block" + std::to_string(i), config.dim,
        config.heads, config.mlp_ratio, rng));
  }
}

SceneTokens SceneEncoder::encode(const Tensor& patch_tokens) const {
  if (patch_tokens.rows() != config_.patches ||
      patch_tokens.cols() != config_.patch_dim) {
    fail_invalid("scene encode: patch token shape does not match config");
  }
  Tensor x = concat_rows({patch_tokens, task_embed_});
  if (has_adapter_) x = linear(x, adapter_);
  x = add(x, pos_embed_);
  for (const auto& block : blocks_) x = encoder_block(x, block);
  SceneTokens out;
  out.token_outputs = x;
  out.f_enc = mean_over_rows(
      row_slice(x, config_.patches, config_.patches + config_.task_tokens));
  return out;
}

}  // namespace c3ca

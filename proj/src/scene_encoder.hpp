#pragma once

#include <cstdint>
#include <vector>

#include "tensor.hpp"
#include "transformer.hpp"

namespace c3ca {

struct SceneEncoderConfig {
  int64_t layers = 4;
  int64_t heads = 4;
  int64_t dim = 128;  // D
  int64_t mlp_ratio = 4;
  int64_t task_tokens = 4;  // m_t
  int64_t patches = 64;     // M, fixes the positional table
  int64_t patch_dim = 64;   // D_p
};

struct SceneTokens {
  Tensor token_outputs;  // (M + m_t) x D
  Tensor f_enc;          // 1 x D, mean of the task-token output rows
};

// Sequence layout: patch tokens first, then task tokens. Task tokens,
// positional embeddings, and the D_p -> D adapter (present only when the
// widths differ) stay trainable; the transformer itself registers under
// "scene_backbone." and is frozen by the owning model.
class SceneEncoder {
 public:
  SceneEncoder(const SceneEncoderConfig& config, ParameterStore& store,
               Rng& rng);

  SceneTokens encode(const Tensor& patch_tokens) const;  // M x D_p in

  const SceneEncoderConfig& config() const { return config_; }

 private:
  SceneEncoderConfig config_;
  Tensor task_embed_;  // m_t x D_p; row j initialized to constant j
  bool has_adapter_ = false;
  Linear adapter_;
  Tensor pos_embed_;  // (M + m_t) x D
  std::vector<EncoderBlockParams> blocks_;
};

}  // namespace c3ca

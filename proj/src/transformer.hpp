#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"
#include "tensor.hpp"

namespace c3ca {

// Shared transformer building blocks. All blocks are pre-LN residual
// ("x + sublayer(norm(x))") with no trailing norm, so a zero-layer stack is
// the identity map.

struct Linear {
  Tensor w;  // in x out
  Tensor b;  // out
};

Tensor linear(const Tensor& x, const Linear& l);

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

Tensor apply_layer_norm(const Tensor& x, const LayerNormParams& p);

struct AttentionParams {
  Linear q, k, v, o;
  int64_t heads = 1;
};

// Scaled dot-product attention, per-head width D/heads, 1/sqrt(d_k)
// scaling. |queries| rows attend over |keys_values| rows under |mask|.
Tensor multi_head_attention(const Tensor& queries, const Tensor& keys_values,
                            const AttentionParams& p,
                            const AttentionMask* mask = nullptr);

struct MlpParams {
  Linear fc1, fc2;
};

Tensor mlp_forward(const Tensor& x, const MlpParams& p);

struct EncoderBlockParams {
  LayerNormParams ln1;
  AttentionParams attn;
  LayerNormParams ln2;
  MlpParams mlp;
};

Tensor encoder_block(const Tensor& x, const EncoderBlockParams& p,
                     const AttentionMask* mask = nullptr);

struct DecoderBlockParams {
  LayerNormParams ln1;
  AttentionParams self_attn;  // always causal
  LayerNormParams ln2;
  AttentionParams cross_attn;
  LayerNormParams ln3;
  MlpParams mlp;
};

Tensor decoder_block(const Tensor& x, const Tensor& memory,
                     const DecoderBlockParams& p,
                     const std::vector<char>* memory_valid = nullptr);

// Factories register every tensor under dotted names ("<name>.w", ...) and
// draw initial values from |rng| in a fixed order.
Linear make_linear(ParameterStore& store, const std::string& name, int64_t in,
                   int64_t out, Rng& rng);
LayerNormParams make_layer_norm(ParameterStore& store, const std::string& name,
                                int64_t dim);
AttentionParams make_attention(ParameterStore& store, const std::string& name,
                               int64_t dim, int64_t heads, Rng& rng);
MlpParams make_mlp(ParameterStore& store, const std::string& name, int64_t dim,
                   int64_t hidden, Rng& rng);
EncoderBlockParams make_encoder_block(ParameterStore& store,
                                      const std::string& name, int64_t dim,
                                      int64_t heads, int64_t mlp_ratio,
                                      Rng& rng);
DecoderBlockParams make_decoder_block(ParameterStore& store,
                                      const std::string& name, int64_t dim,
                                      int64_t heads, int64_t mlp_ratio,
                                      Rng& rng);
Tensor make_embedding(ParameterStore& store, const std::string& name,
                      int64_t rows, int64_t dim, Rng& rng, double stddev = 0.02);

}  // namespace c3ca

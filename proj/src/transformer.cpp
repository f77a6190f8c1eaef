#include "transformer.hpp"

#include <cmath>

namespace c3ca {

Tensor linear(const Tensor& x, const Linear& l) {
  return add(matmul(x, l.w), l.b);
}

Tensor apply_layer_norm(const Tensor& x, const LayerNormParams& p) {
  return layer_norm(x, p.gain, p.bias);
}

Tensor multi_head_attention(const Tensor& queries, const Tensor& keys_values,
                            const AttentionParams& p,
                            const AttentionMask* mask) {
  Tensor q = linear(queries, p.q);
  Tensor k = linear(keys_values, p.k);
  Tensor v = linear(keys_values, p.v);
  int64_t dim = q.cols();
  if (p.heads < 1 || dim % p.heads != 0) {
    fail_invalid("attention width must be divisible by head count");
  }
  if (k.cols() != dim || v.cols() != dim) {
    fail_invalid("attention projections disagree on width");
  }
  int64_t dk = dim / p.heads;
  double inv_scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<size_t>(p.heads));
  for (int64_t h = 0; h < p.heads; ++h) {
    Tensor qh = col_slice(q, h * dk, (h + 1) * dk);
    Tensor kh = col_slice(k, h * dk, (h + 1) * dk);
    Tensor vh = col_slice(v, h * dk, (h + 1) * dk);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_scale);
    Tensor probs = softmax_rows(scores, mask);
    heads.push_back(matmul(probs, vh));
  }
  Tensor ctx = p.heads == 1 ? heads[0] : concat_cols(heads);
  return linear(ctx, p.o);
}

Tensor mlp_forward(const Tensor& x, const MlpParams& p) {
  return linear(relu(linear(x, p.fc1)), p.fc2);
}

Tensor encoder_block(const Tensor& x, const EncoderBlockParams& p,
                     const AttentionMask* mask) {
  Tensor h = apply_layer_norm(x, p.ln1);
  Tensor y = add(x, multi_head_attention(h, h, p.attn, mask));
  return add(y, mlp_forward(apply_layer_norm(y, p.ln2), p.mlp));
}

Tensor decoder_block(const Tensor& x, const Tensor& memory,
                     const DecoderBlockParams& p,
                     const std::vector<char>* memory_valid) {
  AttentionMask causal{true, nullptr};
  Tensor h = apply_layer_norm(x, p.ln1);
  Tensor y = add(x, multi_head_attention(h, h, p.self_attn, &causal));
  AttentionMask mem_mask{false, memory_valid};
  Tensor z = add(y, multi_head_attention(apply_layer_norm(y, p.ln2), memory,
                                         p.cross_attn,
                                         memory_valid ? &mem_mask : nullptr));
  return add(z, mlp_forward(apply_layer_norm(z, p.ln3), p.mlp));
}

Linear make_linear(ParameterStore& store, const std::string& name, int64_t in,
                   int64_t out, Rng& rng) {
  std::vector<double> w(static_cast<size_t>(in * out));
  double stddev = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& v : w) v = rng.normal() * stddev;
  Linear l;
  l.w = store.add(name + ".w", Tensor::matrix(in, out, std::move(w), true))
            .tensor;
  l.b = store.add(name + ".b", Tensor::zeros({out}, true)).tensor;
  return l;
}

LayerNormParams make_layer_norm(ParameterStore& store, const std::string& name,
                                int64_t dim) {
  LayerNormParams p;
  p.gain = store.add(name + ".gain", Tensor::full({dim}, 1.0, true)).tensor;
  p.bias = store.add(name + ".bias", Tensor::zeros({dim}, true)).tensor;
  return p;
}

AttentionParams make_attention(ParameterStore& store, const std::string& name,
                               int64_t dim, int64_t heads, Rng& rng) {
  if (heads < 1 || dim % heads != 0) {
    fail_invalid("attention width must be divisible by head count");
  }
  AttentionParams p;
  p.q = make_linear(store, name + ".q", dim, dim, rng);
  p.k = make_linear(store, name + ".k", dim, dim, rng);
  p.v = make_linear(store, name + ".v", dim, dim, rng);
  p.o = make_linear(store, name + ".o", dim, dim, rng);
  p.heads = heads;
  return p;
}

MlpParams make_mlp(ParameterStore& store, const std::string& name, int64_t dim,
                   int64_t hidden, Rng& rng) {
  MlpParams p;
  p.fc1 = make_linear(store, name + ".fc1", dim, hidden, rng);
  p.fc2 = make_linear(store, name + ".fc2", hidden, dim, rng);
  return p;
}

EncoderBlockParams make_encoder_block(ParameterStore& store,
                                      const std::string& name, int64_t dim,
                                      int64_t heads, int64_t mlp_ratio,
                                      Rng& rng) {
  EncoderBlockParams p;
  p.ln1 = make_layer_norm(store, name + ".ln1", dim);
  p.attn = make_attention(store, name + ".attn", dim, heads, rng);
  p.ln2 = make_layer_norm(store, name + ".ln2", dim);
  p.mlp = make_mlp(store, name + ".mlp", dim, dim * mlp_ratio, rng);
  return p;
}

DecoderBlockParams make_decoder_block(ParameterStore& store,
                                      const std::string& name, int64_t dim,
                                      int64_t heads, int64_t mlp_ratio,
                                      Rng& rng) {
  DecoderBlockParams p;
  p.ln1 = make_layer_norm(store, name + ".ln1", dim);
  p.self_attn = make_attention(store, name + ".self_attn", dim, heads, rng);
  p.ln2 = make_layer_norm(store, name + ".ln2", dim);
  p.cross_attn = make_attention(store, name + ".cross_attn", dim, heads, rng);
  p.ln3 = make_layer_norm(store, name + ".ln3", dim);
  p.mlp = make_mlp(store, name + ".mlp", dim, dim * mlp_ratio, rng);
  return p;
}

Tensor make_embedding(ParameterStore& store, const std::string& name,
                      int64_t rows, int64_t dim, Rng& rng, double stddev) {
  std::vector<double> w(static_cast<size_t>(rows * dim));
  for (auto& v : w) v = rng.normal() * stddev;
  return store.add(name, Tensor::matrix(rows, dim, std::move(w), true)).tensor;
}

}  // namespace c3ca

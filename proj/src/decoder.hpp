#pragma once

#include <cstdint>
#include <vector>

#include "tensor.hpp"
#include "transformer.hpp"

namespace c3ca {

struct DecoderConfig {
  int64_t layers = 2;
  int64_t heads = 4;
  int64_t dim = 128;
  int64_t mlp_ratio = 4;
  int64_t max_decode_len = 32;
};

struct CaptionHypothesis {
  std::vector<int64_t> ids;  // emitted tokens, EOS last when finished
  double log_prob = 0.0;
  bool finished = false;
};

// Autoregressive caption decoder: causal self-attention interleaved with
// cross-attention over the full scene token sequence. Registers under
// "decoder.".
class CaptionDecoder {
 public:
  CaptionDecoder(const DecoderConfig& config, int64_t vocab_size,
                 ParameterStore& store, Rng& rng);

  // input_ids: teacher-forcing input (BOS first). Returns L x vocab logits;
  // row t scores the token following input_ids[t].
  Tensor forward(const std::vector<int64_t>& input_ids,
                 const Tensor& memory) const;

  // Sum of -log P(target | prefix) over rows where valid != 0.
  Tensor loss(const Tensor& logits, const std::vector<int64_t>& targets,
              const std::vector<char>* valid = nullptr) const;

  // Emitted ids (BOS excluded, EOS included when emitted). Greedy argmax,
  // ties to the lowest id.
  std::vector<int64_t> generate_greedy(const Tensor& memory,
                                       int64_t max_len) const;
  // Beam search; hypotheses ranked by log-prob during search and by
  // log-prob / length at the end. width = 1 reproduces greedy exactly.
  std::vector<int64_t> generate_beam(const Tensor& memory, int64_t width,
                                     int64_t max_len) const;

  const DecoderConfig& config() const { return config_; }
  int64_t vocab_size() const { return vocab_size_; }

 private:
  DecoderConfig config_;
  int64_t vocab_size_;
  Tensor tok_embed_;
  Tensor pos_embed_;
  std::vector<DecoderBlockParams> blocks_;
  Linear out_;
};

// L_Total = L_Con + lambda * L_Cap.
Tensor total_loss(const Tensor& l_con, const Tensor& l_cap, double lambda);

}  // namespace c3ca

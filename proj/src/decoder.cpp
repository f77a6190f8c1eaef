#include "decoder.hpp"

#include <algorithm>
#include <cmath>

#include "common.hpp"
#include "text.hpp"

namespace c3ca {

CaptionDecoder::CaptionDecoder(const DecoderConfig& config, int64_t vocab_size,
                               ParameterStore& store, Rng& rng)
    : config_(config), vocab_size_(vocab_size) {
  if (config.dim % config.heads != 0) {
    fail_invalid("decoder width must be divisible by head count");
  }
  tok_embed_ =
      make_embedding(store, "decoder.tok_embed", vocab_size, config.dim, rng);
  pos_embed_ = make_embedding(store, "decoder.pos_embed",
                              config.max_decode_len, config.dim, rng);
  for (int64_t i = 0; i < config.layers; ++i) {
    blocks_.push_back(make_decoder_block(store,
                                         "decoder.block" + std::to_string(i),
                                         config.dim, config.heads,
                                         config.mlp_ratio, rng));
  }
  out_ = make_linear(store, "decoder.out", config.dim, vocab_size, rng);
}

Tensor CaptionDecoder::forward(const std::vector<int64_t>& input_ids,
                               const Tensor& memory) const {
  if (input_ids.empty()) fail_invalid("decoder forward: empty input");
  if (static_cast<int64_t>(input_ids.size()) > config_.max_decode_len) {
    fail_invalid("decoder forward: input exceeds max_decode_len");
  }
  for (int64_t id : input_ids) {
    if (id < 0 || id >= vocab_size_) {
      fail_invalid("decoder forward: token id out of range");
    }
  }
  Tensor x = add(gather_rows(tok_embed_, input_ids),
                 row_slice(pos_embed_, 0, static_cast<int64_t>(input_ids.size())));
  for (const auto& block : blocks_) x = decoder_block(x, memory, block);
  return linear(x, out_);
}

Tensor CaptionDecoder::loss(const Tensor& logits,
                            const std::vector<int64_t>& targets,
                            const std::vector<char>* valid) const {
  return sequence_nll(logits, targets, valid);
}

namespace {

int64_t argmax_lowest(const Tensor& logits, int64_t row) {
  int64_t best = 0;
  double best_v = logits.at(row, 0);
  for (int64_t c = 1; c < logits.cols(); ++c) {
    double v = logits.at(row, c);
    if (v > best_v) {
      best_v = v;
      best = c;
    }
  }
  return best;
}

}  // namespace

std::vector<int64_t> CaptionDecoder::generate_greedy(const Tensor& memory,
                                                     int64_t max_len) const {
  if (max_len < 1 || max_len > config_.max_decode_len) {
    fail_invalid("generate: max_len out of range");
  }
  std::vector<int64_t> input{Vocabulary::kBos};
  std::vector<int64_t> emitted;
  while (static_cast<int64_t>(emitted.size()) < max_len) {
    Tensor logits = forward(input, memory);
    int64_t next = argmax_lowest(logits, logits.rows() - 1);
    emitted.push_back(next);
    if (next == Vocabulary::kEos) break;
    input.push_back(next);
  }
  return emitted;
}

std::vector<int64_t> CaptionDecoder::generate_beam(const Tensor& memory,
                                                   int64_t width,
                                                   int64_t max_len) const {
  if (width < 1) fail_invalid("generate: beam width must be positive");
  if (max_len < 1 || max_len > config_.max_decode_len) {
    fail_invalid("generate: max_len out of range");
  }
  std::vector<CaptionHypothesis> beam{CaptionHypothesis{}};
  for (int64_t step = 0; step < max_len; ++step) {
    bool any_open = false;
    std::vector<CaptionHypothesis> candidates;
    for (const auto& hyp : beam) {
      if (hyp.finished) {
        candidates.push_back(hyp);
        continue;
      }
      any_open = true;
      std::vector<int64_t> input{Vocabulary::kBos};
      input.insert(input.end(), hyp.ids.begin(), hyp.ids.end());
      Tensor logits = forward(input, memory);
      Tensor logp = log_softmax_rows(row_slice(logits, logits.rows() - 1,
                                               logits.rows()));
      for (int64_t tok = 0; tok < vocab_size_; ++tok) {
        CaptionHypothesis next = hyp;
        next.ids.push_back(tok);
        next.log_prob += logp.at(0, tok);
        next.finished = tok == Vocabulary::kEos ||
                        static_cast<int64_t>(next.ids.size()) >= max_len;
        candidates.push_back(std::move(next));
      }
    }
    if (!any_open) break;
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const CaptionHypothesis& a, const CaptionHypothesis& b) {
                       return a.log_prob > b.log_prob;
                     });
    if (static_cast<int64_t>(candidates.size()) > width) {
      candidates.resize(static_cast<size_t>(width));
    }
    beam = std::move(candidates);
  }
  // Final ranking by length-normalized log-probability.
  const CaptionHypothesis* best = nullptr;
  double best_score = 0.0;
  for (const auto& hyp : beam) {
    double score = hyp.log_prob / static_cast<double>(std::max<size_t>(1, hyp.ids.size()));
    if (!best || score > best_score) {
      best = &hyp;
      best_score = score;
    }
  }
  return best->ids;
}

Tensor total_loss(const Tensor& l_con, const Tensor& l_cap, double lambda) {
  if (lambda < 0.0) fail_invalid("total_loss: lambda must be non-negative");
  return add(l_con, scale(l_cap, lambda));
}

}  // namespace c3ca

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"
#include "transformer.hpp"

namespace c3ca {

// Id layout: specials 0..4, byte fallback 5..260 (byte b at 5+b), learned
// whole-word subwords from 261 in rank order. Byte fallback makes every
// string tokenizable; words are separated by the space byte id so
// detokenize(tokenize(s)) round-trips the normalized text.
class Vocabulary {
 public:
  static constexpr int64_t kPad = 0;
  static constexpr int64_t kBos = 1;
  static constexpr int64_t kEos = 2;
  static constexpr int64_t kCls = 3;
  static constexpr int64_t kUnk = 4;
  static constexpr int64_t kByteBase = 5;
  static constexpr int64_t kLearnedBase = kByteBase + 256;
  static constexpr int64_t kSpaceId = kByteBase + ' ';

  // Lowercased whitespace-split words ranked by (frequency desc, word asc);
  // the top max_size - 261 become subwords. max_size must cover specials
  // plus the byte table.
  static Vocabulary build(const std::vector<std::string>& corpus,
                          int64_t max_size);

  int64_t size() const { return kLearnedBase + static_cast<int64_t>(subwords_.size()); }
  const std::vector<std::string>& subwords() const { return subwords_; }
  int64_t find_subword(const std::string& w) const;

  // [CLS, BOS, content..., EOS]; greedy longest-match per word, byte
  // fallback for unmatched residue.
  std::vector<int64_t> tokenize(const std::string& text) const;
  // Inverse up to whitespace normalization; specials are stripped.
  std::string detokenize(const std::vector<int64_t>& ids) const;

  std::string to_json() const;
  static Vocabulary from_json(const std::string& json_text);

 private:
  std::vector<std::string> subwords_;
  std::unordered_map<std::string, int64_t> index_;
  void rebuild_index();
};

// Lowercase and split on whitespace.
std::vector<std::string> normalize_words(const std::string& text);
std::string normalize_text(const std::string& text);

struct TextEncoderConfig {
  int64_t layers = 4;
  int64_t heads = 4;
  int64_t dim = 128;
  int64_t mlp_ratio = 4;
  int64_t max_len = 64;
};

// CLIP-style bidirectional text tower pooled at the leading CLS position.
// All parameters register under "text_backbone." and are meant to be frozen
// by the owning model after construction.
class TextEncoder {
 public:
  TextEncoder(const TextEncoderConfig& config, int64_t vocab_size,
              ParameterStore& store, Rng& rng);

  // ids: one sequence, CLS first, PAD-right allowed. Returns the 1 x dim
  // CLS row; PAD keys are masked out of every attention.
  Tensor encode(const std::vector<int64_t>& ids) const;

  const TextEncoderConfig& config() const { return config_; }

 private:
  TextEncoderConfig config_;
  int64_t vocab_size_;
  Tensor tok_embed_;
  Tensor pos_embed_;
  std::vector<EncoderBlockParams> blocks_;
};

}  // namespace c3ca

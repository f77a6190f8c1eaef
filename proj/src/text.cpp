#include "text.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "common.hpp"
#include "json.hpp"

namespace c3ca {

std::vector<std::string> normalize_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(
          std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::string normalize_text(const std::string& text) {
  std::string out;
  for (const auto& w : normalize_words(text)) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

void Vocabulary::rebuild_index() {
  index_.clear();
  for (size_t i = 0; i < subwords_.size(); ++i) {
    index_[subwords_[i]] = kLearnedBase + static_cast<int64_t>(i);
  }
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus,
                             int64_t max_size) {
  if (max_size < kLearnedBase) {
    fail_invalid("vocabulary max_size must cover specials plus byte table");
  }
  if (corpus.empty()) fail_invalid("vocabulary corpus is empty");
  std::map<std::string, int64_t> freq;
  for (const auto& doc : corpus) {
    for (const auto& w : normalize_words(doc)) ++freq[w];
  }
  std::vector<std::pair<std::string, int64_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  int64_t budget = max_size - kLearnedBase;
  for (const auto& [word, count] : ranked) {
    if (static_cast<int64_t>(v.subwords_.size()) >= budget) break;
    (void)count;
    v.subwords_.push_back(word);
  }
  v.rebuild_index();
  return v;
}

int64_t Vocabulary::find_subword(const std::string& w) const {
  auto it = index_.find(w);
  return it == index_.end() ? -1 : it->second;
}

std::vector<int64_t> Vocabulary::tokenize(const std::string& text) const {
  std::vector<int64_t> ids{kCls, kBos};
  bool first = true;
  for (const auto& word : normalize_words(text)) {
    if (!first) ids.push_back(kSpaceId);
    first = false;
    size_t pos = 0;
    while (pos < word.size()) {
      int64_t best = -1;
      size_t best_len = 0;
      // Greedy longest learned-subword match at pos.
      for (size_t len = word.size() - pos; len >= 1; --len) {
        auto it = index_.find(word.substr(pos, len));
        if (it != index_.end()) {
          best = it->second;
          best_len = len;
          break;
        }
      }
      if (best >= 0) {
        ids.push_back(best);
        pos += best_len;
      } else {
        ids.push_back(kByteBase +
                      static_cast<unsigned char>(word[pos]));
        ++pos;
      }
    }
  }
  ids.push_back(kEos);
  return ids;
}

std::string Vocabulary::detokenize(const std::vector<int64_t>& ids) const {
  std::string out;
  for (int64_t id : ids) {
    if (id < 0 || id >= size()) {
      fail_invalid("detokenize: id out of range: " + std::to_string(id));
    }
    if (id < kByteBase) continue;  // specials
    if (id < kLearnedBase) {
      out.push_back(static_cast<char>(id - kByteBase));
    } else {
      out += subwords_[static_cast<size_t>(id - kLearnedBase)];
    }
  }
  return out;
}

std::string Vocabulary::to_json() const {
  nlohmann::json j{
      {"specials",
       {{"PAD", kPad}, {"BOS", kBos}, {"EOS", kEos}, {"CLS", kCls}, {"UNK", kUnk}}},
      {"subwords", subwords_}};
  return j.dump(2);
}

Vocabulary Vocabulary::from_json(const std::string& json_text) {
  try {
    auto j = nlohmann::json::parse(json_text);
    Vocabulary v;
    for (const auto& s : j.at("subwords")) {
      v.subwords_.push_back(s.get<std::string>());
    }
    v.rebuild_index();
    return v;
  } catch (const nlohmann::json::exception& e) {
    fail_io(std::string("malformed vocabulary file: ") + e.what());
  }
}

TextEncoder::TextEncoder(const TextEncoderConfig& config, int64_t vocab_size,
                         ParameterStore& store, Rng& rng)
    : config_(config), vocab_size_(vocab_size) {
  if (config.dim % config.heads != 0) {
    fail_invalid("text encoder width must be divisible by head count");
  }
  tok_embed_ = make_embedding(store, "text_backbone.tok_embed", vocab_size,
                              config.dim, rng);
  pos_embed_ = make_embedding(store, "text_backbone.pos_embed", config.max_len,
                              config.dim, rng);
  for (int64_t i = 0; i < config.layers; ++i) {
    blocks_.push_back(make_encoder_block(store,
                                         "text_backbone.block" + std::to_string(i),
                                         config.dim, config.heads,
                                         config.mlp_ratio, rng));
  }
}

Tensor TextEncoder::encode(const std::vector<int64_t>& ids) const {
  if (ids.empty()) fail_invalid("text encode: empty sequence");
  if (static_cast<int64_t>(ids.size()) > config_.max_len) {
    fail_invalid("text encode: sequence longer than max_len");
  }
  for (int64_t id : ids) {
    if (id < 0 || id >= vocab_size_) {
      fail_invalid("text encode: token id out of range");
    }
  }
  Tensor x = add(gather_rows(tok_embed_, ids),
                 row_slice(pos_embed_, 0, static_cast<int64_t>(ids.size())));
  std::vector<char> key_valid(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) {
    key_valid[i] = ids[i] != Vocabulary::kPad ? 1 : 0;
  }
  AttentionMask mask{false, &key_valid};
  for (const auto& block : blocks_) x = encoder_block(x, block, &mask);
  return row_slice(x, 0, 1);
}

}  // namespace c3ca

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <string>

#include "common.hpp"
#include "doctest.h"
#include "text.hpp"

using namespace c3ca;

TEST_CASE("vocab ranks by frequency then lexicographically") {
  auto v = Vocabulary::build({"a a b"}, 512);
  REQUIRE(v.subwords().size() == 2);
  CHECK(v.subwords()[0] == "a");
  CHECK(v.subwords()[1] == "b");
  CHECK(v.find_subword("a") == Vocabulary::kLearnedBase);

  auto tie = Vocabulary::build({"pear apple pear apple"}, 512);
  CHECK(tie.subwords()[0] == "apple");

  auto empty_doc = Vocabulary::build({"", "x"}, 512);
  CHECK(empty_doc.subwords().size() == 1);

  CHECK_THROWS_AS(Vocabulary::build({"a"}, 100), Error);
  CHECK_THROWS_AS(Vocabulary::build({}, 512), Error);
}

TEST_CASE("vocab hand frequency oracle") {
  std::vector<std::string> corpus{
      "the red box is left of the blue sphere",
      "the blue sphere is right of the red box",
      "a green cylinder",
  };
  // the:4 is:2 box:2 blue:2 of:2 red:2 sphere:2 a:1 cylinder:1 green:1 left:1 right:1
  auto v = Vocabulary::build(corpus, Vocabulary::kLearnedBase + 6);
  std::vector<std::string> expect{"the", "blue", "box", "is", "of", "red"};
  CHECK(v.subwords() == expect);
  CHECK(v.size() == Vocabulary::kLearnedBase + 6);
}

TEST_CASE("tokenize basics") {
  auto v = Vocabulary::build({"chair table chair"}, 512);
  auto one = v.tokenize("chair");
  REQUIRE(one.size() == 4);
  CHECK(one[0] == Vocabulary::kCls);
  CHECK(one[1] == Vocabulary::kBos);
  CHECK(one[2] == v.find_subword("chair"));
  CHECK(one[3] == Vocabulary::kEos);

  auto empty = v.tokenize("");
  CHECK(empty == std::vector<int64_t>{Vocabulary::kCls, Vocabulary::kBos,
                                      Vocabulary::kEos});

  // No subword overlaps "zxq" -> three byte-fallback ids.
  auto oov = v.tokenize("zxq");
  REQUIRE(oov.size() == 6);
  CHECK(oov[2] == Vocabulary::kByteBase + 'z');
  CHECK(oov[3] == Vocabulary::kByteBase + 'x');
  CHECK(oov[4] == Vocabulary::kByteBase + 'q');

  // Words are separated by the space byte id.
  auto two = v.tokenize("chair table");
  CHECK(two == std::vector<int64_t>{Vocabulary::kCls, Vocabulary::kBos,
                                    v.find_subword("chair"),
                                    Vocabulary::kSpaceId,
                                    v.find_subword("table"),
                                    Vocabulary::kEos});
}

TEST_CASE("tokenize prefers the longest match") {
  auto v = Vocabulary::build({"box boxes es"}, 512);
  // "boxes" itself is in the vocabulary: one id.
  auto ids = v.tokenize("boxes");
  CHECK(ids.size() == 4);
  // "boxed" is not: longest prefix "box", then byte 'e', byte 'd'.
  auto ids2 = v.tokenize("boxed");
  REQUIRE(ids2.size() == 6);
  CHECK(ids2[2] == v.find_subword("box"));
  CHECK(ids2[3] == Vocabulary::kByteBase + 'e');
  CHECK(ids2[4] == Vocabulary::kByteBase + 'd');
}

TEST_CASE("detokenize inverts tokenize") {
  std::vector<std::string> corpus{"the red box is left of the blue sphere",
                                  "a tall green cylinder next to the box"};
  auto v = Vocabulary::build(corpus, 300);  // tiny learned budget
  for (const auto& s : corpus) {
    CHECK(v.detokenize(v.tokenize(s)) == normalize_text(s));
  }
  CHECK(v.detokenize(v.tokenize("MiXeD CaSe UnSeEn-WORDS!")) ==
        "mixed case unseen-words!");
  CHECK(v.detokenize({Vocabulary::kCls, Vocabulary::kBos, Vocabulary::kEos}) ==
        "");
  CHECK_THROWS_AS(v.detokenize({v.size()}), Error);
  CHECK_THROWS_AS(v.detokenize({-1}), Error);
}

TEST_CASE("detokenize round trips random word soup") {
  auto v = Vocabulary::build({"alpha beta gamma delta"}, 512);
  Rng rng(77);
  const std::string glyphs = "abcdefghijklmnopqrstuvwxyz0123456789-'";
  for (int trial = 0; trial < 25; ++trial) {
    std::string s;
    int words = 1 + static_cast<int>(rng.below(5));
    for (int w = 0; w < words; ++w) {
      if (w) s.push_back(' ');
      int len = 1 + static_cast<int>(rng.below(9));
      for (int i = 0; i < len; ++i) {
        s.push_back(glyphs[rng.below(glyphs.size())]);
      }
    }
    CHECK(v.detokenize(v.tokenize(s)) == s);
  }
}

TEST_CASE("vocab json round trip") {
  auto v = Vocabulary::build({"red box blue box"}, 512);
  auto v2 = Vocabulary::from_json(v.to_json());
  CHECK(v2.subwords() == v.subwords());
  CHECK(v2.size() == v.size());
  CHECK(v2.tokenize("red box") == v.tokenize("red box"));
  CHECK_THROWS_AS(Vocabulary::from_json("{"), Error);
}

TEST_CASE("zero-layer text encoder is embedding plus position") {
  TextEncoderConfig cfg;
  cfg.layers = 0;
  cfg.heads = 1;
  cfg.dim = 4;
  cfg.max_len = 8;
  ParameterStore store;
  Rng rng(5);
  TextEncoder enc(cfg, 300, store, rng);
  std::vector<int64_t> ids{Vocabulary::kCls, Vocabulary::kBos, Vocabulary::kEos};
  Tensor f = enc.encode(ids);
  const auto& tok = store.at("text_backbone.tok_embed").tensor;
  const auto& pos = store.at("text_backbone.pos_embed").tensor;
  for (int64_t c = 0; c < 4; ++c) {
    CHECK(f.at(0, c) == tok.at(Vocabulary::kCls, c) + pos.at(0, c));
  }
}

TEST_CASE("one-layer hand-weight text encoder oracle") {
  TextEncoderConfig cfg;
  cfg.layers = 1;
  cfg.heads = 1;
  cfg.dim = 2;
  cfg.mlp_ratio = 1;
  cfg.max_len = 4;
  ParameterStore store;
  Rng rng(9);
  TextEncoder enc(cfg, 5, store, rng);
  // Every row gets the form (a, -a) with a > 0, so each layer norm emits
  // (1, -1), attention is uniform, and one block adds (1, -1) then (1, 0).
  auto set = [&](const std::string& name, std::vector<double> vals) {
    auto& t = store.at(name).tensor;
    REQUIRE(t.data().size() == vals.size());
    t.mutable_data() = vals;
  };
  set("text_backbone.tok_embed",
      {0, 0, 1, -1, 0, 0, 2, -2, 0, 0});           // BOS=(1,-1) EOS=(0,0) CLS=(2,-2)
  set("text_backbone.pos_embed", {1, -1, 2, -2, 3, -3, 4, -4});
  for (const char* lin : {"attn.q", "attn.k", "attn.v", "attn.o", "mlp.fc1",
                          "mlp.fc2"}) {
    set(std::string("text_backbone.block0.") + lin + ".w", {1, 0, 0, 1});
  }
  std::vector<int64_t> ids{Vocabulary::kCls, Vocabulary::kBos, Vocabulary::kEos};
  // Every input row is (3,-3): layer norm gives (s,-s), attention is
  // exactly uniform, the residuals add (s,-s) then relu'd (t, 0).
  Tensor f = enc.encode(ids);
  double s = 3.0 / std::sqrt(9.0 + 1e-5);
  double b = 3.0 + s;
  double t = b / std::sqrt(b * b + 1e-5);
  CHECK(f.at(0, 0) == doctest::Approx(b + t).epsilon(1e-9));
  CHECK(f.at(0, 1) == doctest::Approx(-b).epsilon(1e-9));
}

TEST_CASE("padding never changes the pooled feature") {
  TextEncoderConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.dim = 8;
  cfg.max_len = 12;
  ParameterStore store;
  Rng rng(21);
  TextEncoder enc(cfg, 300, store, rng);
  std::vector<int64_t> ids{Vocabulary::kCls, Vocabulary::kBos, 270, 271,
                           Vocabulary::kEos};
  Tensor base = enc.encode(ids);
  std::vector<int64_t> padded = ids;
  padded.insert(padded.end(), 5, Vocabulary::kPad);
  Tensor with_pad = enc.encode(padded);
  for (int64_t c = 0; c < 8; ++c) {
    CHECK(base.at(0, c) == with_pad.at(0, c));  // bit-identical
  }

  std::vector<int64_t> overlong(13, Vocabulary::kPad);
  overlong[0] = Vocabulary::kCls;
  CHECK_THROWS_AS(enc.encode(overlong), Error);
  CHECK_THROWS_AS(enc.encode({Vocabulary::kCls, 900}), Error);
}

TEST_CASE("identical sequences produce identical features") {
  TextEncoderConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.dim = 8;
  cfg.max_len = 8;
  ParameterStore store;
  Rng rng(33);
  TextEncoder enc(cfg, 300, store, rng);
  auto v = Vocabulary::build({"red box"}, 300);
  auto ids = v.tokenize("red box");
  Tensor a = enc.encode(ids);
  Tensor b = enc.encode(ids);
  for (int64_t c = 0; c < 8; ++c) CHECK(a.at(0, c) == b.at(0, c));
}

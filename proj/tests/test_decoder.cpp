#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "decoder.hpp"
#include "doctest.h"
#include "test_util.hpp"
#include "text.hpp"

using namespace c3ca;

namespace {

struct Toy {
  ParameterStore store;
  CaptionDecoder* dec = nullptr;
  Tensor memory;
  ~Toy() { delete dec; }
};

// Small random decoder over a random memory.
void make_toy(Toy& toy, int64_t vocab, int64_t dim, int64_t layers,
              uint64_t seed, int64_t mem_rows = 3, int64_t max_len = 8) {
  DecoderConfig cfg;
  cfg.layers = layers;
  cfg.heads = 2;
  cfg.dim = dim;
  cfg.mlp_ratio = 2;
  cfg.max_decode_len = max_len;
  Rng rng(seed);
  toy.dec = new CaptionDecoder(cfg, vocab, toy.store, rng);
  std::vector<double> mem(static_cast<size_t>(mem_rows * dim));
  for (auto& v : mem) v = rng.uniform(-1.0, 1.0);
  toy.memory = Tensor::matrix(mem_rows, dim, std::move(mem));
}

}  // namespace

TEST_CASE("decoder causality") {
  Toy toy;
  make_toy(toy, 12, 8, 2, 101);
  std::vector<int64_t> a{Vocabulary::kBos, 5, 7, 9};
  std::vector<int64_t> b{Vocabulary::kBos, 5, 7, 11};
  Tensor la = toy.dec->forward(a, toy.memory);
  Tensor lb = toy.dec->forward(b, toy.memory);
  for (int64_t t = 0; t < 3; ++t) {
    for (int64_t v = 0; v < 12; ++v) {
      CHECK(la.at(t, v) == lb.at(t, v));  // bit-identical rows before the edit
    }
  }
}

TEST_CASE("zero cross-attention value projection ablates the scene") {
  Toy toy;
  make_toy(toy, 10, 8, 2, 55);
  for (int i = 0; i < 2; ++i) {
    auto base = "decoder.block" + std::to_string(i) + ".cross_attn.v";
    toy.store.at(base + ".w").tensor.mutable_data().assign(64, 0.0);
    toy.store.at(base + ".b").tensor.mutable_data().assign(8, 0.0);
  }
  std::vector<int64_t> ids{Vocabulary::kBos, 3, 4};
  Tensor l1 = toy.dec->forward(ids, toy.memory);
  Tensor other = Tensor::matrix(3, 8,
                                {1, 2, 3, 4, 5, 6, 7, 8, -1, -2, -3, -4, -5,
                                 -6, -7, -8, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5,
                                 0.5});
  Tensor l2 = toy.dec->forward(ids, other);
  for (int64_t t = 0; t < 3; ++t) {
    for (int64_t v = 0; v < 10; ++v) CHECK(l1.at(t, v) == l2.at(t, v));
  }
}

TEST_CASE("one-layer hand-weight decoder oracle") {
  DecoderConfig cfg;
  cfg.layers = 1;
  cfg.heads = 1;
  cfg.dim = 2;
  cfg.mlp_ratio = 1;
  cfg.max_decode_len = 4;
  ParameterStore store;
  Rng rng(5);
  CaptionDecoder dec(cfg, 3, store, rng);
  auto set = [&](const std::string& name, std::vector<double> vals) {
    auto& t = store.at(name).tensor;
    REQUIRE(t.data().size() == vals.size());
    t.mutable_data() = vals;
  };
  // Rows keep the (a,-a) / same-|a| structure so norms are predictable.
  set("decoder.tok_embed", {2, -2, 1, -1, 0, 0});  // ids 0,1,2
  set("decoder.pos_embed", {2, -2, 1, -1, 0, 0, 0, 0});
  for (const char* lin :
       {"self_attn.q", "self_attn.k", "self_attn.v", "self_attn.o",
        "cross_attn.q", "cross_attn.k", "cross_attn.v", "cross_attn.o",
        "mlp.fc1", "mlp.fc2"}) {
    set(std::string("decoder.block0.") + lin + ".w", {1, 0, 0, 1});
  }
  set("decoder.out.w", {1, 0, 0, 0, 1, 0});
  // Memory: single row (4,-4) -> cross attention adds exactly (4,-4).
  Tensor memory = Tensor::matrix(1, 2, {4, -4});
  // Input rows: BOS=(1,-1)+(2,-2)=(3,-3); id0=(2,-2)+(1,-1)=(3,-3).
  Tensor logits = dec.forward({Vocabulary::kBos, 0}, memory);

  double s = 3.0 / std::sqrt(9.0 + 1e-5);    // ln1 scale of (3,-3)
  // Row 0: self-attn sees only itself -> adds (s,-s); cross adds (4,-4);
  // mlp adds (t,0) with t from the ln3 row (7+s, -(7+s)).
  double b0 = 7.0 + s;
  double t0 = b0 / std::sqrt(b0 * b0 + 1e-5);
  CHECK(logits.at(0, 0) == doctest::Approx(b0 + t0).epsilon(1e-9));
  CHECK(logits.at(0, 1) == doctest::Approx(-b0).epsilon(1e-9));
  CHECK(logits.at(0, 2) == doctest::Approx(0.0).epsilon(1e-9));
  // Row 1: both prefix rows are (3,-3) -> identical keys, uniform attention,
  // same arithmetic as row 0.
  CHECK(logits.at(1, 0) == doctest::Approx(b0 + t0).epsilon(1e-9));
  CHECK(logits.at(1, 1) == doctest::Approx(-b0).epsilon(1e-9));
}

TEST_CASE("caption loss closed forms") {
  Toy toy;
  make_toy(toy, 3, 8, 1, 77);
  // Near-one-hot: huge margin -> loss ~ 0.
  Tensor sharp = Tensor::matrix(2, 3, {1000, 0, 0, 0, 0, 1000});
  CHECK(toy.dec->loss(sharp, {0, 2}).item() == doctest::Approx(0.0).epsilon(1e-12));

  Tensor uniform = Tensor::zeros({4, 3});
  CHECK(toy.dec->loss(uniform, {0, 1, 2, 0}).item() ==
        doctest::Approx(4.0 * std::log(3.0)).epsilon(1e-12));

  Tensor hand = Tensor::matrix(2, 3, {1, 0, 0, 0, 2, 1});
  double lse0 = std::log(std::exp(1.0) + 2.0);
  double lse1 = std::log(1.0 + std::exp(2.0) + std::exp(1.0));
  CHECK(toy.dec->loss(hand, {0, 2}).item() ==
        doctest::Approx((lse0 - 1.0) + (lse1 - 1.0)).epsilon(1e-12));

  std::vector<char> valid{1, 0};
  CHECK(toy.dec->loss(hand, {0, 2}, &valid).item() ==
        doctest::Approx(lse0 - 1.0).epsilon(1e-12));
}

TEST_CASE("total loss arithmetic") {
  Tensor lcon = Tensor::scalar(0.3);
  Tensor lcap = Tensor::scalar(2.0);
  CHECK(total_loss(lcon, lcap, 0.5).item() == doctest::Approx(1.3).epsilon(1e-15));
  CHECK(total_loss(lcon, lcap, 0.0).item() == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(total_loss(lcon, lcap, 1.0).item() == doctest::Approx(2.3).epsilon(1e-15));
  CHECK_THROWS_AS(total_loss(lcon, lcap, -0.1), Error);
}

TEST_CASE("greedy ties break to the lowest id and EOS stops decoding") {
  Toy toy;
  make_toy(toy, 6, 8, 1, 13);
  // All-zero output layer -> all logits tie -> always emit id 0 (PAD),
  // never EOS, so generation runs to max_len.
  toy.store.at("decoder.out.w").tensor.mutable_data().assign(48, 0.0);
  toy.store.at("decoder.out.b").tensor.mutable_data().assign(6, 0.0);
  auto ids = toy.dec->generate_greedy(toy.memory, 5);
  CHECK(ids == std::vector<int64_t>(5, 0));

  // Huge EOS bias -> immediate EOS -> empty caption.
  auto& bias = toy.store.at("decoder.out.b").tensor.mutable_data();
  bias[Vocabulary::kEos] = 50.0;
  auto eos = toy.dec->generate_greedy(toy.memory, 5);
  CHECK(eos == std::vector<int64_t>{Vocabulary::kEos});

  CHECK_THROWS_AS(toy.dec->generate_greedy(toy.memory, 0), Error);
  CHECK_THROWS_AS(toy.dec->generate_beam(toy.memory, 0, 5), Error);
}

TEST_CASE("beam width one equals greedy") {
  for (uint64_t seed : {1u, 2u, 3u}) {
    Toy toy;
    make_toy(toy, 9, 8, 2, seed);
    CHECK(toy.dec->generate_beam(toy.memory, 1, 6) ==
          toy.dec->generate_greedy(toy.memory, 6));
  }
}

TEST_CASE("exhaustive beam matches sequence enumeration") {
  Toy toy;
  int64_t vocab = 4, max_len = 3;
  make_toy(toy, vocab, 8, 1, 4242, 2, 8);

  // Enumerate every decode path: emit tokens until EOS or max_len, score
  // by sum of per-step log-softmax, rank by score / length.
  std::vector<int64_t> best_ids;
  double best_score = -1e300;
  struct Node {
    std::vector<int64_t> ids;
    double logp;
  };
  std::vector<Node> frontier{{{}, 0.0}};
  for (int64_t step = 0; step < max_len; ++step) {
    std::vector<Node> next;
    for (const auto& node : frontier) {
      std::vector<int64_t> input{Vocabulary::kBos};
      input.insert(input.end(), node.ids.begin(), node.ids.end());
      Tensor logits = toy.dec->forward(input, toy.memory);
      Tensor lp = log_softmax_rows(
          row_slice(logits, logits.rows() - 1, logits.rows()));
      for (int64_t tok = 0; tok < vocab; ++tok) {
        Node child{node.ids, node.logp + lp.at(0, tok)};
        child.ids.push_back(tok);
        bool finished = tok == Vocabulary::kEos ||
                        static_cast<int64_t>(child.ids.size()) >= max_len;
        if (finished) {
          double score =
              child.logp / static_cast<double>(child.ids.size());
          if (score > best_score) {
            best_score = score;
            best_ids = child.ids;
          }
        } else {
          next.push_back(std::move(child));
        }
      }
    }
    frontier = std::move(next);
  }

  // Width >= vocab^max_len never prunes, so beam search is exhaustive.
  auto beam = toy.dec->generate_beam(toy.memory, 64, max_len);
  CHECK(beam == best_ids);
}

TEST_CASE("decoder gradients pass finite differences") {
  DecoderConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.dim = 4;
  cfg.mlp_ratio = 2;
  cfg.max_decode_len = 6;
  ParameterStore store;
  Rng rng(321);
  CaptionDecoder dec(cfg, 7, store, rng);
  std::vector<Tensor> leaves;
  for (size_t i = 0; i < store.count(); ++i) leaves.push_back(store[i].tensor);
  std::vector<double> mem(3 * 4);
  for (auto& v : mem) v = rng.uniform(-1.0, 1.0);
  Tensor memory = Tensor::matrix(3, 4, mem, true);
  leaves.push_back(memory);
  std::vector<int64_t> input{Vocabulary::kBos, 5, 6};
  std::vector<int64_t> targets{5, 6, Vocabulary::kEos};
  auto build = [&](const std::vector<Tensor>&) {
    return dec.loss(dec.forward(input, memory), targets);
  };
  CHECK(testutil::max_grad_rel_err(build, leaves) <= 1e-4);
}

TEST_CASE("decoder rejects bad inputs") {
  Toy toy;
  make_toy(toy, 8, 8, 1, 2, 3, 4);
  CHECK_THROWS_AS(toy.dec->forward({}, toy.memory), Error);
  CHECK_THROWS_AS(toy.dec->forward({1, 2, 3, 4, 5}, toy.memory), Error);
  CHECK_THROWS_AS(toy.dec->forward({1, 99}, toy.memory), Error);
  CHECK_THROWS_AS(toy.dec->generate_greedy(toy.memory, 40), Error);
}

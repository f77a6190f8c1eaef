#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "model.hpp"
#include "synth.hpp"
#include "test_util.hpp"

using namespace c3ca;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "c3ca_model_test";
  fs::create_directories(dir);
  return dir;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.patches = 4;
  c.neighbors = 4;
  c.patch_dim = 8;
  c.patch_hidden = 8;
  c.point_features = 4;
  c.dim = 8;
  c.mlp_ratio = 2;
  c.scene_layers = 1;
  c.scene_heads = 2;
  c.task_tokens = 2;
  c.text_layers = 1;
  c.text_heads = 2;
  c.max_text_len = 16;
  c.embed_dim = 8;
  c.decoder_layers = 1;
  c.decoder_heads = 2;
  c.max_decode_len = 8;
  c.vocab_max_size = 300;
  return c;
}

Vocabulary tiny_vocab() {
  return Vocabulary::build({"a red box", "a blue sphere", "the box is left"},
                           300);
}

PointCloud tiny_cloud(uint64_t seed, int64_t n = 32) {
  Rng rng(seed);
  PointCloud cloud;
  cloud.n_points = n;
  cloud.n_features = 4;
  for (int64_t i = 0; i < n * 7; ++i) {
    cloud.data.push_back(rng.uniform(-1.0, 1.0));
  }
  return cloud;
}

}  // namespace

TEST_CASE("model config json round trip and defaults") {
  ModelConfig defaults;
  ModelConfig parsed = model_config_from_json(json::object());
  CHECK(parsed.patches == defaults.patches);
  CHECK(parsed.dim == defaults.dim);
  CHECK(parsed.init_temperature == doctest::Approx(0.07));
  CHECK(parsed.use_box_head == defaults.use_box_head);

  ModelConfig c = tiny_config();
  c.use_box_head = true;
  c.init_temperature = 0.5;
  ModelConfig back = model_config_from_json(model_config_to_json(c));
  CHECK(back.patches == c.patches);
  CHECK(back.neighbors == c.neighbors);
  CHECK(back.patch_dim == c.patch_dim);
  CHECK(back.patch_hidden == c.patch_hidden);
  CHECK(back.point_features == c.point_features);
  CHECK(back.dim == c.dim);
  CHECK(back.mlp_ratio == c.mlp_ratio);
  CHECK(back.scene_layers == c.scene_layers);
  CHECK(back.scene_heads == c.scene_heads);
  CHECK(back.task_tokens == c.task_tokens);
  CHECK(back.text_layers == c.text_layers);
  CHECK(back.text_heads == c.text_heads);
  CHECK(back.max_text_len == c.max_text_len);
  CHECK(back.embed_dim == c.embed_dim);
  CHECK(back.decoder_layers == c.decoder_layers);
  CHECK(back.decoder_heads == c.decoder_heads);
  CHECK(back.max_decode_len == c.max_decode_len);
  CHECK(back.beam_width == c.beam_width);
  CHECK(back.init_temperature == doctest::Approx(c.init_temperature));
  CHECK(back.vocab_max_size == c.vocab_max_size);
  CHECK(back.use_box_head == c.use_box_head);
}

TEST_CASE("model config json is strict") {
  CHECK_THROWS_AS(model_config_from_json(json{{"paches", 4}}), Error);
  CHECK_THROWS_AS(model_config_from_json(json{{"patches", "four"}}), Error);
  CHECK_THROWS_AS(model_config_from_json(json{{"patches", 4.5}}), Error);
  CHECK_THROWS_AS(model_config_from_json(json{{"use_box_head", 1}}), Error);
  CHECK_THROWS_AS(model_config_from_json(json::array()), Error);
}

TEST_CASE("model config validation rejects bad values") {
  auto broken = [](auto mutate) {
    ModelConfig c = tiny_config();
    mutate(c);
    CHECK_THROWS_AS(validate_model_config(c), Error);
  };
  broken([](ModelConfig& c) { c.patches = 0; });
  broken([](ModelConfig& c) { c.neighbors = -1; });
  broken([](ModelConfig& c) { c.point_features = -1; });
  broken([](ModelConfig& c) { c.dim = 9; });  // not divisible by heads
  broken([](ModelConfig& c) { c.decoder_heads = 3; });
  broken([](ModelConfig& c) { c.max_decode_len = 1; });
  broken([](ModelConfig& c) { c.vocab_max_size = 260; });
  broken([](ModelConfig& c) { c.init_temperature = 0.001; });
  broken([](ModelConfig& c) { c.init_temperature = 101.0; });
  broken([](ModelConfig& c) { c.beam_width = 0; });
}

TEST_CASE("model registers all groups and freezes the backbones") {
  ModelConfig cfg = tiny_config();
  cfg.patch_dim = 4;  // forces the scene adapter
  cfg.use_box_head = true;
  C3caModel model(cfg, tiny_vocab(), 7);
  ParameterStore& store = model.store();

  for (const char* name :
       {"tokenizer_mlp.w1", "tokenizer_mlp.b1", "tokenizer_mlp.w2",
        "tokenizer_mlp.b2", "task_tokens.embeddings", "scene_adapter.w",
        "scene_pos.embeddings", "text_backbone.tok_embed",
        "text_backbone.pos_embed", "proj_v.fc1.w", "proj_t.fc2.b",
        "contrastive.log_temperature", "decoder.tok_embed", "decoder.out.w",
        "box_head.fc1.w", "box_head.fc2.b"}) {
    CAPTURE(name);
    CHECK(store.find(name) != nullptr);
  }

  size_t frozen = 0;
  for (size_t i = 0; i < store.count(); ++i) {
    const Parameter& p = store[i];
    bool backbone = p.name.rfind("scene_backbone.", 0) == 0 ||
                    p.name.rfind("text_backbone.", 0) == 0;
    CAPTURE(p.name);
    CHECK(p.frozen == backbone);
    frozen += p.frozen ? 1 : 0;
  }
  CHECK(frozen > 0);

  CHECK(model.log_temperature().item() ==
        doctest::Approx(std::log(0.07)).epsilon(1e-12));
  CHECK(model.temperature() == doctest::Approx(0.07).epsilon(1e-12));
}

TEST_CASE("model init is deterministic in the seed") {
  auto payload = [](uint64_t seed) {
    C3caModel model(tiny_config(), tiny_vocab(), seed);
    std::vector<double> all;
    for (size_t i = 0; i < model.store().count(); ++i) {
      const auto& d = model.store()[i].tensor.data();
      all.insert(all.end(), d.begin(), d.end());
    }
    return all;
  };
  CHECK(payload(3) == payload(3));
  CHECK(payload(3) != payload(4));
}

TEST_CASE("encode_scene produces tokens and unit alignment rows") {
  C3caModel model(tiny_config(), tiny_vocab(), 11);
  PointCloud cloud = tiny_cloud(1);
  SceneTokens scene = model.encode_scene(cloud);
  CHECK(scene.token_outputs.rows() == 4 + 2);
  CHECK(scene.token_outputs.cols() == 8);
  CHECK(scene.f_enc.rows() == 1);
  CHECK(scene.f_enc.cols() == 8);

  Tensor v = model.scene_alignment(scene);
  CHECK(v.rows() == 1);
  CHECK(v.cols() == 8);
  double norm = 0.0;
  for (int64_t c = 0; c < v.cols(); ++c) norm += v.at(0, c) * v.at(0, c);
  CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));

  Tensor t = model.text_alignment(model.tokenize_caption("a red box"));
  CHECK(t.rows() == 1);
  CHECK(t.cols() == 8);
  norm = 0.0;
  for (int64_t c = 0; c < t.cols(); ++c) norm += t.at(0, c) * t.at(0, c);
  CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("encode_scene validates the cloud") {
  C3caModel model(tiny_config(), tiny_vocab(), 11);
  PointCloud wrong_width = tiny_cloud(1);
  wrong_width.n_features = 3;
  wrong_width.data.resize(static_cast<size_t>(wrong_width.n_points) * 6);
  CHECK_THROWS_AS(model.encode_scene(wrong_width), Error);

  PointCloud too_small = tiny_cloud(1, 3);  // fewer points than patches
  CHECK_THROWS_AS(model.encode_scene(too_small), Error);
}

TEST_CASE("decoder_io splits a tokenized caption") {
  std::vector<int64_t> ids{Vocabulary::kCls, Vocabulary::kBos, 261, 262,
                           Vocabulary::kEos};
  std::vector<int64_t> input, targets;
  C3caModel::decoder_io(ids, input, targets);
  CHECK(input == std::vector<int64_t>{Vocabulary::kBos, 261, 262});
  CHECK(targets == std::vector<int64_t>{261, 262, Vocabulary::kEos});

  std::vector<int64_t> bad{Vocabulary::kBos, 261, Vocabulary::kEos};
  CHECK_THROWS_AS(C3caModel::decoder_io(bad, input, targets), Error);
  std::vector<int64_t> no_eos{Vocabulary::kCls, Vocabulary::kBos, 261};
  CHECK_THROWS_AS(C3caModel::decoder_io(no_eos, input, targets), Error);
}

TEST_CASE("caption loss matches a manual teacher-forcing pass") {
  C3caModel model(tiny_config(), tiny_vocab(), 5);
  SceneTokens scene = model.encode_scene(tiny_cloud(2));
  auto ids = model.tokenize_caption("a red box");

  Tensor loss = model.caption_loss(ids, scene);
  std::vector<int64_t> input(ids.begin() + 1, ids.end() - 1);
  std::vector<int64_t> targets(ids.begin() + 2, ids.end());
  Tensor logits = model.decoder().forward(input, scene.token_outputs);
  Tensor manual = model.decoder().loss(logits, targets);
  CHECK(loss.item() == doctest::Approx(manual.item()).epsilon(1e-12));
  CHECK(loss.item() > 0.0);
}

TEST_CASE("beam width one reproduces greedy and reports its log prob") {
  C3caModel model(tiny_config(), tiny_vocab(), 9);
  SceneTokens scene = model.encode_scene(tiny_cloud(3));
  double lp = 1.0;
  std::string beam = model.caption_beam(scene, 1, &lp);
  CHECK(beam == model.caption_greedy(scene));
  CHECK(lp < 0.0);

  // Re-derive the log prob from the decoder's emitted ids.
  auto emitted = model.decoder().generate_greedy(scene.token_outputs,
                                                 model.config().max_decode_len);
  std::vector<int64_t> input{Vocabulary::kBos};
  input.insert(input.end(), emitted.begin(), emitted.end() - 1);
  Tensor nll = model.decoder().loss(
      model.decoder().forward(input, scene.token_outputs), emitted);
  CHECK(lp == doctest::Approx(-nll.item()).epsilon(1e-9));
}

TEST_CASE("model save and load round trips parameters and aux records") {
  auto path = (temp_dir() / "model_roundtrip.ckpt").string();
  ModelConfig cfg = tiny_config();
  cfg.use_box_head = true;
  C3caModel model(cfg, tiny_vocab(), 21);

  std::vector<CheckpointRecord> aux(1);
  aux[0].name = "__opt.step";
  aux[0].shape = {1};
  aux[0].data = {42.0};
  save_model(model, path, aux);

  LoadedModel loaded = load_model(path);
  CHECK(loaded.aux.size() == 1);
  CHECK(loaded.aux[0].name == "__opt.step");
  CHECK(loaded.aux[0].data == std::vector<double>{42.0});
  CHECK(loaded.model->config().use_box_head);
  CHECK(loaded.model->vocab().size() == model.vocab().size());

  ParameterStore& a = model.store();
  ParameterStore& b = loaded.model->store();
  REQUIRE(a.count() == b.count());
  for (size_t i = 0; i < a.count(); ++i) {
    CAPTURE(a[i].name);
    CHECK(a[i].name == b[i].name);
    CHECK(a[i].frozen == b[i].frozen);
    CHECK(a[i].tensor.data() == b[i].tensor.data());
  }
  CHECK(model.frozen_hash() == loaded.model->frozen_hash());

  // Loaded model behaves identically.
  PointCloud cloud = tiny_cloud(4);
  CHECK(model.caption_greedy(model.encode_scene(cloud)) ==
        loaded.model->caption_greedy(loaded.model->encode_scene(cloud)));
}

TEST_CASE("save rejects aux records without the reserved prefix") {
  auto path = (temp_dir() / "model_badaux.ckpt").string();
  C3caModel model(tiny_config(), tiny_vocab(), 2);
  std::vector<CheckpointRecord> aux(1);
  aux[0].name = "opt.step";
  aux[0].shape = {1};
  aux[0].data = {1.0};
  CHECK_THROWS_AS(save_model(model, path, aux), Error);
}

TEST_CASE("load rejects missing sidecars and foreign checkpoints") {
  auto dir = temp_dir();
  CHECK_THROWS_AS(load_model((dir / "missing.ckpt").string()), Error);

  // A value checkpoint without model sidecars.
  auto bare = (dir / "bare.ckpt").string();
  std::vector<CheckpointRecord> recs(1);
  recs[0].name = "x";
  recs[0].shape = {1};
  recs[0].data = {0.0};
  save_checkpoint(bare, recs);
  CHECK_THROWS_AS(load_model(bare), Error);

  // Sidecars from one architecture, payload from another.
  auto mismatched = (dir / "mismatched.ckpt").string();
  C3caModel small(tiny_config(), tiny_vocab(), 3);
  save_model(small, mismatched);
  ModelConfig bigger = tiny_config();
  bigger.dim = 16;
  bigger.embed_dim = 16;
  json meta{{"format", "c3ca-model"},
            {"model_config", model_config_to_json(bigger)}};
  write_text_file_atomic(mismatched + ".meta.json", meta.dump(2) + "\n");
  CHECK_THROWS_AS(load_model(mismatched), Error);
}

TEST_CASE("box head emits one box per task token") {
  ModelConfig cfg = tiny_config();
  cfg.use_box_head = true;
  C3caModel model(cfg, tiny_vocab(), 17);
  SceneTokens scene = model.encode_scene(tiny_cloud(5));

  Tensor raw = model.box_head_raw(scene);
  CHECK(raw.rows() == cfg.task_tokens);
  CHECK(raw.cols() == 7);

  auto boxes = model.predict_boxes(scene);
  REQUIRE(boxes.size() == static_cast<size_t>(cfg.task_tokens));
  for (size_t slot = 0; slot < boxes.size(); ++slot) {
    const auto& b = boxes[slot];
    for (int axis = 0; axis < 3; ++axis) {
      auto a = static_cast<size_t>(axis);
      CHECK(b.box.center[a] ==
            doctest::Approx(raw.at(static_cast<int64_t>(slot), axis)));
      CHECK(b.box.size[a] ==
            doctest::Approx(std::exp(raw.at(static_cast<int64_t>(slot), 3 + axis))));
      CHECK(b.box.size[a] > 0.0);
    }
    CHECK(b.confidence > 0.0);
    CHECK(b.confidence < 1.0);
  }

  C3caModel headless(tiny_config(), tiny_vocab(), 17);
  CHECK_FALSE(headless.has_box_head());
  CHECK_THROWS_AS(headless.box_head_raw(scene), Error);
}

TEST_CASE("temperature clamp projects back into bounds") {
  C3caModel model(tiny_config(), tiny_vocab(), 1);
  model.log_temperature().mutable_data()[0] = std::log(0.001);
  model.clamp_temperature();
  CHECK(model.temperature() == doctest::Approx(0.01).epsilon(1e-12));
  model.log_temperature().mutable_data()[0] = std::log(500.0);
  model.clamp_temperature();
  CHECK(model.temperature() == doctest::Approx(100.0).epsilon(1e-12));
  model.log_temperature().mutable_data()[0] = std::log(0.07);
  model.clamp_temperature();
  CHECK(model.temperature() == doctest::Approx(0.07).epsilon(1e-12));
}

TEST_CASE("frozen hash is stable under trainable updates only") {
  C3caModel model(tiny_config(), tiny_vocab(), 13);
  uint64_t before = model.frozen_hash();
  model.store().at("proj_v.fc1.w").tensor.mutable_data()[0] += 1.0;
  CHECK(model.frozen_hash() == before);
  // Touching a frozen payload must change the hash (restore afterwards).
  auto& frozen_data =
      model.store().at("text_backbone.tok_embed").tensor.mutable_data();
  double original = frozen_data[0];
  frozen_data[0] = original + 1.0;
  CHECK(model.frozen_hash() != before);
  frozen_data[0] = original;
  CHECK(model.frozen_hash() == before);
}

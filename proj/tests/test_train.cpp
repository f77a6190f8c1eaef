#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "train.hpp"

using namespace c3ca;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "c3ca_train_test";
  fs::create_directories(dir);
  return dir;
}

ModelConfig tiny_model_config() {
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
  c.max_text_len = 32;
  c.embed_dim = 8;
  c.decoder_layers = 1;
  c.decoder_heads = 2;
  c.max_decode_len = 24;
  c.vocab_max_size = 300;
  return c;
}

// Generates a small dataset once per process and caches the load.
const std::string& dataset_dir() {
  static std::string dir = [] {
    auto d = (temp_dir() / "ds").string();
    SynthSpec spec;
    spec.min_objects = 1;
    spec.max_objects = 2;
    spec.points_per_scene = 64;
    generate_dataset(d, 12, 99, spec);
    return d;
  }();
  return dir;
}

const std::vector<TrainExample>& train_examples() {
  static std::vector<TrainExample> ex =
      load_training_set(dataset_dir(), Split::kTrain);
  return ex;
}

Vocabulary dataset_vocab() {
  return build_dataset_vocabulary(dataset_dir(), Split::kAll, 300);
}

TrainConfig quick_config(int64_t steps) {
  TrainConfig c;
  c.batch_size = 2;
  c.steps = steps;
  c.seed = 11;
  return c;
}

std::vector<std::vector<double>> snapshot(const ParameterStore& store) {
  std::vector<std::vector<double>> out;
  for (size_t i = 0; i < store.count(); ++i) {
    out.push_back(store[i].tensor.data());
  }
  return out;
}

}  // namespace

TEST_CASE("cosine schedule closed forms and monotonicity") {
  CHECK(cosine_lr(0.4, 0, 100) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(cosine_lr(0.4, 99, 100) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cosine_lr(1.0, 1, 3) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(cosine_lr(2.0, 0, 1) == doctest::Approx(2.0));

  double prev = cosine_lr(1e-3, 0, 57);
  CHECK(prev == doctest::Approx(1e-3));
  for (int64_t t = 1; t < 57; ++t) {
    double lr = cosine_lr(1e-3, t, 57);
    CHECK(lr <= prev + 1e-18);
    prev = lr;
  }
  CHECK(prev <= 1e-3 * 1e-3);

  CHECK_THROWS_AS(cosine_lr(1.0, -1, 10), Error);
  CHECK_THROWS_AS(cosine_lr(1.0, 10, 10), Error);
  CHECK_THROWS_AS(cosine_lr(0.0, 0, 10), Error);
  CHECK_THROWS_AS(cosine_lr(1.0, 0, 0), Error);
}

TEST_CASE("batch composition is a pure function of seed and step") {
  auto a = batch_indices(3, 17, 20, 6);
  auto b = batch_indices(3, 17, 20, 6);
  CHECK(a == b);
  CHECK(a.size() == 6);
  std::set<int64_t> uniq(a.begin(), a.end());
  CHECK(uniq.size() == 6);
  for (int64_t idx : a) {
    CHECK(idx >= 0);
    CHECK(idx < 20);
  }
  CHECK(batch_indices(3, 18, 20, 6) != a);
  CHECK(batch_indices(4, 17, 20, 6) != a);

  CHECK_THROWS_AS(batch_indices(3, -1, 20, 6), Error);
  CHECK_THROWS_AS(batch_indices(3, 0, 0, 1), Error);
  CHECK_THROWS_AS(batch_indices(3, 0, 4, 5), Error);
}

TEST_CASE("adamw matches the hand-computed update") {
  ParameterStore store;
  Tensor x = store.add("x", Tensor::scalar(2.0, true)).tensor;
  AdamW opt(store, 0.9, 0.999, 1e-8, 0.0);

  auto apply_grad = [&](double g) {
    store.zero_grads();
    backward(scale(x, g));
  };

  apply_grad(3.0);
  opt.step(0.1);
  // Bias correction makes mhat = g and vhat = g^2 for constant gradients.
  double expected = 2.0 - 0.1 * (3.0 / (std::sqrt(9.0) + 1e-8));
  CHECK(x.item() == doctest::Approx(expected).epsilon(1e-15));

  apply_grad(3.0);
  opt.step(0.1);
  expected -= 0.1 * (3.0 / (std::sqrt(9.0) + 1e-8));
  CHECK(x.item() == doctest::Approx(expected).epsilon(1e-12));
  CHECK(opt.steps_taken() == 2);
}

TEST_CASE("adamw applies decoupled weight decay") {
  ParameterStore store;
  Tensor x = store.add("x", Tensor::scalar(5.0, true)).tensor;
  AdamW opt(store, 0.9, 0.999, 1e-8, 0.01);
  store.zero_grads();
  backward(scale(x, 2.0));
  opt.step(0.5);
  double adaptive = 2.0 / (std::sqrt(4.0) + 1e-8);
  double expected = 5.0 - 0.5 * (adaptive + 0.01 * 5.0);
  CHECK(x.item() == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("adamw never touches frozen parameters") {
  ParameterStore store;
  Tensor x = store.add("trainable", Tensor::scalar(1.0, true)).tensor;
  Tensor f = store.add("backbone.w", Tensor::scalar(4.0, true)).tensor;
  store.freeze_prefix("backbone.");
  AdamW opt(store, 0.9, 0.999, 1e-8, 0.0);

  store.zero_grads();
  backward(mul(x, f));  // both receive gradients
  CHECK(f.grad()[0] == doctest::Approx(1.0));
  opt.step(0.1);
  CHECK(f.item() == 4.0);
  CHECK(x.item() != 1.0);

  auto state = opt.export_state();
  for (const auto& rec : state) {
    CHECK(rec.name.find("backbone.") == std::string::npos);
  }
}

TEST_CASE("adamw state export and import resume identically") {
  auto run = [](int64_t pre_steps, bool reload) {
    ParameterStore store;
    Tensor x = store.add("x", Tensor::row({1.0, -2.0}, true)).tensor;
    AdamW opt(store, 0.9, 0.999, 1e-8, 0.0);
    std::vector<CheckpointRecord> state;
    std::vector<double> payload;
    for (int64_t s = 0; s < 5; ++s) {
      if (reload && s == pre_steps) {
        payload = x.data();
        state = opt.export_state();
        // Rebuild everything from the snapshot mid-run.
        ParameterStore store2;
        Tensor y = store2.add("x", Tensor::row(payload, true)).tensor;
        AdamW opt2(store2, 0.9, 0.999, 1e-8, 0.0);
        opt2.import_state(state);
        for (int64_t t = s; t < 5; ++t) {
          store2.zero_grads();
          backward(sum_all(mul(y, y)));
          opt2.step(0.05);
        }
        return y.data();
      }
      store.zero_grads();
      backward(sum_all(mul(x, x)));
      opt.step(0.05);
    }
    return x.data();
  };
  CHECK(run(0, false) == run(3, true));
}

TEST_CASE("adamw import rejects foreign or missing records") {
  ParameterStore store;
  store.add("x", Tensor::scalar(1.0, true));
  AdamW opt(store, 0.9, 0.999, 1e-8, 0.0);
  CHECK_THROWS_AS(opt.import_state({}), Error);

  auto state = opt.export_state();
  auto extra = state;
  CheckpointRecord alien;
  alien.name = "__adamw.m.ghost";
  alien.shape = {1};
  alien.data = {0.0};
  extra.push_back(alien);
  CHECK_THROWS_AS(opt.import_state(extra), Error);

  auto wrong_shape = state;
  for (auto& rec : wrong_shape) {
    if (rec.name == "__adamw.m.x") {
      rec.shape = {2};
      rec.data = {0.0, 0.0};
    }
  }
  CHECK_THROWS_AS(opt.import_state(wrong_shape), Error);
}

TEST_CASE("train config json round trip and validation") {
  TrainConfig c = train_config_from_json(json::object());
  CHECK(c.lambda == doctest::Approx(1.0));
  CHECK(c.learning_rate == doctest::Approx(1e-3));
  CHECK(c.batch_size == 4);
  CHECK(c.epochs == 100);

  TrainConfig full;
  full.lambda = 0.25;
  full.learning_rate = 0.01;
  full.batch_size = 8;
  full.epochs = 3;
  full.steps = 42;
  full.weight_decay = 0.05;
  full.seed = 1234;
  full.checkpoint_every = 10;
  full.checkpoint_path = "/tmp/x.ckpt";
  full.log_path = "/tmp/x.jsonl";
  TrainConfig back = train_config_from_json(train_config_to_json(full));
  CHECK(back.lambda == doctest::Approx(full.lambda));
  CHECK(back.steps == full.steps);
  CHECK(back.seed == full.seed);
  CHECK(back.checkpoint_every == full.checkpoint_every);
  CHECK(back.checkpoint_path == full.checkpoint_path);
  CHECK(back.log_path == full.log_path);

  CHECK_THROWS_AS(train_config_from_json(json{{"lr", 0.1}}), Error);
  CHECK_THROWS_AS(train_config_from_json(json{{"batch_size", 1}}), Error);
  CHECK_THROWS_AS(train_config_from_json(json{{"lambda", -0.5}}), Error);
  CHECK_THROWS_AS(train_config_from_json(json{{"seed", -3}}), Error);
  CHECK_THROWS_AS(
      train_config_from_json(json{{"checkpoint_every", 5}}), Error);
}

TEST_CASE("training set loader keeps ids, captions and boxes") {
  const auto& examples = train_examples();
  REQUIRE(!examples.empty());
  auto entries = list_dataset(dataset_dir(), Split::kTrain);
  REQUIRE(entries.size() == examples.size());
  for (size_t i = 0; i < examples.size(); ++i) {
    CHECK(examples[i].scene_id == entries[i].scene_id);
    CHECK(!examples[i].caption.empty());
    CHECK(!examples[i].boxes.empty());
    Scene scene = load_scene(entries[i].path);
    CHECK(examples[i].caption == scene.objects[0].captions[0]);
    CHECK(examples[i].boxes.size() == scene.objects.size());
  }
}

TEST_CASE("batch losses combine per the lambda weighting") {
  C3caModel model(tiny_model_config(), dataset_vocab(), 5);
  const auto& examples = train_examples();
  std::vector<int64_t> batch{0, 1};

  BatchLosses l1 = batch_losses(model, examples, batch, 1.0);
  CHECK(std::isfinite(l1.total.item()));
  CHECK(l1.total.item() ==
        doctest::Approx(l1.l_con.item() + l1.l_cap.item()).epsilon(1e-12));
  CHECK(l1.retrieval >= 0.0);
  CHECK(l1.retrieval <= 1.0);
  CHECK(!l1.l_box.defined());

  BatchLosses l0 = batch_losses(model, examples, batch, 0.0);
  CHECK(l0.total.item() == doctest::Approx(l0.l_con.item()).epsilon(1e-12));
  BatchLosses l2 = batch_losses(model, examples, batch, 2.0);
  CHECK(l2.total.item() ==
        doctest::Approx(l2.l_con.item() + 2.0 * l2.l_cap.item())
            .epsilon(1e-12));

  CHECK_THROWS_AS(batch_losses(model, examples, {}, 1.0), Error);
  CHECK_THROWS_AS(batch_losses(model, examples, {0}, -1.0), Error);
  CHECK_THROWS_AS(
      batch_losses(model, examples, {static_cast<int64_t>(examples.size())},
                   1.0),
      Error);
}

TEST_CASE("trainer runs, logs valid json lines and checkpoints") {
  C3caModel model(tiny_model_config(), dataset_vocab(), 5);
  TrainConfig cfg = quick_config(4);
  cfg.checkpoint_every = 2;
  cfg.checkpoint_path = (temp_dir() / "run.ckpt").string();
  cfg.log_path = (temp_dir() / "run.jsonl").string();

  uint64_t frozen_before = model.frozen_hash();
  Trainer trainer(model, cfg, train_examples());
  CHECK(trainer.total_steps() == 4);
  trainer.run();
  CHECK(trainer.next_step() == 4);
  CHECK(model.frozen_hash() == frozen_before);

  std::ifstream log(cfg.log_path);
  REQUIRE(log.good());
  std::string line;
  int64_t expect_step = 0;
  while (std::getline(log, line)) {
    json j = json::parse(line);
    CHECK(j.at("step").get<int64_t>() == expect_step);
    CHECK(std::isfinite(j.at("l_con").get<double>()));
    CHECK(std::isfinite(j.at("l_cap").get<double>()));
    CHECK(std::isfinite(j.at("l_total").get<double>()));
    CHECK(j.at("lr").get<double>() >= 0.0);
    CHECK(j.at("retrieval_top1").get<double>() >= 0.0);
    ++expect_step;
  }
  CHECK(expect_step == 4);

  LoadedModel loaded = load_model(cfg.checkpoint_path);
  CHECK(loaded.model->store().count() == model.store().count());
  bool has_cursor = false;
  for (const auto& rec : loaded.aux) {
    if (rec.name == "__trainer.next_step") {
      has_cursor = true;
      CHECK(rec.data == std::vector<double>{4.0});
    }
  }
  CHECK(has_cursor);
}

TEST_CASE("interrupted training resumes bit-exactly") {
  TrainConfig cfg = quick_config(6);
  auto ckpt = (temp_dir() / "resume.ckpt").string();

  // Uninterrupted reference run.
  C3caModel ref(tiny_model_config(), dataset_vocab(), 5);
  Trainer ref_trainer(ref, cfg, train_examples());
  std::vector<double> ref_losses;
  for (int64_t s = 0; s < 6; ++s) ref_losses.push_back(ref_trainer.run_step().l_total);

  // Same run split across a checkpoint boundary.
  C3caModel half(tiny_model_config(), dataset_vocab(), 5);
  Trainer half_trainer(half, cfg, train_examples());
  std::vector<double> split_losses;
  for (int64_t s = 0; s < 3; ++s) split_losses.push_back(half_trainer.run_step().l_total);
  half_trainer.save(ckpt);

  LoadedModel loaded = load_model(ckpt);
  Trainer resumed(*loaded.model, cfg, train_examples());
  resumed.restore(loaded.aux);
  CHECK(resumed.next_step() == 3);
  for (int64_t s = 3; s < 6; ++s) split_losses.push_back(resumed.run_step().l_total);

  CHECK(split_losses == ref_losses);
  ParameterStore& a = ref.store();
  ParameterStore& b = loaded.model->store();
  REQUIRE(a.count() == b.count());
  for (size_t i = 0; i < a.count(); ++i) {
    CAPTURE(a[i].name);
    CHECK(a[i].tensor.data() == b[i].tensor.data());
  }
}

TEST_CASE("lambda zero leaves the decoder untouched") {
  C3caModel model(tiny_model_config(), dataset_vocab(), 5);
  std::vector<std::vector<double>> before = snapshot(model.store());

  TrainConfig cfg = quick_config(3);
  cfg.lambda = 0.0;
  Trainer trainer(model, cfg, train_examples());
  for (int64_t s = 0; s < 3; ++s) trainer.run_step();

  ParameterStore& store = model.store();
  bool proj_moved = false;
  for (size_t i = 0; i < store.count(); ++i) {
    const std::string& name = store[i].name;
    bool unchanged = store[i].tensor.data() == before[i];
    CAPTURE(name);
    if (name.rfind("decoder.", 0) == 0 || store[i].frozen) {
      CHECK(unchanged);
    }
    if (name.rfind("proj_", 0) == 0 && !unchanged) proj_moved = true;
  }
  CHECK(proj_moved);
}

TEST_CASE("non-finite loss aborts with a numeric diagnostic") {
  C3caModel model(tiny_model_config(), dataset_vocab(), 5);
  model.store().at("tokenizer_mlp.w1").tensor.mutable_data()[0] =
      std::numeric_limits<double>::quiet_NaN();
  Trainer trainer(model, quick_config(2), train_examples());
  CHECK_THROWS_AS(trainer.run_step(), Error);
}

TEST_CASE("retrieval accuracy is deterministic and sane when untrained") {
  C3caModel model(tiny_model_config(), dataset_vocab(), 23);
  const auto& examples = train_examples();
  double acc = retrieval_accuracy(model, examples, 4, 50, 7);
  CHECK(acc == retrieval_accuracy(model, examples, 4, 50, 7));
  CHECK(acc >= 0.0);
  CHECK(acc <= 0.8);  // untrained: far from perfect
  CHECK_THROWS_AS(retrieval_accuracy(model, examples, 0, 10, 7), Error);
  CHECK_THROWS_AS(retrieval_accuracy(model, examples, 100, 10, 7), Error);
  CHECK_THROWS_AS(retrieval_accuracy(model, {}, 2, 10, 7), Error);
}

TEST_CASE("token accuracy lies in the unit interval") {
  C3caModel model(tiny_model_config(), dataset_vocab(), 23);
  double acc = token_accuracy(model, train_examples());
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  CHECK_THROWS_AS(token_accuracy(model, {}), Error);
}

TEST_CASE("box head joins the objective when present") {
  ModelConfig mc = tiny_model_config();
  mc.use_box_head = true;
  C3caModel model(mc, dataset_vocab(), 5);
  const auto& examples = train_examples();

  BatchLosses l = batch_losses(model, examples, {0, 1}, 1.0);
  REQUIRE(l.l_box.defined());
  CHECK(std::isfinite(l.l_box.item()));
  CHECK(l.l_box.item() > 0.0);
  CHECK(l.total.item() ==
        doctest::Approx(l.l_con.item() + l.l_cap.item() + l.l_box.item())
            .epsilon(1e-12));

  // Box parameters receive gradient and move under training.
  std::vector<double> before = model.store().at("box_head.fc2.w").tensor.data();
  Trainer trainer(model, quick_config(2), examples);
  trainer.run_step();
  CHECK(model.store().at("box_head.fc2.w").tensor.data() != before);

  // More objects than slots is an error.
  TrainExample crowded = examples[0];
  crowded.boxes.resize(3, crowded.boxes[0]);
  CHECK_THROWS_AS(
      batch_losses(model, {crowded, examples[1]}, {0, 1}, 1.0), Error);
}

TEST_CASE("gradcheck verifies every trainable parameter") {
  GradcheckReport report = run_gradcheck(7);
  CHECK(report.checked_values > 500);
  CHECK(report.max_rel_err <= 1e-4);
}

TEST_CASE("retrieval pass mode chunks one shuffled epoch") {
  C3caModel model(tiny_model_config(), dataset_vocab(), 23);
  const auto& examples = train_examples();
  double acc = retrieval_pass_accuracy(model, examples, 3, 7);
  CHECK(acc == retrieval_pass_accuracy(model, examples, 3, 7));
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  // Batch size equal to the pool scores every example once.
  double full = retrieval_pass_accuracy(
      model, examples, static_cast<int64_t>(examples.size()), 7);
  CHECK(full >= 0.0);
  CHECK(full <= 1.0);
  CHECK_THROWS_AS(retrieval_pass_accuracy(model, examples, 0, 7), Error);
  CHECK_THROWS_AS(
      retrieval_pass_accuracy(model, examples,
                              static_cast<int64_t>(examples.size()) + 1, 7),
      Error);
}

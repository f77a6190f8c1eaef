#include "train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <utility>

#include "common.hpp"
#include "contrastive.hpp"

namespace c3ca {

namespace {

using nlohmann::json;

constexpr double kPi = 3.14159265358979323846;

int64_t int_field(const json& value, const std::string& key) {
  if (!value.is_number_integer()) {
    fail_invalid("train config: " + key + " must be an integer");
  }
  return value.get<int64_t>();
}

double num_field(const json& value, const std::string& key) {
  if (!value.is_number()) {
    fail_invalid("train config: " + key + " must be a number");
  }
  return value.get<double>();
}

std::string str_field(const json& value, const std::string& key) {
  if (!value.is_string()) {
    fail_invalid("train config: " + key + " must be a string");
  }
  return value.get<std::string>();
}

}  // namespace

void validate_train_config(const TrainConfig& c) {
  if (c.lambda < 0.0 || !std::isfinite(c.lambda)) {
    fail_invalid("train config: lambda must be finite and non-negative");
  }
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) {
    fail_invalid("train config: learning_rate must be positive");
  }
  if (c.batch_size < 2) {
    fail_invalid(
        "train config: batch_size must be at least 2 (the contrastive term "
        "needs in-batch negatives)");
  }
  if (c.epochs < 1) fail_invalid("train config: epochs must be positive");
  if (c.steps < 0) fail_invalid("train config: steps must be non-negative");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) ||
      !(c.beta2 >= 0.0 && c.beta2 < 1.0)) {
    fail_invalid("train config: betas must lie in [0, 1)");
  }
  if (c.weight_decay < 0.0 || !std::isfinite(c.weight_decay)) {
    fail_invalid("train config: weight_decay must be non-negative");
  }
  if (c.checkpoint_every < 0) {
    fail_invalid("train config: checkpoint_every must be non-negative");
  }
  if (c.checkpoint_every > 0 && c.checkpoint_path.empty()) {
    fail_invalid("train config: checkpoint_every needs a checkpoint_path");
  }
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) fail_invalid("train config must be a JSON object");
  TrainConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const json& v = it.value();
    if (key == "lambda") c.lambda = num_field(v, key);
    else if (key == "learning_rate") c.learning_rate = num_field(v, key);
    else if (key == "batch_size") c.batch_size = int_field(v, key);
    else if (key == "epochs") c.epochs = int_field(v, key);
    else if (key == "steps") c.steps = int_field(v, key);
    else if (key == "beta1") c.beta1 = num_field(v, key);
    else if (key == "beta2") c.beta2 = num_field(v, key);
    else if (key == "weight_decay") c.weight_decay = num_field(v, key);
    else if (key == "seed") {
      if (!v.is_number_integer() && !v.is_number_unsigned()) {
        fail_invalid("train config: seed must be an integer");
      }
      if (v.is_number_integer() && v.get<int64_t>() < 0) {
        fail_invalid("train config: seed must be non-negative");
      }
      c.seed = v.get<uint64_t>();
    } else if (key == "checkpoint_every") {
      c.checkpoint_every = int_field(v, key);
    } else if (key == "checkpoint_path") {
      c.checkpoint_path = str_field(v, key);
    } else if (key == "log_path") {
      c.log_path = str_field(v, key);
    } else {
      fail_invalid("train config: unknown key: " + key);
    }
  }
  validate_train_config(c);
  return c;
}

json train_config_to_json(const TrainConfig& c) {
  return json{{"lambda", c.lambda},
              {"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"steps", c.steps},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"weight_decay", c.weight_decay},
              {"seed", c.seed},
              {"checkpoint_every", c.checkpoint_every},
              {"checkpoint_path", c.checkpoint_path},
              {"log_path", c.log_path}};
}

double cosine_lr(double peak, int64_t step, int64_t total_steps) {
  if (!(peak > 0.0) || !std::isfinite(peak)) {
    fail_invalid("cosine_lr: peak must be positive");
  }
  if (total_steps < 1) fail_invalid("cosine_lr: total_steps must be positive");
  if (step < 0 || step >= total_steps) {
    fail_invalid("cosine_lr: step outside the schedule");
  }
  if (total_steps == 1) return peak;
  double phase =
      kPi * static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return 0.5 * peak * (1.0 + std::cos(phase));
}

std::vector<int64_t> batch_indices(uint64_t seed, int64_t step, int64_t pool,
                                   int64_t batch_size) {
  if (pool < 1) fail_invalid("batch_indices: empty example pool");
  if (step < 0) fail_invalid("batch_indices: negative step");
  if (batch_size < 1 || batch_size > pool) {
    fail_invalid("batch_indices: batch_size must lie in [1, pool]");
  }
  Rng rng(derive_seed(seed, "batch_" + std::to_string(step)));
  auto picks = rng.sample_without_replacement(static_cast<size_t>(pool),
                                              static_cast<size_t>(batch_size));
  return std::vector<int64_t>(picks.begin(), picks.end());
}

AdamW::AdamW(ParameterStore& store, double beta1, double beta2, double eps,
             double weight_decay)
    : store_(&store),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay) {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    fail_invalid("adamw: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) fail_invalid("adamw: eps must be positive");
  if (weight_decay < 0.0) {
    fail_invalid("adamw: weight_decay must be non-negative");
  }
  for (size_t i = 0; i < store.count(); ++i) {
    if (store[i].frozen) continue;
    trainable_.push_back(i);
    auto n = static_cast<size_t>(store[i].tensor.size());
    m_.emplace_back(n, 0.0);
    v_.emplace_back(n, 0.0);
  }
}

void AdamW::step(double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    fail_invalid("adamw: learning rate must be finite and non-negative");
  }
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t slot = 0; slot < trainable_.size(); ++slot) {
    Parameter& p = (*store_)[trainable_[slot]];
    const std::vector<double>& g = p.tensor.grad();
    std::vector<double>& x = p.tensor.mutable_data();
    std::vector<double>& m = m_[slot];
    std::vector<double>& v = v_[slot];
    for (size_t k = 0; k < x.size(); ++k) {
      double gk = g[k];
      if (!std::isfinite(gk)) {
        fail_numeric("adamw: non-finite gradient on " + p.name);
      }
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * gk;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
      double update = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps_) +
                      weight_decay_ * x[k];
      x[k] -= lr * update;
    }
  }
}

std::vector<CheckpointRecord> AdamW::export_state() const {
  std::vector<CheckpointRecord> out;
  CheckpointRecord step_rec;
  step_rec.name = "__adamw.step";
  step_rec.shape = {1};
  step_rec.data = {static_cast<double>(t_)};
  out.push_back(std::move(step_rec));
  for (size_t slot = 0; slot < trainable_.size(); ++slot) {
    const Parameter& p = (*store_)[trainable_[slot]];
    CheckpointRecord m_rec;
    m_rec.name = "__adamw.m." + p.name;
    m_rec.shape = p.tensor.shape();
    m_rec.data = m_[slot];
    out.push_back(std::move(m_rec));
    CheckpointRecord v_rec;
    v_rec.name = "__adamw.v." + p.name;
    v_rec.shape = p.tensor.shape();
    v_rec.data = v_[slot];
    out.push_back(std::move(v_rec));
  }
  return out;
}

void AdamW::import_state(const std::vector<CheckpointRecord>& aux) {
  const CheckpointRecord* step_rec = nullptr;
  std::vector<const CheckpointRecord*> moments;
  for (const auto& rec : aux) {
    if (rec.name == "__adamw.step") {
      step_rec = &rec;
    } else if (rec.name.rfind("__adamw.", 0) == 0) {
      moments.push_back(&rec);
    }
  }
  if (step_rec == nullptr || step_rec->data.size() != 1) {
    fail_invalid("adamw: checkpoint lacks an optimizer step record");
  }
  double raw_t = step_rec->data[0];
  if (!(raw_t >= 0.0) || raw_t != std::floor(raw_t)) {
    fail_invalid("adamw: corrupt optimizer step record");
  }
  size_t used = 0;
  for (size_t slot = 0; slot < trainable_.size(); ++slot) {
    const Parameter& p = (*store_)[trainable_[slot]];
    for (const char* kind : {"m", "v"}) {
      std::string want = std::string("__adamw.") + kind + "." + p.name;
      const CheckpointRecord* found = nullptr;
      for (const auto* rec : moments) {
        if (rec->name == want) {
          found = rec;
          break;
        }
      }
      if (found == nullptr) fail_invalid("adamw: missing moment " + want);
      if (found->shape != p.tensor.shape()) {
        fail_invalid("adamw: moment shape mismatch for " + want);
      }
      (kind[0] == 'm' ? m_ : v_)[slot] = found->data;
      ++used;
    }
  }
  if (used != moments.size()) {
    fail_invalid("adamw: checkpoint carries moments for unknown parameters");
  }
  t_ = static_cast<int64_t>(raw_t);
}

std::vector<TrainExample> load_training_set(const std::string& dataset_dir,
                                            Split split) {
  std::vector<TrainExample> out;
  for (const auto& entry : list_dataset(dataset_dir, split)) {
    Scene scene = load_scene(entry.path);
    if (scene.objects.empty() || scene.objects[0].captions.empty()) {
      fail_invalid(entry.path + ": scene has no captioned objects");
    }
    TrainExample ex;
    ex.scene_id = entry.scene_id;
    ex.cloud = std::move(scene.cloud);
    ex.caption = scene.objects[0].captions[0];
    for (const auto& obj : scene.objects) ex.boxes.push_back(obj.box);
    out.push_back(std::move(ex));
  }
  return out;
}

Vocabulary build_dataset_vocabulary(const std::string& dataset_dir,
                                    Split split, int64_t max_size) {
  std::vector<std::string> corpus;
  for (const auto& entry : list_dataset(dataset_dir, split)) {
    Scene scene = load_scene(entry.path);
    for (const auto& obj : scene.objects) {
      for (const auto& caption : obj.captions) corpus.push_back(caption);
    }
  }
  return Vocabulary::build(corpus, max_size);
}

double retrieval_top1(const Tensor& sims) {
  if (!sims.defined() || sims.rows() == 0 || sims.rows() != sims.cols()) {
    fail_invalid("retrieval_top1: expected a square similarity matrix");
  }
  int64_t hits = 0;
  for (int64_t i = 0; i < sims.rows(); ++i) {
    int64_t best = 0;
    for (int64_t j = 1; j < sims.cols(); ++j) {
      if (sims.at(i, j) > sims.at(i, best)) best = j;
    }
    if (best == i) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(sims.rows());
}

namespace {

// Exact min-cost assignment of objects to head slots by squared center
// distance; brute force over permutations, so slot counts stay small.
std::vector<int64_t> assign_slots(const Tensor& raw,
                                  const std::vector<Box3D>& boxes) {
  int64_t slots = raw.rows();
  auto n = static_cast<int64_t>(boxes.size());
  if (n > slots) {
    fail_invalid("box head: scene has more objects than head slots");
  }
  if (slots > 6) {
    fail_invalid("box head: assignment supports at most 6 slots");
  }
  std::vector<int64_t> order(static_cast<size_t>(slots));
  std::iota(order.begin(), order.end(), 0);
  std::vector<int64_t> best_assign(order.begin(), order.begin() + n);
  double best_cost = -1.0;
  do {
    double cost = 0.0;
    for (int64_t o = 0; o < n; ++o) {
      for (int axis = 0; axis < 3; ++axis) {
        double d = raw.at(order[static_cast<size_t>(o)], axis) -
                   boxes[static_cast<size_t>(o)].center[static_cast<size_t>(axis)];
        cost += d * d;
      }
    }
    if (best_cost < 0.0 || cost < best_cost) {
      best_cost = cost;
      best_assign.assign(order.begin(), order.begin() + n);
    }
  } while (std::next_permutation(order.begin(), order.end()));
  return best_assign;
}

Tensor example_box_loss(const C3caModel& model, const SceneTokens& scene,
                        const std::vector<Box3D>& boxes) {
  Tensor raw = model.box_head_raw(scene);
  auto assign = assign_slots(raw, boxes);
  std::vector<double> conf_targets(static_cast<size_t>(raw.rows()), 0.0);
  Tensor reg;
  for (size_t o = 0; o < boxes.size(); ++o) {
    int64_t slot = assign[o];
    conf_targets[static_cast<size_t>(slot)] = 1.0;
    std::vector<double> target(6);
    for (size_t axis = 0; axis < 3; ++axis) {
      if (!(boxes[o].size[axis] > 0.0)) {
        fail_invalid("box head: ground-truth sizes must be positive");
      }
      target[axis] = boxes[o].center[axis];
      target[3 + axis] = std::log(boxes[o].size[axis]);
    }
    Tensor pred = col_slice(row_slice(raw, slot, slot + 1), 0, 6);
    Tensor h = huber_sum(pred, target, 1.0);
    reg = reg.defined() ? add(reg, h) : h;
  }
  Tensor conf = bce_with_logits_sum(col_slice(raw, 6, 7), conf_targets);
  return reg.defined() ? add(reg, conf) : conf;
}

}  // namespace

BatchLosses batch_losses(const C3caModel& model,
                         const std::vector<TrainExample>& examples,
                         const std::vector<int64_t>& batch, double lambda) {
  if (batch.empty()) fail_invalid("batch_losses: empty batch");
  if (lambda < 0.0) fail_invalid("batch_losses: lambda must be non-negative");
  std::vector<Tensor> scene_rows, text_rows;
  Tensor cap_sum, box_sum;
  for (int64_t idx : batch) {
    if (idx < 0 || idx >= static_cast<int64_t>(examples.size())) {
      fail_invalid("batch_losses: example index out of range");
    }
    const TrainExample& ex = examples[static_cast<size_t>(idx)];
    SceneTokens scene = model.encode_scene(ex.cloud);
    auto ids = model.tokenize_caption(ex.caption);
    scene_rows.push_back(model.scene_alignment(scene));
    text_rows.push_back(model.text_alignment(ids));
    Tensor cap = model.caption_loss(ids, scene);
    cap_sum = cap_sum.defined() ? add(cap_sum, cap) : cap;
    if (model.has_box_head()) {
      Tensor bl = example_box_loss(model, scene, ex.boxes);
      box_sum = box_sum.defined() ? add(box_sum, bl) : bl;
    }
  }
  double inv_b = 1.0 / static_cast<double>(batch.size());
  BatchLosses out;
  Tensor sims =
      similarity_matrix(concat_rows(scene_rows), concat_rows(text_rows));
  out.l_con = info_nce(sims, model.log_temperature());
  out.l_cap = scale(cap_sum, inv_b);
  out.total = add(out.l_con, scale(out.l_cap, lambda));
  if (box_sum.defined()) {
    out.l_box = scale(box_sum, inv_b);
    out.total = add(out.total, out.l_box);
  }
  out.retrieval = retrieval_top1(sims);
  return out;
}

namespace {

struct EmbeddingCache {
  std::vector<std::vector<double>> scene_vecs;
  std::vector<std::vector<double>> text_vecs;

  // Hits inside one batch of example indices, lowest-index tie-break.
  int64_t batch_hits(const size_t* picks, size_t count) const {
    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
      double s = 0.0;
      for (size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
      return s;
    };
    int64_t hits = 0;
    for (size_t i = 0; i < count; ++i) {
      size_t best = 0;
      double best_sim = dot(scene_vecs[picks[i]], text_vecs[picks[0]]);
      for (size_t j = 1; j < count; ++j) {
        double sim = dot(scene_vecs[picks[i]], text_vecs[picks[j]]);
        if (sim > best_sim) {
          best_sim = sim;
          best = j;
        }
      }
      if (best == i) ++hits;
    }
    return hits;
  }
};

EmbeddingCache embed_examples(const C3caModel& model,
                              const std::vector<TrainExample>& examples) {
  EmbeddingCache cache;
  for (const auto& ex : examples) {
    SceneTokens scene = model.encode_scene(ex.cloud);
    cache.scene_vecs.push_back(model.scene_alignment(scene).data());
    cache.text_vecs.push_back(
        model.text_alignment(model.tokenize_caption(ex.caption)).data());
  }
  return cache;
}

}  // namespace

double retrieval_accuracy(const C3caModel& model,
                          const std::vector<TrainExample>& examples,
                          int64_t batch_size, int64_t n_batches,
                          uint64_t seed) {
  auto n = static_cast<int64_t>(examples.size());
  if (n == 0) fail_invalid("retrieval_accuracy: no examples");
  if (batch_size < 1 || batch_size > n) {
    fail_invalid("retrieval_accuracy: batch_size must lie in [1, examples]");
  }
  if (n_batches < 1) fail_invalid("retrieval_accuracy: need at least 1 batch");

  EmbeddingCache cache = embed_examples(model, examples);
  int64_t hits = 0;
  for (int64_t b = 0; b < n_batches; ++b) {
    Rng rng(derive_seed(seed, "retrieval_batch_" + std::to_string(b)));
    auto picks = rng.sample_without_replacement(static_cast<size_t>(n),
                                                static_cast<size_t>(batch_size));
    hits += cache.batch_hits(picks.data(), picks.size());
  }
  return static_cast<double>(hits) /
         static_cast<double>(n_batches * batch_size);
}

double retrieval_pass_accuracy(const C3caModel& model,
                               const std::vector<TrainExample>& examples,
                               int64_t batch_size, uint64_t seed) {
  auto n = static_cast<int64_t>(examples.size());
  if (n == 0) fail_invalid("retrieval_pass_accuracy: no examples");
  if (batch_size < 1 || batch_size > n) {
    fail_invalid("retrieval_pass_accuracy: batch_size must lie in [1, examples]");
  }
  EmbeddingCache cache = embed_examples(model, examples);
  std::vector<size_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(derive_seed(seed, "retrieval_pass"));
  rng.shuffle(order);

  int64_t hits = 0, scored = 0;
  for (int64_t at = 0; at + batch_size <= n; at += batch_size) {
    hits += cache.batch_hits(order.data() + at,
                             static_cast<size_t>(batch_size));
    scored += batch_size;
  }
  if (scored == 0) fail_invalid("retrieval_pass_accuracy: no full batches");
  return static_cast<double>(hits) / static_cast<double>(scored);
}

double token_accuracy(const C3caModel& model,
                      const std::vector<TrainExample>& examples) {
  if (examples.empty()) fail_invalid("token_accuracy: no examples");
  int64_t hits = 0, total = 0;
  for (const auto& ex : examples) {
    auto ids = model.tokenize_caption(ex.caption);
    std::vector<int64_t> input, targets;
    C3caModel::decoder_io(ids, input, targets);
    SceneTokens scene = model.encode_scene(ex.cloud);
    Tensor logits = model.caption_logits(input, scene);
    for (int64_t r = 0; r < logits.rows(); ++r) {
      int64_t best = 0;
      for (int64_t c = 1; c < logits.cols(); ++c) {
        if (logits.at(r, c) > logits.at(r, best)) best = c;
      }
      if (best == targets[static_cast<size_t>(r)]) ++hits;
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

Trainer::Trainer(C3caModel& model, const TrainConfig& config,
                 std::vector<TrainExample> examples)
    : model_(&model),
      config_(config),
      examples_(std::move(examples)),
      opt_(model.store(), config.beta1, config.beta2, 1e-8,
           config.weight_decay) {
  validate_train_config(config_);
  auto n = static_cast<int64_t>(examples_.size());
  if (n == 0) fail_invalid("trainer: training set is empty");
  if (config_.batch_size > n) {
    fail_invalid("trainer: batch_size exceeds the training set");
  }
  int64_t per_epoch = (n + config_.batch_size - 1) / config_.batch_size;
  total_steps_ =
      config_.steps > 0 ? config_.steps : config_.epochs * per_epoch;
}

StepStats Trainer::run_step() {
  if (next_step_ >= total_steps_) {
    fail_invalid("trainer: schedule already exhausted");
  }
  double lr = cosine_lr(config_.learning_rate, next_step_, total_steps_);
  auto batch = batch_indices(config_.seed, next_step_,
                             static_cast<int64_t>(examples_.size()),
                             config_.batch_size);
  BatchLosses losses = batch_losses(*model_, examples_, batch, config_.lambda);
  double total = losses.total.item();
  if (!std::isfinite(total)) {
    fail_numeric("training diverged: non-finite loss at step " +
                 std::to_string(next_step_));
  }
  model_->store().zero_grads();
  backward(losses.total);
  opt_.step(lr);
  model_->clamp_temperature();

  StepStats stats;
  stats.step = next_step_;
  stats.l_con = losses.l_con.item();
  stats.l_cap = losses.l_cap.item();
  stats.l_box = losses.l_box.defined() ? losses.l_box.item() : 0.0;
  stats.l_total = total;
  stats.lr = lr;
  stats.retrieval = losses.retrieval;
  ++next_step_;
  return stats;
}

void Trainer::run() {
  std::ofstream log;
  if (!config_.log_path.empty()) {
    auto mode = next_step_ > 0 ? std::ios::app : std::ios::trunc;
    log.open(config_.log_path, std::ios::out | mode);
    if (!log) fail_io("cannot open metrics log: " + config_.log_path);
  }
  while (next_step_ < total_steps_) {
    StepStats s = run_step();
    if (log.is_open()) {
      json line{{"step", s.step},        {"l_con", s.l_con},
                {"l_cap", s.l_cap},      {"l_total", s.l_total},
                {"lr", s.lr},            {"retrieval_top1", s.retrieval}};
      if (model_->has_box_head()) line["l_box"] = s.l_box;
      log << line.dump() << "\n" << std::flush;
      if (!log) fail_io("cannot write metrics log: " + config_.log_path);
    }
    bool due = config_.checkpoint_every > 0 &&
               next_step_ % config_.checkpoint_every == 0;
    bool last = next_step_ == total_steps_;
    if (!config_.checkpoint_path.empty() && (due || last)) {
      save(config_.checkpoint_path);
    }
  }
}

std::vector<CheckpointRecord> Trainer::trainer_state() const {
  auto records = opt_.export_state();
  CheckpointRecord cursor;
  cursor.name = "__trainer.next_step";
  cursor.shape = {1};
  cursor.data = {static_cast<double>(next_step_)};
  records.push_back(std::move(cursor));
  return records;
}

void Trainer::restore(const std::vector<CheckpointRecord>& aux) {
  opt_.import_state(aux);
  const CheckpointRecord* cursor = nullptr;
  for (const auto& rec : aux) {
    if (rec.name == "__trainer.next_step") cursor = &rec;
  }
  if (cursor == nullptr || cursor->data.size() != 1) {
    fail_invalid("trainer: checkpoint lacks a step cursor");
  }
  double raw = cursor->data[0];
  if (!(raw >= 0.0) || raw != std::floor(raw) ||
      raw > static_cast<double>(total_steps_)) {
    fail_invalid("trainer: checkpoint step cursor out of range");
  }
  next_step_ = static_cast<int64_t>(raw);
}

void Trainer::save(const std::string& path) const {
  save_model(*model_, path, trainer_state());
}

namespace {

GradcheckReport run_gradcheck_instance(uint64_t seed) {
  // Smallest full pipeline: 8 patches, 2 task tokens, single-layer towers
  // and decoder, 20-symbol vocabulary, two scene-caption pairs.
  constexpr int64_t kDim = 4, kPatches = 8, kNeighbors = 4, kVocab = 20;
  Rng root(seed);

  ParameterStore store;
  Rng rng = root.fork("tokenizer");
  PatchEmbedNet net;
  net.w1 = make_embedding(store, "tokenizer_mlp.w1", 4, kDim, rng, 0.5);
  net.b1 = store.add("tokenizer_mlp.b1", Tensor::zeros({kDim}, true)).tensor;
  net.w2 = make_embedding(store, "tokenizer_mlp.w2", kDim, kDim, rng, 0.5);
  net.b2 = store.add("tokenizer_mlp.b2", Tensor::zeros({kDim}, true)).tensor;

  SceneEncoderConfig scene_cfg;
  scene_cfg.layers = 1;
  scene_cfg.heads = 1;
  scene_cfg.dim = kDim;
  scene_cfg.mlp_ratio = 1;
  scene_cfg.task_tokens = 2;
  scene_cfg.patches = kPatches;
  scene_cfg.patch_dim = kDim;
  rng = root.fork("scene");
  SceneEncoder scene_enc(scene_cfg, store, rng);

  TextEncoderConfig text_cfg;
  text_cfg.layers = 1;
  text_cfg.heads = 1;
  text_cfg.dim = kDim;
  text_cfg.mlp_ratio = 1;
  text_cfg.max_len = 8;
  rng = root.fork("text");
  TextEncoder text_enc(text_cfg, kVocab, store, rng);

  rng = root.fork("proj");
  ProjectionHead proj_v = make_projection_head(store, "proj_v", kDim, kDim, rng);
  ProjectionHead proj_t = make_projection_head(store, "proj_t", kDim, kDim, rng);
  Tensor log_tau =
      store.add("contrastive.log_temperature", Tensor::scalar(std::log(0.07), true))
          .tensor;

  DecoderConfig dec_cfg;
  dec_cfg.layers = 1;
  dec_cfg.heads = 1;
  dec_cfg.dim = kDim;
  dec_cfg.mlp_ratio = 1;
  dec_cfg.max_decode_len = 8;
  rng = root.fork("decoder");
  CaptionDecoder decoder(dec_cfg, kVocab, store, rng);

  store.freeze_prefix("scene_backbone.");
  store.freeze_prefix("text_backbone.");

  // Two fixed scene-caption pairs; patch geometry is parameter-independent,
  // so centers and neighborhoods are grouped once up front.
  Rng data_rng = root.fork("data");
  std::vector<PointCloud> clouds(2);
  std::vector<PatchSet> patch_sets;
  for (auto& cloud : clouds) {
    cloud.n_points = 16;
    cloud.n_features = 1;
    for (int64_t i = 0; i < 16 * 4; ++i) {
      cloud.data.push_back(data_rng.uniform(-1.0, 1.0));
    }
    auto centers = farthest_point_sample(cloud, kPatches, 0);
    patch_sets.push_back(knn_group(cloud, centers, kNeighbors));
  }
  std::vector<std::vector<int64_t>> words(2);
  for (auto& w : words) {
    int64_t len = 3 + static_cast<int64_t>(data_rng.below(3));
    for (int64_t i = 0; i < len; ++i) {
      w.push_back(5 + static_cast<int64_t>(data_rng.below(kVocab - 5)));
    }
  }

  auto build = [&]() {
    std::vector<Tensor> scene_rows, text_rows;
    Tensor cap_sum;
    for (size_t i = 0; i < clouds.size(); ++i) {
      Tensor tokens = embed_patches(clouds[i], patch_sets[i], net);
      SceneTokens st = scene_enc.encode(tokens);
      scene_rows.push_back(project_and_normalize(st.f_enc, proj_v));

      std::vector<int64_t> text_ids{Vocabulary::kCls, Vocabulary::kBos};
      text_ids.insert(text_ids.end(), words[i].begin(), words[i].end());
      text_ids.push_back(Vocabulary::kEos);
      text_rows.push_back(
          project_and_normalize(text_enc.encode(text_ids), proj_t));

      std::vector<int64_t> input{Vocabulary::kBos};
      input.insert(input.end(), words[i].begin(), words[i].end());
      std::vector<int64_t> targets(words[i]);
      targets.push_back(Vocabulary::kEos);
      Tensor cap = decoder.loss(decoder.forward(input, st.token_outputs),
                                targets);
      cap_sum = cap_sum.defined() ? add(cap_sum, cap) : cap;
    }
    Tensor sims =
        similarity_matrix(concat_rows(scene_rows), concat_rows(text_rows));
    Tensor l_con = info_nce(sims, log_tau);
    return add(l_con, scale(cap_sum, 1.0 / static_cast<double>(clouds.size())));
  };

  store.zero_grads();
  backward(build());

  constexpr double kEps = 1e-5;
  GradcheckReport report;
  for (size_t i = 0; i < store.count(); ++i) {
    Parameter& p = store[i];
    if (p.frozen) continue;
    std::vector<double> analytic = p.tensor.grad();
    std::vector<double>& data = p.tensor.mutable_data();
    for (size_t k = 0; k < data.size(); ++k) {
      double keep = data[k];
      data[k] = keep + kEps;
      double up = build().item();
      data[k] = keep - kEps;
      double down = build().item();
      data[k] = keep;
      double fd = (up - down) / (2.0 * kEps);
      // The comparison floor must sit above central-difference noise: on a
      // loss of order 10 the fd estimate carries ~1e-10 of roundoff, so
      // near-zero gradients are compared against 1e-5, not absolutely.
      double err = std::abs(analytic[k] - fd) /
                   std::max({1e-5, std::abs(analytic[k]), std::abs(fd)});
      report.max_rel_err = std::max(report.max_rel_err, err);
      ++report.checked_values;
    }
  }
  return report;
}

}  // namespace

GradcheckReport run_gradcheck(uint64_t seed) {
  // A randomly initialized model this small can be degenerate (a dead relu
  // row feeds an exact zero into the l2 normalization), which aborts with a
  // numeric error. Walk derived instance seeds until a healthy instance is
  // found; the walk is deterministic per seed.
  constexpr int kMaxAttempts = 16;
  for (int attempt = 0;; ++attempt) {
    try {
      return run_gradcheck_instance(
          derive_seed(seed, static_cast<uint64_t>(attempt)));
    } catch (const Error& e) {
      if (e.code() != C3CA_ERR_NUMERIC || attempt + 1 == kMaxAttempts) throw;
    }
  }
}

}  // namespace c3ca

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "model.hpp"
#include "synth.hpp"

namespace c3ca {

struct TrainConfig {
  double lambda = 1.0;          // caption loss weight in the total objective
  double learning_rate = 1e-3;  // peak of the cosine schedule
  int64_t batch_size = 4;
  int64_t epochs = 100;
  int64_t steps = 0;  // explicit step budget; 0 derives it from epochs
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  uint64_t seed = 0;
  int64_t checkpoint_every = 0;  // 0 = checkpoint only after the last step
  std::string checkpoint_path;
  std::string log_path;  // JSON-lines metrics; empty disables the file
};

void validate_train_config(const TrainConfig& config);
// Strict parse: unknown keys and wrong types are errors.
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& config);

// Cosine annealing from peak to zero: lr(t) = 0.5 peak (1 + cos(pi t /
// (total - 1))) for t in [0, total). total == 1 degenerates to peak.
double cosine_lr(double peak, int64_t step, int64_t total_steps);

// Deterministic batch composition: the step's examples are a pure function
// of (seed, step). Indices are distinct within a batch.
std::vector<int64_t> batch_indices(uint64_t seed, int64_t step, int64_t pool,
                                   int64_t batch_size);

// Decoupled weight decay Adam over the non-frozen parameters of a store.
class AdamW {
 public:
  AdamW(ParameterStore& store, double beta1, double beta2, double eps,
        double weight_decay);

  // Applies one update from the gradients currently on the store.
  void step(double lr);
  int64_t steps_taken() const { return t_; }

  // Moments and step counter as "__adamw." checkpoint records.
  std::vector<CheckpointRecord> export_state() const;
  void import_state(const std::vector<CheckpointRecord>& aux);

 private:
  ParameterStore* store_;
  double beta1_, beta2_, eps_, weight_decay_;
  int64_t t_ = 0;
  std::vector<size_t> trainable_;  // store indices, registration order
  std::vector<std::vector<double>> m_, v_;
};

struct TrainExample {
  std::string scene_id;
  PointCloud cloud;
  std::string caption;       // primary training caption (first object)
  std::vector<Box3D> boxes;  // ground-truth boxes, object order
};

std::vector<TrainExample> load_training_set(const std::string& dataset_dir,
                                            Split split);
// Vocabulary over every caption of every object in the dataset split.
Vocabulary build_dataset_vocabulary(const std::string& dataset_dir,
                                    Split split, int64_t max_size);

// Fraction of rows whose argmax (ties to the lowest column) sits on the
// diagonal of a scene x text similarity matrix.
double retrieval_top1(const Tensor& sims);

struct BatchLosses {
  Tensor l_con;
  Tensor l_cap;
  Tensor l_box;   // undefined unless the model has a box head
  Tensor total;   // l_con + lambda * l_cap (+ box term when present)
  double retrieval = 0.0;
};

BatchLosses batch_losses(const C3caModel& model,
                         const std::vector<TrainExample>& examples,
                         const std::vector<int64_t>& batch, double lambda);

// Scene->text top-1 accuracy over n_batches seeded batches, computed from
// embeddings encoded once per example.
double retrieval_accuracy(const C3caModel& model,
                          const std::vector<TrainExample>& examples,
                          int64_t batch_size, int64_t n_batches,
                          uint64_t seed);

// One seeded shuffle of the whole set, walked in full batch-size chunks
// (the trailing partial chunk is skipped).
double retrieval_pass_accuracy(const C3caModel& model,
                               const std::vector<TrainExample>& examples,
                               int64_t batch_size, uint64_t seed);

// Teacher-forced next-token accuracy over a set of examples.
double token_accuracy(const C3caModel& model,
                      const std::vector<TrainExample>& examples);

struct StepStats {
  int64_t step = 0;
  double l_con = 0.0;
  double l_cap = 0.0;
  double l_box = 0.0;  // zero when the model has no box head
  double l_total = 0.0;
  double lr = 0.0;
  double retrieval = 0.0;
};

class Trainer {
 public:
  Trainer(C3caModel& model, const TrainConfig& config,
          std::vector<TrainExample> examples);

  int64_t next_step() const { return next_step_; }
  int64_t total_steps() const { return total_steps_; }

  StepStats run_step();  // one forward/backward/update cycle
  void run();            // remaining schedule with logging + checkpoints

  // Optimizer state plus the trainer cursor, for checkpoint aux records.
  std::vector<CheckpointRecord> trainer_state() const;
  void restore(const std::vector<CheckpointRecord>& aux);
  void save(const std::string& path) const;

 private:
  C3caModel* model_;
  TrainConfig config_;
  std::vector<TrainExample> examples_;
  AdamW opt_;
  int64_t next_step_ = 0;
  int64_t total_steps_ = 0;
};

struct GradcheckReport {
  double max_rel_err = 0.0;
  size_t checked_values = 0;
};

// Finite-difference verification of the combined objective on a tiny
// randomly initialized model; checks every non-frozen parameter.
GradcheckReport run_gradcheck(uint64_t seed);

}  // namespace c3ca

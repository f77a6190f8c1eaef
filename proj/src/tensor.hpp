#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "common.hpp"

namespace c3ca {

// Dense 64-bit float tensors of rank 1 or 2, stored row-major, with
// tape-based reverse-mode gradients. A Tensor is a cheap handle to a shared
// graph node; ops record their inputs on the node so backward() can replay
// the tape. Any non-finite value produced by an op is a hard error.
//
// Rank-1 tensors behave as a single row in every binary op. Construction of
// the graph and backward() are single-threaded per graph; finished graphs
// are immutable and safe to read concurrently.

using Shape = std::vector<int64_t>;

struct TensorNode;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value,
                     bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor row(std::vector<double> data, bool requires_grad = false);
  static Tensor matrix(int64_t rows, int64_t cols, std::vector<double> data,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t rows() const;
  int64_t cols() const;
  int64_t size() const;
  bool requires_grad() const;

  const std::vector<double>& data() const;
  // In-place edit of a leaf's payload (parameters, test fixtures).
  std::vector<double>& mutable_data();
  const std::vector<double>& grad() const;
  void zero_grad();

  double at(int64_t r, int64_t c) const;
  double item() const;  // requires size() == 1

  std::shared_ptr<TensorNode> node() const { return node_; }
  explicit Tensor(std::shared_ptr<TensorNode> node)
      : node_(std::move(node)) {}

 private:
  std::shared_ptr<TensorNode> node_;
};

struct TensorNode {
  Shape shape;
  int64_t nrows = 0;
  int64_t ncols = 0;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;
};

// Key-side attention mask: causal restricts row i to columns <= i,
// key_valid (when set) additionally disables columns flagged false.
struct AttentionMask {
  bool causal = false;
  const std::vector<char>* key_valid = nullptr;
};

// Elementwise binary ops broadcast either operand along any axis of
// extent 1 (scalar, row, or column against a matrix).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_const(const Tensor& a, double value);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sigmoid(const Tensor& a);

Tensor softmax_rows(const Tensor& x, const AttentionMask* mask = nullptr);
Tensor log_softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor mean_over_rows(const Tensor& a);  // 1 x C
Tensor max_over_rows(const Tensor& a);   // 1 x C; ties go to the lowest row
Tensor row_slice(const Tensor& a, int64_t begin, int64_t end);
Tensor col_slice(const Tensor& a, int64_t begin, int64_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& ids);

// Sum over rows of -log softmax(logits)[r, target[r]]; rows with
// valid[r] == 0 are skipped. logits: L x V.
Tensor sequence_nll(const Tensor& logits, const std::vector<int64_t>& targets,
                    const std::vector<char>* valid = nullptr);
// Sum of Huber terms between pred and a constant target, threshold delta.
Tensor huber_sum(const Tensor& pred, const std::vector<double>& target,
                 double delta = 1.0);
// Sum of binary cross-entropy terms on raw logits against constant targets.
Tensor bce_with_logits_sum(const Tensor& logits,
                           const std::vector<double>& targets);

// Populate grad buffers of every requires_grad node reachable from |loss|.
// |loss| must be scalar. Gradients accumulate; callers zero leaves between
// steps.
void backward(const Tensor& loss);

// Named trainable leaf. Frozen parameters still receive gradients but must
// never be updated by an optimizer.
struct Parameter {
  std::string name;
  Tensor tensor;
  bool frozen = false;
};

class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor tensor, bool frozen = false);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Parameter& at(const std::string& name);

  size_t count() const { return params_.size(); }
  Parameter& operator[](size_t i) { return *params_[i]; }
  const Parameter& operator[](size_t i) const { return *params_[i]; }

  void freeze_prefix(const std::string& prefix);
  void zero_grads();
  size_t total_values() const;
  // Order-stable hash over the payloads of all frozen parameters.
  uint64_t frozen_payload_hash() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace c3ca

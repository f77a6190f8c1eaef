#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace c3ca {

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 2) {
    fail_invalid("tensor rank must be 1 or 2");
  }
  for (int64_t d : shape) {
    if (d < 1) fail_invalid("tensor dimensions must be positive");
  }
}

int64_t shape_size(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

void dims2d(const Shape& shape, int64_t* r, int64_t* c) {
  if (shape.size() == 1) {
    *r = 1;
    *c = shape[0];
  } else {
    *r = shape[0];
    *c = shape[1];
  }
}

std::shared_ptr<TensorNode> make_leaf(Shape shape, std::vector<double> value,
                                      bool requires_grad) {
  check_shape(shape);
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  dims2d(node->shape, &node->nrows, &node->ncols);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->is_leaf = true;
  return node;
}

void check_finite(const std::vector<double>& v, const char* opname) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      fail_numeric(std::string(opname) + " produced a non-finite value");
    }
  }
}

void ensure_grad(TensorNode& node) {
  if (node.grad.size() != node.value.size()) {
    node.grad.assign(node.value.size(), 0.0);
  }
}

Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<std::shared_ptr<TensorNode>> parents,
                   std::function<void(TensorNode&)> backward_fn,
                   const char* opname) {
  check_finite(value, opname);
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  dims2d(node->shape, &node->nrows, &node->ncols);
  node->value = std::move(value);
  node->is_leaf = false;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(node);
}

// Effective source index for a broadcast read at (r, c).
inline int64_t src_index(int64_t r, int64_t c, int64_t sr, int64_t sc) {
  return (sr == 1 ? 0 : r) * sc + (sc == 1 ? 0 : c);
}

using ScalarFn = double (*)(double, double);

Tensor broadcast_binary(const Tensor& a, const Tensor& b, ScalarFn f,
                        ScalarFn dfa, ScalarFn dfb, const char* opname) {
  if (!a.defined() || !b.defined()) fail_invalid("undefined tensor operand");
  const auto& an = *a.node();
  const auto& bn = *b.node();
  int64_t ar = an.nrows, ac = an.ncols, br = bn.nrows, bc = bn.ncols;
  if ((ar != br && ar != 1 && br != 1) || (ac != bc && ac != 1 && bc != 1)) {
    fail_invalid(std::string(opname) + ": shapes do not broadcast");
  }
  int64_t R = std::max(ar, br), C = std::max(ac, bc);
  Shape out_shape = (an.shape.size() == 1 && bn.shape.size() == 1)
                        ? Shape{C}
                        : Shape{R, C};
  std::vector<double> out(static_cast<size_t>(R * C));
  for (int64_t r = 0; r < R; ++r) {
    for (int64_t c = 0; c < C; ++c) {
      out[r * C + c] =
          f(an.value[src_index(r, c, ar, ac)], bn.value[src_index(r, c, br, bc)]);
    }
  }
  auto backward = [=](TensorNode& node) {
    TensorNode& pa = *node.parents[0];
    TensorNode& pb = *node.parents[1];
    for (int64_t r = 0; r < R; ++r) {
      for (int64_t c = 0; c < C; ++c) {
        double g = node.grad[r * C + c];
        double x = pa.value[src_index(r, c, ar, ac)];
        double y = pb.value[src_index(r, c, br, bc)];
        if (pa.requires_grad) {
          ensure_grad(pa);
          pa.grad[src_index(r, c, ar, ac)] += g * dfa(x, y);
        }
        if (pb.requires_grad) {
          ensure_grad(pb);
          pb.grad[src_index(r, c, br, bc)] += g * dfb(x, y);
        }
      }
    }
  };
  return make_result(std::move(out_shape), std::move(out), {a.node(), b.node()},
                     backward, opname);
}

template <class Fwd, class Dfn>
Tensor unary_op(const Tensor& a, Fwd f, Dfn df, const char* opname) {
  if (!a.defined()) fail_invalid("undefined tensor operand");
  const auto& an = *a.node();
  std::vector<double> out(an.value.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(an.value[i]);
  auto backward = [df](TensorNode& node) {
    TensorNode& pa = *node.parents[0];
    ensure_grad(pa);
    for (size_t i = 0; i < node.grad.size(); ++i) {
      pa.grad[i] += node.grad[i] * df(pa.value[i], node.value[i]);
    }
  };
  return make_result(an.shape, std::move(out), {a.node()}, backward, opname);
}

}  // namespace

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  check_shape(shape);
  return Tensor(make_leaf(shape,
                          std::vector<double>(static_cast<size_t>(shape_size(shape)), 0.0),
                          requires_grad));
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  check_shape(shape);
  return Tensor(make_leaf(shape,
                          std::vector<double>(static_cast<size_t>(shape_size(shape)), value),
                          requires_grad));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data,
                         bool requires_grad) {
  check_shape(shape);
  if (static_cast<int64_t>(data.size()) != shape_size(shape)) {
    fail_invalid("tensor data size does not match shape");
  }
  check_finite(data, "from_data");
  return Tensor(make_leaf(shape, std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::row(std::vector<double> data, bool requires_grad) {
  Shape shape{static_cast<int64_t>(data.size())};
  return from_data(shape, std::move(data), requires_grad);
}

Tensor Tensor::matrix(int64_t rows, int64_t cols, std::vector<double> data,
                      bool requires_grad) {
  return from_data({rows, cols}, std::move(data), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) fail_invalid("undefined tensor");
  return node_->shape;
}

int64_t Tensor::rows() const {
  if (!node_) fail_invalid("undefined tensor");
  return node_->nrows;
}

int64_t Tensor::cols() const {
  if (!node_) fail_invalid("undefined tensor");
  return node_->ncols;
}

int64_t Tensor::size() const {
  if (!node_) fail_invalid("undefined tensor");
  return static_cast<int64_t>(node_->value.size());
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

const std::vector<double>& Tensor::data() const {
  if (!node_) fail_invalid("undefined tensor");
  return node_->value;
}

std::vector<double>& Tensor::mutable_data() {
  if (!node_) fail_invalid("undefined tensor");
  if (!node_->is_leaf) fail_invalid("only leaf tensors may be mutated");
  return node_->value;
}

const std::vector<double>& Tensor::grad() const {
  if (!node_) fail_invalid("undefined tensor");
  ensure_grad(*node_);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_) fail_invalid("undefined tensor");
  node_->grad.assign(node_->value.size(), 0.0);
}

double Tensor::at(int64_t r, int64_t c) const {
  if (!node_) fail_invalid("undefined tensor");
  if (r < 0 || r >= node_->nrows || c < 0 || c >= node_->ncols) {
    fail_invalid("tensor index out of range");
  }
  return node_->value[r * node_->ncols + c];
}

double Tensor::item() const {
  if (!node_) fail_invalid("undefined tensor");
  if (node_->value.size() != 1) fail_invalid("item() requires a single value");
  return node_->value[0];
}

Tensor add(const Tensor& a, const Tensor& b) {
  return broadcast_binary(
      a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return broadcast_binary(
      a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return broadcast_binary(
      a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; },
      "mul");
}

Tensor div(const Tensor& a, const Tensor& b) {
  return broadcast_binary(
      a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); }, "div");
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double factor) {
  return unary_op(
      a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; }, "scale");
}

Tensor add_const(const Tensor& a, double value) {
  return unary_op(
      a, [value](double x) { return x + value; },
      [](double, double) { return 1.0; }, "add_const");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) fail_invalid("undefined tensor operand");
  const auto& an = *a.node();
  const auto& bn = *b.node();
  // A rank-1 left operand is a row vector, a rank-1 right operand a column.
  int64_t R = an.shape.size() == 1 ? 1 : an.nrows;
  int64_t K = an.shape.size() == 1 ? an.ncols : an.ncols;
  int64_t K2 = bn.shape.size() == 1 ? bn.ncols : bn.nrows;
  int64_t C = bn.shape.size() == 1 ? 1 : bn.ncols;
  if (K != K2) fail_invalid("matmul: inner dimensions do not match");
  std::vector<double> out(static_cast<size_t>(R * C), 0.0);
  for (int64_t r = 0; r < R; ++r) {
    for (int64_t k = 0; k < K; ++k) {
      double av = an.value[r * K + k];
      if (av == 0.0) continue;
      const double* brow = bn.value.data() + k * C;
      double* orow = out.data() + r * C;
      for (int64_t c = 0; c < C; ++c) orow[c] += av * brow[c];
    }
  }
  auto backward = [R, K, C](TensorNode& node) {
    TensorNode& pa = *node.parents[0];
    TensorNode& pb = *node.parents[1];
    if (pa.requires_grad) {
      ensure_grad(pa);
      // dA = dY * B^T
      for (int64_t r = 0; r < R; ++r) {
        for (int64_t k = 0; k < K; ++k) {
          double acc = 0.0;
          for (int64_t c = 0; c < C; ++c) {
            acc += node.grad[r * C + c] * pb.value[k * C + c];
          }
          pa.grad[r * K + k] += acc;
        }
      }
    }
    if (pb.requires_grad) {
      ensure_grad(pb);
      // dB = A^T * dY
      for (int64_t k = 0; k < K; ++k) {
        for (int64_t r = 0; r < R; ++r) {
          double av = pa.value[r * K + k];
          if (av == 0.0) continue;
          for (int64_t c = 0; c < C; ++c) {
            pb.grad[k * C + c] += av * node.grad[r * C + c];
          }
        }
      }
    }
  };
  return make_result({R, C}, std::move(out), {a.node(), b.node()}, backward,
                     "matmul");
}

Tensor transpose(const Tensor& a) {
  if (!a.defined()) fail_invalid("undefined tensor operand");
  const auto& an = *a.node();
  int64_t R = an.nrows, C = an.ncols;
  std::vector<double> out(static_cast<size_t>(R * C));
  for (int64_t r = 0; r < R; ++r) {
    for (int64_t c = 0; c < C; ++c) out[c * R + r] = an.value[r * C + c];
  }
  auto backward = [R, C](TensorNode& node) {
    TensorNode& pa = *node.parents[0];
    ensure_grad(pa);
    for (int64_t r = 0; r < R; ++r) {
      for (int64_t c = 0; c < C; ++c) {
        pa.grad[r * C + c] += node.grad[c * R + r];
      }
    }
  };
  return make_result({C, R}, std::move(out), {a.node()}, backward, "transpose");
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

Tensor exp(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; }, "exp");
}

Tensor log(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; }, "log");
}

Tensor sqrt(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; }, "sqrt");
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a,
      [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                        : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

Tensor softmax_rows(const Tensor& x, const AttentionMask* mask) {
  if (!x.defined()) fail_invalid("undefined tensor operand");
  const auto& xn = *x.node();
  int64_t R = xn.nrows, C = xn.ncols;
  bool causal = mask && mask->causal;
  std::vector<char> key_valid;
  if (mask && mask->key_valid) {
    if (static_cast<int64_t>(mask->key_valid->size()) != C) {
      fail_invalid("softmax_rows: key mask length does not match columns");
    }
    key_valid = *mask->key_valid;
  }
  auto allowed = [&](int64_t r, int64_t c) {
    if (causal && c > r) return false;
    if (!key_valid.empty() && !key_valid[c]) return false;
    return true;
  };
  std::vector<double> out(static_cast<size_t>(R * C), 0.0);
  for (int64_t r = 0; r < R; ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (int64_t c = 0; c < C; ++c) {
      if (allowed(r, c)) m = std::max(m, xn.value[r * C + c]);
    }
    if (!std::isfinite(m)) fail_numeric("softmax_rows: row has no valid keys");
    double denom = 0.0;
    for (int64_t c = 0; c < C; ++c) {
      if (allowed(r, c)) denom += std::exp(xn.value[r * C + c] - m);
    }
    for (int64_t c = 0; c < C; ++c) {
      if (allowed(r, c)) out[r * C + c] = std::exp(xn.value[r * C + c] - m) / denom;
    }
  }
  auto backward = [R, C](TensorNode& node) {
    TensorNode& pa = *node.parents[0];
    ensure_grad(pa);
    for (int64_t r = 0; r < R; ++r) {
      double dot = 0.0;
      for (int64_t c = 0; c < C; ++c) {
        dot += node.grad[r * C + c] * node.value[r * C + c];
      }
      for (int64_t c = 0; c < C; ++c) {
        double p = node.value[r * C + c];
        pa.grad[r * C + c] += p * (node.grad[r * C + c] - dot);
      }
    }
  };
  return make_result(xn.shape, std::move(out), {x.node()}, backward,
                     "softmax_rows");
}

Tensor log_softmax_rows(const Tensor& x) {
  if (!x.defined()) fail_invalid("undefined tensor operand");
  const auto& xn = *x.node();
  int64_t R = xn.nrows, C = xn.ncols;
  std::vector<double> out(static_cast<size_t>(R * C));
  for (int64_t r = 0; r < R; ++r) {
    double m = xn.value[r * C];
    for (int64_t c = 1; c < C; ++c) m = std::max(m, xn.value[r * C + c]);
    double denom = 0.0;
    for (int64_t c = 0; c < C; ++c) denom += std::exp(xn.value[r * C + c] - m);
    double lse = m + std::log(denom);
    for (int64_t c = 0; c < C; ++c) out[r * C + c] = xn.value[r * C + c] - lse;
  }
  auto backward = [R, C](TensorNode& node) {
    TensorNode& pa = *node.parents[0];
    ensure_grad(pa);
    for (int64_t r = 0; r < R; ++r) {
      double gsum = 0.0;
      for (int64_t c = 0; c < C; ++c) gsum += node.grad[r * C + c];
      for (int64_t c = 0; c < C; ++c) {
        pa.grad[r * C + c] +=
            node.grad[r * C + c] - std::exp(node.value[r * C + c]) * gsum;
      }
    }
  };
  return make_result(xn.shape, std::move(out), {x.node()}, backward,
                     "log_softmax_rows");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (!x.defined() || !gain.defined() || !bias.defined()) {
    fail_invalid("undefined tensor operand");
  }
  const auto& xn = *x.node();
  int64_t R = xn.nrows, C = xn.ncols;
  if (gain.size() != C || bias.size() != C) {
    fail_invalid("layer_norm: gain/bias length must equal feature count");
  }
  const auto& gv = gain.data();
  const auto& bv = bias.data();
  std::vector<double> out(static_cast<size_t>(R * C));
  std::vector<double> xhat(static_cast<size_t>(R * C));
  std::vector<double> inv_std(static_cast<size_t>(R));
  for (int64_t r = 0; r < R; ++r) {
    double mean = 0.0;
    for (int64_t c = 0; c < C; ++c) mean += xn.value[r * C + c];
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (int64_t c = 0; c < C; ++c) {
      double d = xn.value[r * C + c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(C);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int64_t c = 0; c < C; ++c) {
      double h = (xn.value[r * C + c] - mean) * is;
      xhat[r * C + c] = h;
      out[r * C + c] = gv[c] * h + bv[c];
    }
  }
  auto backward = [R, C, xhat = std::move(xhat),
                   inv_std = std::move(inv_std)](TensorNode& node) {
    TensorNode& px = *node.parents[0];
    TensorNode& pg = *node.parents[1];
    TensorNode& pb = *node.parents[2];
    for (int64_t r = 0; r < R; ++r) {
      double mean_dy = 0.0, mean_dyx = 0.0;
      for (int64_t c = 0; c < C; ++c) {
        double dyh = node.grad[r * C + c] * pg.value[c];
        mean_dy += dyh;
        mean_dyx += dyh * xhat[r * C + c];
      }
      mean_dy /= static_cast<double>(C);
      mean_dyx /= static_cast<double>(C);
      if (px.requires_grad) {
        ensure_grad(px);
        for (int64_t c = 0; c < C; ++c) {
          double dyh = node.grad[r * C + c] * pg.value[c];
          px.grad[r * C + c] +=
              inv_std[r] * (dyh - mean_dy - xhat[r * C + c] * mean_dyx);
        }
      }
      if (pg.requires_grad) {
        ensure_grad(pg);
        for (int64_t c = 0; c < C; ++c) {
          pg.grad[c] += node.grad[r * C + c] * xhat[r * C + c];
        }
      }
      if (pb.requires_grad) {
        ensure_grad(pb);
        for (int64_t c = 0; c < C; ++c) pb.grad[c] += node.grad[r * C + c];
      }
    }
  };
  return make_result(xn.shape, std::move(out),
                     {x.node(), gain.node(), bias.node()}, backward,
                     "layer_norm");
}

Tensor sum_all(const Tensor& a) {
  if (!a.defined()) fail_invalid("undefined tensor operand");
  const auto& an = *a.node();
  double s = 0.0;
  for (double v : an.value) s += v;
  auto backward = [](TensorNode& node) {
    TensorNode& pa = *node.parents[0];
    ensure_grad(pa);
    for (double& g : pa.grad) g += node.grad[0];
  };
  return make_result({1}, {s}, {a.node()}, backward, "sum_all");
}

Tensor mean_all(const Tensor& a) {
  if (!a.defined()) fail_invalid("undefined tensor operand");
  const auto& an = *a.node();
  double s = 0.0;
  for (double v : an.value) s += v;
  double n = static_cast<double>(an.value.size());
  auto backward = [n](TensorNode& node) {
    TensorNode& pa = *node.parents[0];
    ensure_grad(pa);
    for (double& g : pa.grad) g += node.grad[0] / n;
  };
  return make_result({1}, {s / n}, {a.node()}, backward, "mean_all");
}

Tensor mean_over_rows(const Tensor& a) {
  if (!a.defined()) fail_invalid("undefined tensor operand");
  const auto& an = *a.node();
  int64_t R = an.nrows, C = an.ncols;
  std::vector<double> out(static_cast<size_t>(C), 0.0);
  for (int64_t r = 0; r < R; ++r) {
    for (int64_t c = 0; c < C; ++c) out[c] += an.value[r * C + c];
  }
  for (int64_t c = 0; c < C; ++c) out[c] /= static_cast<double>(R);
  auto backward = [R, C](TensorNode& node) {
    TensorNode& pa = *node.parents[0];
    ensure_grad(pa);
    for (int64_t r = 0; r < R; ++r) {
      for (int64_t c = 0; c < C; ++c) {
        pa.grad[r * C + c] += node.grad[c] / static_cast<double>(R);
      }
    }
  };
  return make_result({1, C}, std::move(out), {a.node()}, backward,
                     "mean_over_rows");
}

Tensor max_over_rows(const Tensor& a) {
  if (!a.defined()) fail_invalid("undefined tensor operand");
  const auto& an = *a.node();
  int64_t R = an.nrows, C = an.ncols;
  std::vector<double> out(static_cast<size_t>(C));
  std::vector<int64_t> argmax(static_cast<size_t>(C), 0);
  for (int64_t c = 0; c < C; ++c) {
    double best = an.value[c];
    int64_t best_r = 0;
    for (int64_t r = 1; r < R; ++r) {
      double v = an.value[r * C + c];
      if (v > best) {
        best = v;
        best_r = r;
      }
    }
    out[c] = best;
    argmax[c] = best_r;
  }
  auto backward = [C, argmax = std::move(argmax)](TensorNode& node) {
    TensorNode& pa = *node.parents[0];
    ensure_grad(pa);
    for (int64_t c = 0; c < C; ++c) {
      pa.grad[argmax[c] * C + c] += node.grad[c];
    }
  };
  return make_result({1, C}, std::move(out), {a.node()}, backward,
                     "max_over_rows");
}

Tensor row_slice(const Tensor& a, int64_t begin, int64_t end) {
  if (!a.defined()) fail_invalid("undefined tensor operand");
  const auto& an = *a.node();
  if (begin < 0 || end > an.nrows || begin >= end) {
    fail_invalid("row_slice: bad range");
  }
  int64_t C = an.ncols;
  std::vector<double> out(an.value.begin() + begin * C,
                          an.value.begin() + end * C);
  auto backward = [begin, end, C](TensorNode& node) {
    TensorNode& pa = *node.parents[0];
    ensure_grad(pa);
    for (int64_t r = begin; r < end; ++r) {
      for (int64_t c = 0; c < C; ++c) {
        pa.grad[r * C + c] += node.grad[(r - begin) * C + c];
      }
    }
  };
  return make_result({end - begin, C}, std::move(out), {a.node()}, backward,
                     "row_slice");
}

Tensor col_slice(const Tensor& a, int64_t begin, int64_t end) {
  if (!a.defined()) fail_invalid("undefined tensor operand");
  const auto& an = *a.node();
  if (begin < 0 || end > an.ncols || begin >= end) {
    fail_invalid("col_slice: bad range");
  }
  int64_t R = an.nrows, C = an.ncols, W = end - begin;
  std::vector<double> out(static_cast<size_t>(R * W));
  for (int64_t r = 0; r < R; ++r) {
    for (int64_t c = 0; c < W; ++c) {
      out[r * W + c] = an.value[r * C + begin + c];
    }
  }
  auto backward = [R, C, W, begin](TensorNode& node) {
    TensorNode& pa = *node.parents[0];
    ensure_grad(pa);
    for (int64_t r = 0; r < R; ++r) {
      for (int64_t c = 0; c < W; ++c) {
        pa.grad[r * C + begin + c] += node.grad[r * W + c];
      }
    }
  };
  return make_result({R, W}, std::move(out), {a.node()}, backward, "col_slice");
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail_invalid("concat_rows: no inputs");
  int64_t C = parts[0].cols();
  int64_t R = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::vector<int64_t> row_counts;
  for (const auto& p : parts) {
    if (!p.defined()) fail_invalid("undefined tensor operand");
    if (p.cols() != C) fail_invalid("concat_rows: column mismatch");
    R += p.rows();
    row_counts.push_back(p.rows());
    parents.push_back(p.node());
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(R * C));
  for (const auto& p : parts) {
    const auto& v = p.data();
    out.insert(out.end(), v.begin(), v.end());
  }
  auto backward = [C, row_counts = std::move(row_counts)](TensorNode& node) {
    int64_t offset = 0;
    for (size_t i = 0; i < node.parents.size(); ++i) {
      TensorNode& p = *node.parents[i];
      int64_t nr = row_counts[i];
      if (p.requires_grad) {
        ensure_grad(p);
        for (int64_t j = 0; j < nr * C; ++j) {
          p.grad[j] += node.grad[offset * C + j];
        }
      }
      offset += nr;
    }
  };
  return make_result({R, C}, std::move(out), std::move(parents), backward,
                     "concat_rows");
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail_invalid("concat_cols: no inputs");
  int64_t R = parts[0].rows();
  int64_t C = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::vector<int64_t> col_counts;
  for (const auto& p : parts) {
    if (!p.defined()) fail_invalid("undefined tensor operand");
    if (p.rows() != R) fail_invalid("concat_cols: row mismatch");
    C += p.cols();
    col_counts.push_back(p.cols());
    parents.push_back(p.node());
  }
  std::vector<double> out(static_cast<size_t>(R * C));
  int64_t offset = 0;
  for (const auto& p : parts) {
    const auto& v = p.data();
    int64_t w = p.cols();
    for (int64_t r = 0; r < R; ++r) {
      for (int64_t c = 0; c < w; ++c) out[r * C + offset + c] = v[r * w + c];
    }
    offset += w;
  }
  auto backward = [R, C, col_counts = std::move(col_counts)](TensorNode& node) {
    int64_t off = 0;
    for (size_t i = 0; i < node.parents.size(); ++i) {
      TensorNode& p = *node.parents[i];
      int64_t w = col_counts[i];
      if (p.requires_grad) {
        ensure_grad(p);
        for (int64_t r = 0; r < R; ++r) {
          for (int64_t c = 0; c < w; ++c) {
            p.grad[r * w + c] += node.grad[r * C + off + c];
          }
        }
      }
      off += w;
    }
  };
  return make_result({R, C}, std::move(out), std::move(parents), backward,
                     "concat_cols");
}

Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& ids) {
  if (!table.defined()) fail_invalid("undefined tensor operand");
  const auto& tn = *table.node();
  if (ids.empty()) fail_invalid("gather_rows: empty index list");
  int64_t C = tn.ncols;
  std::vector<double> out;
  out.reserve(ids.size() * static_cast<size_t>(C));
  for (int64_t id : ids) {
    if (id < 0 || id >= tn.nrows) fail_invalid("gather_rows: index out of range");
    out.insert(out.end(), tn.value.begin() + id * C,
               tn.value.begin() + (id + 1) * C);
  }
  auto backward = [C, ids](TensorNode& node) {
    TensorNode& pt = *node.parents[0];
    ensure_grad(pt);
    for (size_t i = 0; i < ids.size(); ++i) {
      for (int64_t c = 0; c < C; ++c) {
        pt.grad[ids[i] * C + c] += node.grad[static_cast<int64_t>(i) * C + c];
      }
    }
  };
  return make_result({static_cast<int64_t>(ids.size()), C}, std::move(out),
                     {table.node()}, backward, "gather_rows");
}

Tensor sequence_nll(const Tensor& logits, const std::vector<int64_t>& targets,
                    const std::vector<char>* valid) {
  if (!logits.defined()) fail_invalid("undefined tensor operand");
  const auto& ln = *logits.node();
  int64_t R = ln.nrows, C = ln.ncols;
  if (static_cast<int64_t>(targets.size()) != R) {
    fail_invalid("sequence_nll: target length does not match rows");
  }
  if (valid && static_cast<int64_t>(valid->size()) != R) {
    fail_invalid("sequence_nll: valid mask length does not match rows");
  }
  std::vector<char> keep(static_cast<size_t>(R), 1);
  if (valid) keep = *valid;
  double loss = 0.0;
  std::vector<double> lse(static_cast<size_t>(R), 0.0);
  for (int64_t r = 0; r < R; ++r) {
    if (!keep[r]) continue;
    int64_t t = targets[r];
    if (t < 0 || t >= C) fail_invalid("sequence_nll: target out of range");
    double m = ln.value[r * C];
    for (int64_t c = 1; c < C; ++c) m = std::max(m, ln.value[r * C + c]);
    double denom = 0.0;
    for (int64_t c = 0; c < C; ++c) denom += std::exp(ln.value[r * C + c] - m);
    lse[r] = m + std::log(denom);
    loss += lse[r] - ln.value[r * C + t];
  }
  auto backward = [R, C, targets, keep = std::move(keep),
                   lse = std::move(lse)](TensorNode& node) {
    TensorNode& pl = *node.parents[0];
    ensure_grad(pl);
    double g = node.grad[0];
    for (int64_t r = 0; r < R; ++r) {
      if (!keep[r]) continue;
      for (int64_t c = 0; c < C; ++c) {
        double p = std::exp(pl.value[r * C + c] - lse[r]);
        pl.grad[r * C + c] += g * (p - (c == targets[r] ? 1.0 : 0.0));
      }
    }
  };
  return make_result({1}, {loss}, {logits.node()}, backward, "sequence_nll");
}

Tensor huber_sum(const Tensor& pred, const std::vector<double>& target,
                 double delta) {
  if (!pred.defined()) fail_invalid("undefined tensor operand");
  const auto& pn = *pred.node();
  if (target.size() != pn.value.size()) {
    fail_invalid("huber_sum: target size mismatch");
  }
  double loss = 0.0;
  for (size_t i = 0; i < target.size(); ++i) {
    double e = pn.value[i] - target[i];
    double ae = std::abs(e);
    loss += ae <= delta ? 0.5 * e * e : delta * (ae - 0.5 * delta);
  }
  auto backward = [target, delta](TensorNode& node) {
    TensorNode& pp = *node.parents[0];
    ensure_grad(pp);
    double g = node.grad[0];
    for (size_t i = 0; i < target.size(); ++i) {
      double e = pp.value[i] - target[i];
      double d = std::abs(e) <= delta ? e : (e > 0.0 ? delta : -delta);
      pp.grad[i] += g * d;
    }
  };
  return make_result({1}, {loss}, {pred.node()}, backward, "huber_sum");
}

Tensor bce_with_logits_sum(const Tensor& logits,
                           const std::vector<double>& targets) {
  if (!logits.defined()) fail_invalid("undefined tensor operand");
  const auto& ln = *logits.node();
  if (targets.size() != ln.value.size()) {
    fail_invalid("bce_with_logits_sum: target size mismatch");
  }
  double loss = 0.0;
  for (size_t i = 0; i < targets.size(); ++i) {
    double z = ln.value[i], t = targets[i];
    loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  auto backward = [targets](TensorNode& node) {
    TensorNode& pl = *node.parents[0];
    ensure_grad(pl);
    double g = node.grad[0];
    for (size_t i = 0; i < targets.size(); ++i) {
      double z = pl.value[i];
      double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                          : std::exp(z) / (1.0 + std::exp(z));
      pl.grad[i] += g * (s - targets[i]);
    }
  };
  return make_result({1}, {loss}, {logits.node()}, backward,
                     "bce_with_logits_sum");
}

void backward(const Tensor& loss) {
  if (!loss.defined()) fail_invalid("undefined tensor operand");
  if (loss.size() != 1) fail_invalid("backward: loss must be a scalar");
  if (!loss.requires_grad()) {
    fail_invalid("backward: loss does not require gradients");
  }
  // Postorder DFS over the requires_grad subgraph; reversed it gives a
  // topological order with each node ahead of its parents.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  struct Frame {
    TensorNode* node;
    size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  for (TensorNode* n : order) ensure_grad(*n);
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

Parameter& ParameterStore::add(const std::string& name, Tensor tensor,
                               bool frozen) {
  if (index_.count(name)) fail_invalid("duplicate parameter name: " + name);
  if (!tensor.defined()) fail_invalid("undefined parameter tensor: " + name);
  if (!tensor.requires_grad()) {
    fail_invalid("parameter tensors must require gradients: " + name);
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->tensor = std::move(tensor);
  p->frozen = frozen;
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

Parameter& ParameterStore::at(const std::string& name) {
  Parameter* p = find(name);
  if (!p) fail_invalid("unknown parameter: " + name);
  return *p;
}

void ParameterStore::freeze_prefix(const std::string& prefix) {
  for (auto& p : params_) {
    if (p->name.rfind(prefix, 0) == 0) p->frozen = true;
  }
}

void ParameterStore::zero_grads() {
  for (auto& p : params_) p->tensor.zero_grad();
}

size_t ParameterStore::total_values() const {
  size_t n = 0;
  for (const auto& p : params_) n += p->tensor.data().size();
  return n;
}

uint64_t ParameterStore::frozen_payload_hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& p : params_) {
    if (!p->frozen) continue;
    h = fnv1a64(p->name.data(), p->name.size(), h);
    h = hash_of_doubles(p->tensor.data(), h);
  }
  return h;
}

}  // namespace c3ca

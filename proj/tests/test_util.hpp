#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tensor.hpp"

namespace testutil {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-6, std::abs(a), std::abs(b)});
}

// Central-difference gradient check. |build| must construct a fresh scalar
// loss from the current leaf payloads each call. Returns the worst relative
// error across every element of every leaf.
inline double max_grad_rel_err(
    const std::function<c3ca::Tensor(const std::vector<c3ca::Tensor>&)>& build,
    std::vector<c3ca::Tensor>& leaves, double eps = 1e-5) {
  for (auto& leaf : leaves) leaf.zero_grad();
  c3ca::Tensor loss = build(leaves);
  c3ca::backward(loss);
  double worst = 0.0;
  for (auto& leaf : leaves) {
    std::vector<double> analytic = leaf.grad();
    auto& data = leaf.mutable_data();
    for (size_t i = 0; i < data.size(); ++i) {
      double keep = data[i];
      data[i] = keep + eps;
      double up = build(leaves).item();
      data[i] = keep - eps;
      double down = build(leaves).item();
      data[i] = keep;
      double fd = (up - down) / (2.0 * eps);
      worst = std::max(worst, rel_err(analytic[i], fd));
    }
  }
  return worst;
}

}  // namespace testutil

#include "contrastive.hpp"

#include <cmath>

#include "common.hpp"

namespace c3ca {

ProjectionHead make_projection_head(ParameterStore& store,
                                    const std::string& name, int64_t in,
                                    int64_t shared_dim, Rng& rng) {
  ProjectionHead head;
  head.fc1 = make_linear(store, name + ".fc1", in, shared_dim, rng);
  head.fc2 = make_linear(store, name + ".fc2", shared_dim, shared_dim, rng);
  return head;
}

Tensor l2_normalize_rows(const Tensor& f) {
  Tensor sq = mul(f, f);
  Tensor ones = Tensor::full({f.cols(), 1}, 1.0);
  Tensor norm2 = matmul(sq, ones);  // rows x 1
  for (double v : norm2.data()) {
    if (v < 1e-24) fail_numeric("cannot normalize a near-zero vector");
  }
  return div(f, sqrt(norm2));
}

Tensor project_and_normalize(const Tensor& f, const ProjectionHead& head) {
  return l2_normalize_rows(linear(relu(linear(f, head.fc1)), head.fc2));
}

Tensor similarity_matrix(const Tensor& scene_feats, const Tensor& text_feats) {
  if (scene_feats.cols() != text_feats.cols()) {
    fail_invalid("similarity_matrix: feature widths differ");
  }
  auto check_unit = [](const Tensor& t, const char* side) {
    for (int64_t r = 0; r < t.rows(); ++r) {
      double n2 = 0.0;
      for (int64_t c = 0; c < t.cols(); ++c) n2 += t.at(r, c) * t.at(r, c);
      if (std::abs(std::sqrt(n2) - 1.0) > 1e-9) {
        fail_invalid(std::string("similarity_matrix: ") + side +
                     " row is not unit-norm");
      }
    }
  };
  check_unit(scene_feats, "scene");
  check_unit(text_feats, "text");
  return matmul(scene_feats, transpose(text_feats));
}

Tensor info_nce(const Tensor& sim, const Tensor& log_temperature) {
  if (sim.rows() != sim.cols()) {
    fail_invalid("info_nce: similarity matrix must be square");
  }
  if (log_temperature.size() != 1) {
    fail_invalid("info_nce: temperature must be scalar");
  }
  int64_t n = sim.rows();
  Tensor logits = div(sim, exp(log_temperature));
  std::vector<int64_t> diagonal(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) diagonal[static_cast<size_t>(i)] = i;
  return scale(sequence_nll(logits, diagonal), 1.0 / static_cast<double>(n));
}

}  // namespace c3ca

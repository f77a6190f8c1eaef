#pragma once

#include <cstdint>

#include "tensor.hpp"
#include "transformer.hpp"

namespace c3ca {

// Projection into the shared alignment space: linear -> relu -> linear,
// then L2 row normalization.
struct ProjectionHead {
  Linear fc1;  // in -> D_s
  Linear fc2;  // D_s -> D_s
};

ProjectionHead make_projection_head(ParameterStore& store,
                                    const std::string& name, int64_t in,
                                    int64_t shared_dim, Rng& rng);

// Rows of |f| projected and normalized to unit length. Raises if any
// projected row has norm below 1e-12.
Tensor project_and_normalize(const Tensor& f, const ProjectionHead& head);

// Plain row normalization without a head (identity-head behaviour).
Tensor l2_normalize_rows(const Tensor& f);

// N x N cosine similarities of unit rows; rejects rows whose norm strays
// from 1 by more than 1e-9.
Tensor similarity_matrix(const Tensor& scene_feats, const Tensor& text_feats);

struct TemperatureClamp {
  double min_tau = 0.01;
  double max_tau = 100.0;
};

// Scene -> text InfoNCE over a square similarity matrix:
//   -(1/N) sum_i log softmax_row_i(sim / tau)[i],  tau = exp(log_temperature).
Tensor info_nce(const Tensor& sim, const Tensor& log_temperature);

}  // namespace c3ca

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geometry.hpp"
#include "json.hpp"
#include "tensor.hpp"

namespace c3ca {

// N x (3+F) row-major point matrix; columns 0..2 are xyz in meters, the
// remaining F columns are per-point features (synthetic default: rgb +
// height).
struct PointCloud {
  int64_t n_points = 0;
  int64_t n_features = 0;
  std::vector<double> data;

  int64_t width() const { return 3 + n_features; }
  double at(int64_t point, int64_t col) const {
    return data[point * width() + col];
  }
  double x(int64_t i) const { return at(i, 0); }
  double y(int64_t i) const { return at(i, 1); }
  double z(int64_t i) const { return at(i, 2); }
};

struct SceneObject {
  Box3D box;
  std::vector<std::string> captions;
};

struct Scene {
  PointCloud cloud;
  std::vector<SceneObject> objects;
};

// Scene JSON: {"points": [[x,y,z,f...],...],
//              "objects": [{"box": {"center": [...], "size": [...]},
//                           "captions": ["...", ...]}, ...]}
Scene load_scene(const std::string& path);
std::string scene_to_json(const Scene& scene);
void save_scene(const std::string& path, const Scene& scene);

Box3D box_from_json(const nlohmann::json& j);
nlohmann::json box_to_json(const Box3D& box);

// Greedy max-min farthest point sampling over xyz. First pick is
// start_index; each later pick maximizes the distance to its nearest
// already-selected center, ties broken by lowest index.
std::vector<int64_t> farthest_point_sample(const PointCloud& cloud, int64_t m,
                                           int64_t start_index);

struct PatchSet {
  std::vector<int64_t> center_indices;    // M
  std::vector<int64_t> neighbor_indices;  // M x K, row-major
  int64_t m = 0;
  int64_t k = 0;
};

// Per center, the K nearest points by Euclidean xyz distance, list sorted
// by (distance, index). The center itself is always a member; if coincident
// lower-index points would crowd it out it replaces the last slot.
PatchSet knn_group(const PointCloud& cloud,
                   const std::vector<int64_t>& center_indices, int64_t k);

// Shared per-point two-layer perceptron, max-pooled over each patch.
struct PatchEmbedNet {
  Tensor w1;  // (3+F) x H
  Tensor b1;  // H
  Tensor w2;  // H x D_p
  Tensor b2;  // D_p
};

// Returns M x D_p patch tokens. Patch xyz is re-centered to the patch
// center before the perceptron; features pass through unchanged.
Tensor embed_patches(const PointCloud& cloud, const PatchSet& patches,
                     const PatchEmbedNet& net);

}  // namespace c3ca

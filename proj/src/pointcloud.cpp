#include "pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "common.hpp"
#include "json.hpp"

namespace c3ca {

namespace {

using nlohmann::json;

double dist2(const PointCloud& cloud, int64_t a, int64_t b) {
  double dx = cloud.x(a) - cloud.x(b);
  double dy = cloud.y(a) - cloud.y(b);
  double dz = cloud.z(a) - cloud.z(b);
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace

Box3D box_from_json(const json& j) {
  Box3D box;
  const auto& c = j.at("center");
  const auto& s = j.at("size");
  if (!c.is_array() || c.size() != 3 || !s.is_array() || s.size() != 3) {
    fail_invalid("box center/size must be 3-element arrays");
  }
  for (int i = 0; i < 3; ++i) {
    box.center[i] = c[i].get<double>();
    box.size[i] = s[i].get<double>();
    if (!(box.size[i] > 0.0)) fail_invalid("box sizes must be positive");
  }
  return box;
}

json box_to_json(const Box3D& box) {
  return json{{"center", {box.center[0], box.center[1], box.center[2]}},
              {"size", {box.size[0], box.size[1], box.size[2]}}};
}

Scene load_scene(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    fail_io("cannot parse scene file " + path + ": " + e.what());
  }
  try {
    Scene scene;
    const auto& pts = j.at("points");
    if (!pts.is_array() || pts.empty()) {
      fail_invalid("scene has no points: " + path);
    }
    int64_t width = static_cast<int64_t>(pts[0].size());
    if (width < 3) fail_invalid("scene points need at least xyz: " + path);
    scene.cloud.n_points = static_cast<int64_t>(pts.size());
    scene.cloud.n_features = width - 3;
    scene.cloud.data.reserve(pts.size() * static_cast<size_t>(width));
    for (const auto& row : pts) {
      if (static_cast<int64_t>(row.size()) != width) {
        fail_invalid("ragged point rows in scene: " + path);
      }
      for (const auto& v : row) {
        double d = v.get<double>();
        if (!std::isfinite(d)) fail_invalid("non-finite point value: " + path);
        scene.cloud.data.push_back(d);
      }
    }
    if (j.contains("objects")) {
      for (const auto& oj : j.at("objects")) {
        SceneObject obj;
        obj.box = box_from_json(oj.at("box"));
        for (const auto& cap : oj.at("captions")) {
          obj.captions.push_back(cap.get<std::string>());
        }
        scene.objects.push_back(std::move(obj));
      }
    }
    return scene;
  } catch (const json::exception& e) {
    fail_io("malformed scene file " + path + ": " + e.what());
  }
}

std::string scene_to_json(const Scene& scene) {
  json pts = json::array();
  int64_t w = scene.cloud.width();
  for (int64_t i = 0; i < scene.cloud.n_points; ++i) {
    json row = json::array();
    for (int64_t c = 0; c < w; ++c) row.push_back(scene.cloud.at(i, c));
    pts.push_back(std::move(row));
  }
  json objs = json::array();
  for (const auto& obj : scene.objects) {
    objs.push_back(json{{"box", box_to_json(obj.box)},
                        {"captions", obj.captions}});
  }
  json j{{"points", std::move(pts)}, {"objects", std::move(objs)}};
  return j.dump();
}

void save_scene(const std::string& path, const Scene& scene) {
  write_text_file_atomic(path, scene_to_json(scene));
}

std::vector<int64_t> farthest_point_sample(const PointCloud& cloud, int64_t m,
                                           int64_t start_index) {
  int64_t n = cloud.n_points;
  if (m < 1 || m > n) fail_invalid("farthest_point_sample: need 1 <= M <= N");
  if (start_index < 0 || start_index >= n) {
    fail_invalid("farthest_point_sample: start index out of range");
  }
  std::vector<int64_t> centers;
  centers.reserve(static_cast<size_t>(m));
  centers.push_back(start_index);
  std::vector<double> nearest(static_cast<size_t>(n),
                              std::numeric_limits<double>::infinity());
  for (int64_t pick = 1; pick < m; ++pick) {
    int64_t last = centers.back();
    for (int64_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], dist2(cloud, i, last));
    }
    int64_t best = -1;
    double best_d = -1.0;
    for (int64_t i = 0; i < n; ++i) {
      if (nearest[i] > best_d) {
        best_d = nearest[i];
        best = i;
      }
    }
    centers.push_back(best);
  }
  return centers;
}

PatchSet knn_group(const PointCloud& cloud,
                   const std::vector<int64_t>& center_indices, int64_t k) {
  int64_t n = cloud.n_points;
  if (k < 1 || k > n) fail_invalid("knn_group: need 1 <= K <= N");
  PatchSet out;
  out.m = static_cast<int64_t>(center_indices.size());
  out.k = k;
  out.center_indices = center_indices;
  out.neighbor_indices.reserve(static_cast<size_t>(out.m * k));
  std::vector<std::pair<double, int64_t>> order(static_cast<size_t>(n));
  for (int64_t c : center_indices) {
    if (c < 0 || c >= n) fail_invalid("knn_group: center index out of range");
    for (int64_t i = 0; i < n; ++i) order[i] = {dist2(cloud, i, c), i};
    std::sort(order.begin(), order.end());
    bool has_center = false;
    for (int64_t i = 0; i < k; ++i) {
      if (order[i].second == c) has_center = true;
    }
    for (int64_t i = 0; i < k; ++i) out.neighbor_indices.push_back(order[i].second);
    if (!has_center) out.neighbor_indices.back() = c;
  }
  return out;
}

Tensor embed_patches(const PointCloud& cloud, const PatchSet& patches,
                     const PatchEmbedNet& net) {
  int64_t width = cloud.width();
  if (net.w1.rows() != width) {
    fail_invalid("embed_patches: net input width must equal 3 + feature count");
  }
  std::vector<Tensor> pooled;
  pooled.reserve(static_cast<size_t>(patches.m));
  for (int64_t p = 0; p < patches.m; ++p) {
    int64_t c = patches.center_indices[p];
    std::vector<double> rows(static_cast<size_t>(patches.k * width));
    for (int64_t j = 0; j < patches.k; ++j) {
      int64_t idx = patches.neighbor_indices[p * patches.k + j];
      rows[j * width + 0] = cloud.x(idx) - cloud.x(c);
      rows[j * width + 1] = cloud.y(idx) - cloud.y(c);
      rows[j * width + 2] = cloud.z(idx) - cloud.z(c);
      for (int64_t f = 3; f < width; ++f) rows[j * width + f] = cloud.at(idx, f);
    }
    Tensor x = Tensor::matrix(patches.k, width, std::move(rows));
    Tensor h = relu(add(matmul(x, net.w1), net.b1));
    Tensor e = add(matmul(h, net.w2), net.b2);
    pooled.push_back(max_over_rows(e));
  }
  return concat_rows(pooled);
}

}  // namespace c3ca

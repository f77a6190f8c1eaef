#include "synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "common.hpp"

namespace c3ca {

namespace fs = std::filesystem;

const std::vector<std::string> kShapeNames{"box", "sphere", "cylinder"};
const std::vector<std::string> kColorNames{"red",    "green", "blue",
                                           "yellow", "white", "black"};
const std::vector<std::string> kRelationNames{
    "left of", "right of", "behind", "in front of", "above", "next to"};

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kMinMargin = 0.2;  // meters between related objects

enum Shape { kBox = 0, kSphere = 1, kCylinder = 2 };
enum Rel {
  kLeftOf = 0,
  kRightOf = 1,
  kBehind = 2,
  kInFrontOf = 3,
  kAbove = 4,
  kNextTo = 5
};

const std::array<std::array<double, 3>, 6> kColorRgb{{{1, 0, 0},
                                                      {0, 1, 0},
                                                      {0, 0, 1},
                                                      {1, 1, 0},
                                                      {1, 1, 1},
                                                      {0, 0, 0}}};

// "below" is not in the relation vocabulary, so "above" has no inverse.
int inverse_relation(int rel) {
  switch (rel) {
    case kLeftOf:
      return kRightOf;
    case kRightOf:
      return kLeftOf;
    case kBehind:
      return kInFrontOf;
    case kInFrontOf:
      return kBehind;
    case kNextTo:
      return kNextTo;
    default:
      return -1;
  }
}

struct ObjDef {
  int shape = 0;
  int color = 0;
  Box3D box;  // bounding box; center filled in at placement
};

bool boxes_intersect(const Box3D& a, const Box3D& b) {
  for (int axis = 0; axis < 3; ++axis) {
    if (std::min(a.hi(axis), b.hi(axis)) -
            std::max(a.lo(axis), b.lo(axis)) <=
        0.0) {
      return false;
    }
  }
  return true;
}

std::array<double, 3> sample_size(Rng& rng, int shape) {
  if (shape == kSphere) {
    double d = rng.uniform(0.25, 0.55);
    return {d, d, d};
  }
  if (shape == kCylinder) {
    double d = rng.uniform(0.2, 0.5);
    double h = rng.uniform(0.25, 0.6);
    return {d, d, h};
  }
  return {rng.uniform(0.2, 0.6), rng.uniform(0.2, 0.6),
          rng.uniform(0.2, 0.6)};
}

// Center for `obj` so that "obj is <rel> anchor" holds with an edge gap of
// at least kMinMargin. Horizontal relations rest on the ground plane.
std::array<double, 3> relation_center(Rng& rng, const ObjDef& obj, int rel,
                                      const Box3D& anchor) {
  double gap = rng.uniform(kMinMargin, kMinMargin + 0.15);
  double jitter = rng.uniform(-0.1, 0.1);
  const auto& s = obj.box.size;
  double rest_z = 0.5 * s[2];
  auto beside = [&](int axis, double sign) {
    std::array<double, 3> c{anchor.center[0], anchor.center[1], rest_z};
    c[axis] = anchor.center[axis] +
              sign * (gap + 0.5 * (s[axis] + anchor.size[axis]));
    c[1 - axis] += jitter;
    return c;
  };
  switch (rel) {
    case kLeftOf:
      return beside(0, -1.0);
    case kRightOf:
      return beside(0, 1.0);
    case kBehind:
      return beside(1, 1.0);
    case kInFrontOf:
      return beside(1, -1.0);
    case kAbove:
      return {anchor.center[0] + 0.25 * jitter,
              anchor.center[1] + 0.25 * jitter,
              anchor.hi(2) + gap + 0.5 * s[2]};
    default: {  // next to: either horizontal axis, either side
      int axis = rng.below(2) == 0 ? 0 : 1;
      double sign = rng.below(2) == 0 ? -1.0 : 1.0;
      return beside(axis, sign);
    }
  }
}

void append_point(PointCloud& cloud, double x, double y, double z,
                  const std::array<double, 3>& rgb) {
  cloud.data.push_back(x);
  cloud.data.push_back(y);
  cloud.data.push_back(z);
  cloud.data.push_back(rgb[0]);
  cloud.data.push_back(rgb[1]);
  cloud.data.push_back(rgb[2]);
  cloud.data.push_back(z);  // height feature
  cloud.n_points += 1;
}

void sample_box_surface(Rng& rng, const Box3D& box,
                        const std::array<double, 3>& rgb, int64_t count,
                        PointCloud& cloud) {
  const auto& s = box.size;
  std::array<double, 3> areas{s[1] * s[2], s[0] * s[2], s[0] * s[1]};
  double total = 2.0 * (areas[0] + areas[1] + areas[2]);
  for (int64_t i = 0; i < count; ++i) {
    double u = rng.uniform(0.0, total);
    int face = 5;
    double acc = 0.0;
    for (int f = 0; f < 6; ++f) {
      acc += areas[static_cast<size_t>(f / 2)];
      if (u <= acc) {
        face = f;
        break;
      }
    }
    int face_axis = face / 2;
    double sign = face % 2 == 0 ? -1.0 : 1.0;
    std::array<double, 3> p;
    p[face_axis] = box.center[face_axis] + sign * 0.5 * s[face_axis];
    int a = (face_axis + 1) % 3;
    int b = (face_axis + 2) % 3;
    p[a] = box.center[a] + rng.uniform(-0.5, 0.5) * s[a];
    p[b] = box.center[b] + rng.uniform(-0.5, 0.5) * s[b];
    append_point(cloud, p[0], p[1], p[2], rgb);
  }
}

void sample_sphere_surface(Rng& rng, const Box3D& box,
                           const std::array<double, 3>& rgb, int64_t count,
                           PointCloud& cloud) {
  double r = 0.5 * box.size[0];
  for (int64_t i = 0; i < count; ++i) {
    double dx, dy, dz, norm;
    do {
      dx = rng.normal();
      dy = rng.normal();
      dz = rng.normal();
      norm = std::sqrt(dx * dx + dy * dy + dz * dz);
    } while (norm < 1e-9);
    append_point(cloud, box.center[0] + r * dx / norm,
                 box.center[1] + r * dy / norm,
                 box.center[2] + r * dz / norm, rgb);
  }
}

void sample_cylinder_surface(Rng& rng, const Box3D& box,
                             const std::array<double, 3>& rgb, int64_t count,
                             PointCloud& cloud) {
  double r = 0.5 * box.size[0];
  double h = box.size[2];
  double lateral = 2.0 * kPi * r * h;
  double cap = kPi * r * r;
  double total = lateral + 2.0 * cap;
  for (int64_t i = 0; i < count; ++i) {
    double u = rng.uniform(0.0, total);
    double theta = rng.uniform(0.0, 2.0 * kPi);
    if (u < lateral) {
      double z = rng.uniform(-0.5, 0.5) * h;
      append_point(cloud, box.center[0] + r * std::cos(theta),
                   box.center[1] + r * std::sin(theta), box.center[2] + z,
                   rgb);
    } else {
      double rho = r * std::sqrt(rng.uniform());
      double z = u < lateral + cap ? -0.5 * h : 0.5 * h;
      append_point(cloud, box.center[0] + rho * std::cos(theta),
                   box.center[1] + rho * std::sin(theta), box.center[2] + z,
                   rgb);
    }
  }
}

std::string attribute_caption(const ObjDef& obj) {
  return "a " + kColorNames[obj.color] + " " + kShapeNames[obj.shape];
}

std::string relation_caption(const ObjDef& subject, int rel,
                             const ObjDef& object) {
  return "the " + kColorNames[subject.color] + " " +
         kShapeNames[subject.shape] + " is " + kRelationNames[rel] + " the " +
         kColorNames[object.color] + " " + kShapeNames[object.shape];
}

void check_spec(const SynthSpec& spec) {
  if (spec.min_objects < 1 || spec.max_objects > 4 ||
      spec.min_objects > spec.max_objects) {
    fail_invalid("scene spec: object count range must lie within [1,4]");
  }
  if (spec.points_per_scene < 8) {
    fail_invalid("scene spec: need at least 8 points per scene");
  }
}

}  // namespace

Scene generate_scene(const SynthSpec& spec, uint64_t seed, int64_t index) {
  check_spec(spec);
  if (index < 0) fail_invalid("scene index must be non-negative");
  Rng rng(derive_seed(seed, "scene_" + std::to_string(index)));
  int64_t n_objects =
      spec.min_objects +
      static_cast<int64_t>(rng.below(
          static_cast<uint64_t>(spec.max_objects - spec.min_objects + 1)));

  // Distinct (color, shape) pairs keep every caption unambiguous.
  std::vector<ObjDef> objects(static_cast<size_t>(n_objects));
  auto combos = rng.sample_without_replacement(
      kColorNames.size() * kShapeNames.size(),
      static_cast<size_t>(n_objects));
  for (size_t i = 0; i < objects.size(); ++i) {
    objects[i].color = static_cast<int>(combos[i] / kShapeNames.size());
    objects[i].shape = static_cast<int>(combos[i] % kShapeNames.size());
    objects[i].box.size = sample_size(rng, objects[i].shape);
  }

  // Chain layout, placed back to front: object i is relations[i] object i+1,
  // so object 0 always owns a relational caption in multi-object scenes.
  std::vector<int> relations(objects.size(), -1);
  size_t last = objects.size() - 1;
  objects[last].box.center = {rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8),
                              0.5 * objects[last].box.size[2]};
  for (size_t i = last; i-- > 0;) {
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      int rel = static_cast<int>(rng.below(kRelationNames.size()));
      auto center = relation_center(rng, objects[i], rel, objects[i + 1].box);
      Box3D candidate = objects[i].box;
      candidate.center = center;
      placed = true;
      for (size_t other = i + 1; other < objects.size(); ++other) {
        if (boxes_intersect(candidate, objects[other].box)) {
          placed = false;
          break;
        }
      }
      if (placed) {
        objects[i].box = candidate;
        relations[i] = rel;
      }
    }
    if (!placed) {
      // Deterministic fallback: walk further down the +x axis, which can
      // never collide with the existing layout.
      double max_x = -1e300;
      for (size_t other = i + 1; other < objects.size(); ++other) {
        max_x = std::max(max_x, objects[other].box.hi(0));
      }
      relations[i] = kRightOf;
      objects[i].box.center = {max_x + kMinMargin + 0.5 * objects[i].box.size[0],
                               objects[i + 1].box.center[1],
                               0.5 * objects[i].box.size[2]};
    }
  }

  Scene scene;
  scene.cloud.n_features = 4;

  // Ground plane takes a quarter of the budget.
  int64_t n_floor = spec.points_per_scene / 4;
  const std::array<double, 3> kFloorRgb{0.5, 0.5, 0.5};
  for (int64_t i = 0; i < n_floor; ++i) {
    append_point(scene.cloud, rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0),
                 0.0, kFloorRgb);
  }
  int64_t remaining = spec.points_per_scene - n_floor;
  int64_t base = remaining / n_objects;
  int64_t extra = remaining % n_objects;
  for (size_t i = 0; i < objects.size(); ++i) {
    int64_t count = base + (static_cast<int64_t>(i) < extra ? 1 : 0);
    const auto& rgb = kColorRgb[static_cast<size_t>(objects[i].color)];
    if (objects[i].shape == kSphere) {
      sample_sphere_surface(rng, objects[i].box, rgb, count, scene.cloud);
    } else if (objects[i].shape == kCylinder) {
      sample_cylinder_surface(rng, objects[i].box, rgb, count, scene.cloud);
    } else {
      sample_box_surface(rng, objects[i].box, rgb, count, scene.cloud);
    }
  }

  for (size_t i = 0; i < objects.size(); ++i) {
    SceneObject out;
    out.box = objects[i].box;
    if (i + 1 < objects.size()) {
      out.captions.push_back(
          relation_caption(objects[i], relations[i], objects[i + 1]));
    }
    if (i > 0) {
      int inv = inverse_relation(relations[i - 1]);
      if (inv >= 0) {
        out.captions.push_back(
            relation_caption(objects[i], inv, objects[i - 1]));
      }
    }
    out.captions.push_back(attribute_caption(objects[i]));
    scene.objects.push_back(std::move(out));
  }
  return scene;
}

void generate_dataset(const std::string& dir, int64_t count, uint64_t seed,
                      const SynthSpec& spec) {
  check_spec(spec);
  if (count < 1) fail_invalid("dataset count must be at least 1");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail_io("cannot create dataset directory " + dir);
  nlohmann::json scenes = nlohmann::json::array();
  for (int64_t i = 0; i < count; ++i) {
    Scene scene = generate_scene(spec, seed, i);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%05lld.json",
                  static_cast<long long>(i));
    save_scene(dir + "/" + name, scene);
    scenes.push_back({{"index", i},
                      {"file", std::string(name)},
                      {"split", split_name(split_of_index(i))}});
  }
  nlohmann::json manifest{{"count", count},
                          {"seed", seed},
                          {"spec",
                           {{"min_objects", spec.min_objects},
                            {"max_objects", spec.max_objects},
                            {"points_per_scene", spec.points_per_scene}}},
                          {"scenes", scenes}};
  write_text_file_atomic(dir + "/manifest.json", manifest.dump(2) + "\n");
}

Split split_of_index(int64_t index) {
  int64_t slot = index % 10;
  if (slot < 8) return Split::kTrain;
  return slot == 8 ? Split::kVal : Split::kTest;
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  if (name == "all") return Split::kAll;
  fail_invalid("unknown split: " + name + " (want train|val|test|all)");
}

std::string split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kAll: return "all";
  }
  fail_invalid("split_name: bad split value");
}

std::vector<DatasetEntry> list_dataset(const std::string& dir, Split split) {
  if (!fs::is_directory(dir)) {
    fail_io("dataset directory not found: " + dir);
  }
  std::vector<DatasetEntry> entries;
  for (const auto& item : fs::directory_iterator(dir)) {
    if (!item.is_regular_file()) continue;
    std::string name = item.path().filename().string();
    if (name.rfind("scene_", 0) != 0 || name.size() <= 11 ||
        name.substr(name.size() - 5) != ".json") {
      continue;
    }
    std::string digits = name.substr(6, name.size() - 11);
    if (digits.empty() || digits.size() > 9 ||
        digits.find_first_not_of("0123456789") != std::string::npos) {
      continue;
    }
    int64_t index = std::stoll(digits);
    if (split != Split::kAll && split_of_index(index) != split) continue;
    entries.push_back({index, name.substr(0, name.size() - 5),
                       item.path().string()});
  }
  std::sort(entries.begin(), entries.end(),
            [](const DatasetEntry& a, const DatasetEntry& b) {
              return a.index < b.index;
            });
  return entries;
}

}  // namespace c3ca

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pointcloud.hpp"

namespace c3ca {

// Synthetic desk scenes: 1-4 colored primitives resting on a ground plane,
// annotated with template captions ("a <color> <shape>" / "the <color>
// <shape> is <relation> the <color> <shape>").
struct SynthSpec {
  int64_t min_objects = 1;
  int64_t max_objects = 4;
  int64_t points_per_scene = 1024;
};

extern const std::vector<std::string> kShapeNames;
extern const std::vector<std::string> kColorNames;
extern const std::vector<std::string> kRelationNames;

// Deterministic per (seed, index); object 0 carries the scene's primary
// caption (relational whenever the scene has two or more objects).
Scene generate_scene(const SynthSpec& spec, uint64_t seed, int64_t index);

// Writes scene_<index>.json files under dir (created if missing), plus a
// manifest.json recording the spec, seed and per-scene split assignment.
void generate_dataset(const std::string& dir, int64_t count, uint64_t seed,
                      const SynthSpec& spec);

enum class Split { kTrain, kVal, kTest, kAll };

Split split_of_index(int64_t index);
Split split_from_name(const std::string& name);
std::string split_name(Split split);

struct DatasetEntry {
  int64_t index = 0;
  std::string scene_id;  // file stem, e.g. "scene_00012"
  std::string path;
};

// Scene files in dir belonging to the split, sorted by index. Scenes are
// assigned 80/10/10 by index modulo 10 (8 -> val, 9 -> test).
std::vector<DatasetEntry> list_dataset(const std::string& dir, Split split);

}  // namespace c3ca

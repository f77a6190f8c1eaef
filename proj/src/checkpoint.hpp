#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace c3ca {

// Binary tensor container. Layout, all integers little-endian:
//   magic "C3CA" | u32 version
// then one record per tensor until EOF:
//   u32 name_len | name bytes | u8 frozen | u32 rank | u64 dims[rank]
//   | f64 payload[prod(dims)]
// Records whose name starts with "__" carry trainer state (optimizer
// moments, step counters) rather than model parameters.

struct CheckpointRecord {
  std::string name;
  bool frozen = false;
  Shape shape;
  std::vector<double> data;
};

inline constexpr uint32_t kCheckpointVersion = 1;

// Writes to a temp file in the same directory, then renames into place.
void save_checkpoint(const std::string& path,
                     const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> load_checkpoint(const std::string& path);

}  // namespace c3ca

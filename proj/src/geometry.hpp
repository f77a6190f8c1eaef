#pragma once

#include <algorithm>
#include <array>

namespace c3ca {

// Axis-aligned box, center/size in meters.
struct Box3D {
  std::array<double, 3> center{0, 0, 0};
  std::array<double, 3> size{1, 1, 1};

  double lo(int axis) const { return center[axis] - 0.5 * size[axis]; }
  double hi(int axis) const { return center[axis] + 0.5 * size[axis]; }
  double volume() const { return size[0] * size[1] * size[2]; }
};

inline double iou3d(const Box3D& a, const Box3D& b) {
  double inter = 1.0;
  for (int axis = 0; axis < 3; ++axis) {
    double w = std::min(a.hi(axis), b.hi(axis)) -
               std::max(a.lo(axis), b.lo(axis));
    if (w <= 0.0) return 0.0;
    inter *= w;
  }
  return inter / (a.volume() + b.volume() - inter);
}

}  // namespace c3ca

#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace neurohybrid {

// Dense 3-d volume, x fastest (index = x + nx*(y + ny*z)), spacing in mm.
template <typename T>
struct Volume3D {
  int64_t nx = 0, ny = 0, nz = 0;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<T> data;

  Volume3D() = default;
  Volume3D(int64_t x, int64_t y, int64_t z, double sp = 1.0)
      : nx(x), ny(y), nz(z), spacing{sp, sp, sp}, data(static_cast<size_t>(x * y * z), T(0)) {}

  int64_t count() const { return nx * ny * nz; }
  double voxel_volume() const { return spacing[0] * spacing[1] * spacing[2]; }

  T& at(int64_t x, int64_t y, int64_t z) { return data[static_cast<size_t>(x + nx * (y + ny * z))]; }
  const T& at(int64_t x, int64_t y, int64_t z) const {
    return data[static_cast<size_t>(x + nx * (y + ny * z))];
  }
};

}  // namespace neurohybrid

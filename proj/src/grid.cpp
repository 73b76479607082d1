#include "coroseg/grid.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace coroseg {

std::string to_string(const Dims& d) { return fmt::format("{}x{}x{}", d.nx, d.ny, d.nz); }

std::string to_string(const Spacing& s) {
  return fmt::format("({}, {}, {})", s.sx, s.sy, s.sz);
}

void validate_volume(const Volume& v) {
  const auto vals = v.values();
  const auto it = std::find_if(vals.begin(), vals.end(), [](float x) { return !std::isfinite(x); });
  if (it != vals.end()) {
    throw ValidationError(fmt::format("non-finite intensity at voxel offset {}", it - vals.begin()));
  }
}

void validate_mask(const Mask& m) {
  const auto vals = m.values();
  const auto it = std::find_if(vals.begin(), vals.end(), [](std::uint8_t x) { return x > 1; });
  if (it != vals.end()) {
    throw ValidationError(fmt::format("mask value {} at voxel offset {} is not binary",
                                      static_cast<int>(*it), it - vals.begin()));
  }
}

std::int64_t count_foreground(const Mask& m) {
  return std::count_if(m.values().begin(), m.values().end(), [](std::uint8_t x) { return x != 0; });
}

}  // namespace coroseg

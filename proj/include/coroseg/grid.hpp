#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "coroseg/errors.hpp"

namespace coroseg {

/// Voxel extents along x, y, z.
struct Dims {
  std::int64_t nx = 0;
  std::int64_t ny = 0;
  std::int64_t nz = 0;

  std::int64_t count() const { return nx * ny * nz; }
  std::int64_t operator[](int axis) const { return axis == 0 ? nx : (axis == 1 ? ny : nz); }
  bool operator==(const Dims&) const = default;
};

/// Physical voxel size in millimetres.
struct Spacing {
  double sx = 1.0;
  double sy = 1.0;
  double sz = 1.0;

  double operator[](int axis) const { return axis == 0 ? sx : (axis == 1 ? sy : sz); }
  bool operator==(const Spacing&) const = default;
};

using Index3 = std::array<std::int64_t, 3>;

std::string to_string(const Dims& d);
std::string to_string(const Spacing& s);

inline void validate_spacing(const Spacing& s) {
  if (!(s.sx > 0.0 && s.sy > 0.0 && s.sz > 0.0) ||
      !std::isfinite(s.sx) || !std::isfinite(s.sy) || !std::isfinite(s.sz)) {
    throw ValidationError("spacing must be positive and finite, got " + to_string(s));
  }
}

inline void validate_dims(const Dims& d) {
  if (d.nx <= 0 || d.ny <= 0 || d.nz <= 0) {
    throw ValidationError("dims must be positive, got " + to_string(d));
  }
}

/// Dense 3D grid stored x-fastest: index = x + nx * (y + ny * z).
template <typename T>
class Grid3 {
 public:
  using value_type = T;

  Grid3() = default;
  Grid3(Dims dims, Spacing spacing, T fill = T{})
      : dims_(dims), spacing_(spacing) {
    validate_dims(dims_);
    validate_spacing(spacing_);
    data_.assign(static_cast<std::size_t>(dims_.count()), fill);
  }
  Grid3(Dims dims, Spacing spacing, std::vector<T> data)
      : dims_(dims), spacing_(spacing), data_(std::move(data)) {
    validate_dims(dims_);
    validate_spacing(spacing_);
    if (static_cast<std::int64_t>(data_.size()) != dims_.count()) {
      throw ShapeError("grid data size " + std::to_string(data_.size()) +
                       " does not match dims " + to_string(dims_));
    }
  }

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  void set_spacing(Spacing s) {
    validate_spacing(s);
    spacing_ = s;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::int64_t offset(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x + dims_.nx * (y + dims_.ny * z);
  }
  Index3 index_of(std::int64_t offset) const {
    const std::int64_t x = offset % dims_.nx;
    const std::int64_t yz = offset / dims_.nx;
    return {x, yz % dims_.ny, yz / dims_.ny};
  }
  bool contains(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims_.nx && y < dims_.ny && z < dims_.nz;
  }

  T& operator()(std::int64_t x, std::int64_t y, std::int64_t z) { return data_[offset(x, y, z)]; }
  const T& operator()(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return data_[offset(x, y, z)];
  }
  T& operator[](std::int64_t i) { return data_[i]; }
  const T& operator[](std::int64_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool operator==(const Grid3&) const = default;

 private:
  Dims dims_{};
  Spacing spacing_{};
  std::vector<T> data_;
};

/// CT-like intensity image.
using Volume = Grid3<float>;
/// Binary label grid aligned with a Volume.
using Mask = Grid3<std::uint8_t>;

/// Throws ValidationError unless every intensity is finite.
void validate_volume(const Volume& v);
/// Throws ValidationError unless every value is 0 or 1.
void validate_mask(const Mask& m);

std::int64_t count_foreground(const Mask& m);

inline void require_same_dims(const Dims& a, const Dims& b, const char* what) {
  if (!(a == b)) {
    throw ShapeError(std::string(what) + ": dims " + to_string(a) + " vs " + to_string(b));
  }
}

}  // namespace coroseg

#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "coroseg/grid.hpp"

namespace coroseg {

/// Gaussian intensity model, image units.
struct IntensityModel {
  double mean = 0.0;
  double std = 0.0;
};

/// Recipe for a synthetic vessel tree. Radii are in voxels.
struct PhantomSpec {
  std::uint64_t seed = 0;
  Dims dims{64, 64, 64};
  Spacing spacing{0.35, 0.35, 0.625};
  int n_branches = 3;
  double r_min = 1.0;
  double r_max = 3.0;
  IntensityModel vessel{400.0, 30.0};
  IntensityModel background{100.0, 30.0};
};

/// Throws ValidationError when the spec cannot produce a phantom.
void validate(const PhantomSpec& spec);

using Point3 = std::array<double, 3>;

/// One tube: a smoothed centerline (voxel coordinates) and its radius.
struct Branch {
  std::vector<Point3> centerline;
  double radius = 0.0;

  double length() const;
};

struct Phantom {
  Volume image;
  Mask label;
  std::vector<Branch> branches;
};

/// Euclidean distance from p to the segment [a, b].
double distance_to_segment(const Point3& p, const Point3& a, const Point3& b);

/// Builds `n_branches` random-walk centerlines, rasterizes the union of
/// their swept tubes into the label, and fills the image with background
/// noise plus elevated vessel intensity inside the label. Pure in `spec`.
Phantom generate_phantom(const PhantomSpec& spec);

}  // namespace coroseg

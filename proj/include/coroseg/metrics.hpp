#pragma once

#include <optional>
#include <string>
#include <vector>

#include "coroseg/grid.hpp"
#include "coroseg/phantom.hpp"

namespace coroseg {

/// Points in millimetres (voxel index times spacing).
using SurfacePointSet = std::vector<Point3>;

/// Which voxels of a mask enter the distance computation.
enum class PointSetMode {
  Surface,    ///< foreground voxels with a 6-connected background or out-of-bounds neighbour
  AllVoxels,  ///< every foreground voxel
};

struct MetricReport {
  std::string case_id;
  double dice = 0.0;
  std::optional<double> hd95;  ///< empty when either surface is empty
  std::optional<double> hd;

  bool undefined() const { return !hd95.has_value(); }
};

/// 2|A∩B| / (|A|+|B|); 1.0 when both masks are empty.
double dice(const Mask& a, const Mask& b);

SurfacePointSet surface_points(const Mask& mask);
SurfacePointSet point_set(const Mask& mask, PointSetMode mode);

/// For every point of `from`, the Euclidean distance to the nearest point of
/// `to`, in the order of `from`. Exact nearest neighbour via a k-d tree.
std::vector<double> directed_distances(const SurfacePointSet& from, const SurfacePointSet& to);

/// Linear interpolation between closest ranks: position q*(n-1) in sorted order.
double percentile_linear(std::vector<double> values, double q);

/// Symmetric Hausdorff distance in mm. Throws UndefinedMetric on an empty set.
double hausdorff(const Mask& a, const Mask& b, PointSetMode mode = PointSetMode::Surface);

/// Max over both directions of the 95th percentile of directed distances.
double hd95(const Mask& a, const Mask& b, PointSetMode mode = PointSetMode::Surface);

/// Dice plus HD/HD95, recording undefined distances instead of throwing.
MetricReport evaluate_case(const std::string& case_id, const Mask& prediction, const Mask& truth,
                           PointSetMode mode = PointSetMode::Surface);

}  // namespace coroseg

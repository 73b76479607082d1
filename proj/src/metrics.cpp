#include "coroseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace coroseg {

namespace {

double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

/// Static 3D k-d tree over a borrowed point array.
class KdTree {
 public:
  explicit KdTree(const SurfacePointSet& pts) : pts_(pts), order_(pts.size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    build(0, order_.size(), 0);
  }

  double nearest_squared(const Point3& q) const {
    double best = std::numeric_limits<double>::infinity();
    search(0, order_.size(), 0, q, best);
    return best;
  }

 private:
  void build(std::size_t lo, std::size_t hi, int axis) {
    if (hi - lo <= kLeafSize) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(lo), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(hi),
                     [&](std::size_t i, std::size_t j) { return pts_[i][axis] < pts_[j][axis]; });
    build(lo, mid, (axis + 1) % 3);
    build(mid + 1, hi, (axis + 1) % 3);
  }

  void search(std::size_t lo, std::size_t hi, int axis, const Point3& q, double& best) const {
    if (hi - lo <= kLeafSize) {
      for (std::size_t i = lo; i < hi; ++i) best = std::min(best, squared_distance(q, pts_[order_[i]]));
      return;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    const Point3& pivot = pts_[order_[mid]];
    best = std::min(best, squared_distance(q, pivot));
    const double delta = q[axis] - pivot[axis];
    const int next = (axis + 1) % 3;
    if (delta < 0) {
      search(lo, mid, next, q, best);
      if (delta * delta <= best) search(mid + 1, hi, next, q, best);
    } else {
      search(mid + 1, hi, next, q, best);
      if (delta * delta <= best) search(lo, mid, next, q, best);
    }
  }

  static constexpr std::size_t kLeafSize = 8;
  const SurfacePointSet& pts_;
  std::vector<std::size_t> order_;
};

void require_comparable(const Mask& a, const Mask& b) {
  require_same_dims(a.dims(), b.dims(), "metric inputs");
  if (!(a.spacing() == b.spacing())) {
    throw ValidationError("metric inputs have different spacing: " + to_string(a.spacing()) + " vs " +
                          to_string(b.spacing()));
  }
}

std::pair<std::vector<double>, std::vector<double>> both_directions(const Mask& a, const Mask& b,
                                                                    PointSetMode mode) {
  require_comparable(a, b);
  const SurfacePointSet pa = point_set(a, mode);
  const SurfacePointSet pb = point_set(b, mode);
  if (pa.empty() || pb.empty()) {
    throw UndefinedMetric("distance metric undefined: " + std::string(pa.empty() ? "first" : "second") +
                          " point set is empty");
  }
  return {directed_distances(pa, pb), directed_distances(pb, pa)};
}

}  // namespace

double dice(const Mask& a, const Mask& b) {
  require_same_dims(a.dims(), b.dims(), "dice");
  std::int64_t inter = 0, na = 0, nb = 0;
  const auto va = a.values();
  const auto vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i) {
    const bool x = va[i] != 0;
    const bool y = vb[i] != 0;
    na += x;
    nb += y;
    inter += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

SurfacePointSet point_set(const Mask& mask, PointSetMode mode) {
  const Dims& d = mask.dims();
  const Spacing& s = mask.spacing();
  SurfacePointSet out;
  for (std::int64_t z = 0; z < d.nz; ++z) {
    for (std::int64_t y = 0; y < d.ny; ++y) {
      for (std::int64_t x = 0; x < d.nx; ++x) {
        if (!mask(x, y, z)) continue;
        if (mode == PointSetMode::Surface) {
          auto bg = [&](std::int64_t i, std::int64_t j, std::int64_t k) {
            return !mask.contains(i, j, k) || mask(i, j, k) == 0;
          };
          const bool boundary = bg(x - 1, y, z) || bg(x + 1, y, z) || bg(x, y - 1, z) || bg(x, y + 1, z) ||
                                bg(x, y, z - 1) || bg(x, y, z + 1);
          if (!boundary) continue;
        }
        out.push_back({static_cast<double>(x) * s.sx, static_cast<double>(y) * s.sy, static_cast<double>(z) * s.sz});
      }
    }
  }
  return out;
}

SurfacePointSet surface_points(const Mask& mask) { return point_set(mask, PointSetMode::Surface); }

std::vector<double> directed_distances(const SurfacePointSet& from, const SurfacePointSet& to) {
  if (to.empty()) throw UndefinedMetric("directed distance to an empty set");
  const KdTree tree(to);
  std::vector<double> out;
  out.reserve(from.size());
  for (const auto& p : from) out.push_back(std::sqrt(tree.nearest_squared(p)));
  return out;
}

double percentile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw UndefinedMetric("percentile of an empty distribution");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double hausdorff(const Mask& a, const Mask& b, PointSetMode mode) {
  const auto [ab, ba] = both_directions(a, b, mode);
  return std::max(*std::max_element(ab.begin(), ab.end()), *std::max_element(ba.begin(), ba.end()));
}

double hd95(const Mask& a, const Mask& b, PointSetMode mode) {
  auto [ab, ba] = both_directions(a, b, mode);
  return std::max(percentile_linear(std::move(ab), 0.95), percentile_linear(std::move(ba), 0.95));
}

MetricReport evaluate_case(const std::string& case_id, const Mask& prediction, const Mask& truth,
                           PointSetMode mode) {
  MetricReport r;
  r.case_id = case_id;
  r.dice = dice(prediction, truth);
  try {
    auto [ab, ba] = both_directions(prediction, truth, mode);
    r.hd = std::max(*std::max_element(ab.begin(), ab.end()), *std::max_element(ba.begin(), ba.end()));
    r.hd95 = std::max(percentile_linear(std::move(ab), 0.95), percentile_linear(std::move(ba), 0.95));
  } catch (const UndefinedMetric&) {
    r.hd.reset();
    r.hd95.reset();
  }
  return r;
}

}  // namespace coroseg

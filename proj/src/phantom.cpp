#include "coroseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

namespace coroseg {

namespace {

constexpr double kStepLength = 1.5;
constexpr double kDirectionJitter = 0.35;
constexpr int kSmoothingWindow = 5;

Point3 add(const Point3& a, const Point3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Point3 sub(const Point3& a, const Point3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Point3 scale(const Point3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double dot(const Point3& a, const Point3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Point3& a) { return std::sqrt(dot(a, a)); }

Point3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    Point3 v{g(rng), g(rng), g(rng)};
    const double n = norm(v);
    if (n > 1e-9) return scale(v, 1.0 / n);
  }
}

std::vector<Point3> random_walk(std::mt19937_64& rng, const Point3& lo, const Point3& hi, int steps) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  Point3 p{};
  for (int a = 0; a < 3; ++a) p[a] = lo[a] + u(rng) * (hi[a] - lo[a]);
  Point3 dir = random_unit(rng);

  std::vector<Point3> pts{p};
  pts.reserve(static_cast<std::size_t>(steps) + 1);
  for (int s = 0; s < steps; ++s) {
    dir = add(dir, Point3{kDirectionJitter * g(rng), kDirectionJitter * g(rng), kDirectionJitter * g(rng)});
    const double n = norm(dir);
    dir = n > 1e-9 ? scale(dir, 1.0 / n) : random_unit(rng);
    Point3 next = add(p, scale(dir, kStepLength));
    // Reflect off the confinement box.
    for (int a = 0; a < 3; ++a) {
      if (next[a] < lo[a]) {
        next[a] = std::min(hi[a], 2.0 * lo[a] - next[a]);
        dir[a] = -dir[a];
      } else if (next[a] > hi[a]) {
        next[a] = std::max(lo[a], 2.0 * hi[a] - next[a]);
        dir[a] = -dir[a];
      }
    }
    p = next;
    pts.push_back(p);
  }
  return pts;
}

std::vector<Point3> moving_average(const std::vector<Point3>& pts, int window) {
  const int half = window / 2;
  const int n = static_cast<int>(pts.size());
  std::vector<Point3> out(pts.size());
  for (int i = 0; i < n; ++i) {
    const int b = std::max(0, i - half);
    const int e = std::min(n - 1, i + half);
    Point3 acc{0.0, 0.0, 0.0};
    for (int j = b; j <= e; ++j) acc = add(acc, pts[static_cast<std::size_t>(j)]);
    out[static_cast<std::size_t>(i)] = scale(acc, 1.0 / (e - b + 1));
  }
  return out;
}

void rasterize_tube(const Branch& branch, Mask& label) {
  const Dims& d = label.dims();
  const double r = branch.radius;
  const auto& cl = branch.centerline;
  for (std::size_t i = 0; i + 1 < cl.size(); ++i) {
    const Point3& a = cl[i];
    const Point3& b = cl[i + 1];
    std::array<std::int64_t, 3> lo{}, hi{};
    for (int ax = 0; ax < 3; ++ax) {
      lo[ax] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(std::min(a[ax], b[ax]) - r)));
      hi[ax] = std::min<std::int64_t>(d[ax] - 1, static_cast<std::int64_t>(std::ceil(std::max(a[ax], b[ax]) + r)));
    }
    for (std::int64_t z = lo[2]; z <= hi[2]; ++z) {
      for (std::int64_t y = lo[1]; y <= hi[1]; ++y) {
        for (std::int64_t x = lo[0]; x <= hi[0]; ++x) {
          const Point3 p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
          if (distance_to_segment(p, a, b) <= r) label(x, y, z) = 1;
        }
      }
    }
  }
}

}  // namespace

double Branch::length() const {
  double len = 0.0;
  for (std::size_t i = 0; i + 1 < centerline.size(); ++i) len += norm(sub(centerline[i + 1], centerline[i]));
  return len;
}

double distance_to_segment(const Point3& p, const Point3& a, const Point3& b) {
  const Point3 ab = sub(b, a);
  const double len2 = dot(ab, ab);
  double t = len2 > 0.0 ? dot(sub(p, a), ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return norm(sub(p, add(a, scale(ab, t))));
}

void validate(const PhantomSpec& spec) {
  validate_dims(spec.dims);
  validate_spacing(spec.spacing);
  if (spec.n_branches < 0) throw ValidationError("n_branches must be >= 0");
  if (!(spec.r_min >= 1.0)) throw ValidationError(fmt::format("r_min must be >= 1, got {}", spec.r_min));
  if (!(spec.r_min <= spec.r_max)) {
    throw ValidationError(fmt::format("r_min {} exceeds r_max {}", spec.r_min, spec.r_max));
  }
  for (const auto* m : {&spec.vessel, &spec.background}) {
    if (!std::isfinite(m->mean) || !std::isfinite(m->std) || m->std < 0.0) {
      throw ValidationError("intensity models need finite mean and non-negative finite std");
    }
  }
  if (spec.n_branches > 0) {
    const double margin = std::ceil(spec.r_max);
    for (int a = 0; a < 3; ++a) {
      if (static_cast<double>(spec.dims[a]) - 1.0 - 2.0 * margin < 0.0) {
        throw ValidationError(fmt::format("dims {} too small for r_max {}", to_string(spec.dims), spec.r_max));
      }
    }
  }
}

Phantom generate_phantom(const PhantomSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);

  Phantom out;
  out.label = Mask(spec.dims, spec.spacing, 0);

  const double margin = std::ceil(spec.r_max);
  const Point3 lo{margin, margin, margin};
  const Point3 hi{static_cast<double>(spec.dims.nx) - 1.0 - margin, static_cast<double>(spec.dims.ny) - 1.0 - margin,
                  static_cast<double>(spec.dims.nz) - 1.0 - margin};
  const auto longest = static_cast<double>(std::max({spec.dims.nx, spec.dims.ny, spec.dims.nz}));
  const int steps = std::max(8, static_cast<int>(std::lround(1.2 * longest / kStepLength)));

  std::uniform_real_distribution<double> radius(spec.r_min, spec.r_max);
  for (int b = 0; b < spec.n_branches; ++b) {
    Branch br;
    br.radius = spec.r_min == spec.r_max ? spec.r_min : radius(rng);
    br.centerline = moving_average(random_walk(rng, lo, hi, steps), kSmoothingWindow);
    rasterize_tube(br, out.label);
    out.branches.push_back(std::move(br));
  }

  out.image = Volume(spec.dims, spec.spacing, 0.0f);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (std::int64_t i = 0; i < out.image.size(); ++i) {
    const IntensityModel& m = out.label[i] ? spec.vessel : spec.background;
    out.image[i] = static_cast<float>(m.mean + m.std * unit(rng));
  }
  return out;
}

}  // namespace coroseg

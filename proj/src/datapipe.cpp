#include "coroseg/datapipe.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace coroseg {

Volume window_normalize(const Volume& volume, double lo, double hi) {
  if (!(lo < hi)) throw ValidationError(fmt::format("window_normalize needs lo < hi, got [{}, {}]", lo, hi));
  Volume out = volume;
  const double width = hi - lo;
  for (float& v : out.values()) {
    const double c = std::clamp(static_cast<double>(v), lo, hi);
    v = static_cast<float>((c - lo) / width);
  }
  return out;
}

PatchPair extract_patch(const Volume& image, const Mask& label, const Index3& origin) {
  require_same_dims(image.dims(), label.dims(), "extract_patch");
  const Dims& d = image.dims();
  for (int a = 0; a < 3; ++a) {
    if (origin[a] < 0 || origin[a] + kPatch > d[a]) {
      throw ShapeError(fmt::format("patch origin ({}, {}, {}) out of bounds for {}", origin[0], origin[1],
                                   origin[2], to_string(d)));
    }
  }
  PatchPair pp;
  pp.origin = origin;
  pp.image = Volume({kPatch, kPatch, kPatch}, image.spacing(), 0.0f);
  pp.label = Mask({kPatch, kPatch, kPatch}, label.spacing(), 0);
  for (std::int64_t z = 0; z < kPatch; ++z) {
    for (std::int64_t y = 0; y < kPatch; ++y) {
      const std::int64_t src = image.offset(origin[0], origin[1] + y, origin[2] + z);
      const std::int64_t dst = pp.image.offset(0, y, z);
      std::copy_n(image.values().begin() + src, kPatch, pp.image.values().begin() + dst);
      std::copy_n(label.values().begin() + src, kPatch, pp.label.values().begin() + dst);
    }
  }
  return pp;
}

PatchSampler::PatchSampler(const Volume& image, const Mask& label) : image_(&image), label_(&label) {
  require_same_dims(image.dims(), label.dims(), "PatchSampler");
  const Dims& d = image.dims();
  if (d.nx < kPatch || d.ny < kPatch || d.nz < kPatch) {
    throw ShapeError(fmt::format("volume {} is smaller than the {}^3 patch", to_string(d), kPatch));
  }
  for (std::int64_t i = 0; i < label.size(); ++i) {
    if (label[i]) foreground_.push_back(i);
  }
}

PatchPair PatchSampler::draw(Rng& rng, double fg_bias) const {
  const Dims& d = image_->dims();
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const bool want_fg = coin(rng) < fg_bias;
  Index3 origin{};
  bool fallback = false;
  if (want_fg && !foreground_.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, foreground_.size() - 1);
    const Index3 c = label_->index_of(foreground_[pick(rng)]);
    for (int a = 0; a < 3; ++a) origin[a] = std::clamp<std::int64_t>(c[a] - kPatch / 2, 0, d[a] - kPatch);
  } else {
    fallback = want_fg;
    for (int a = 0; a < 3; ++a) {
      std::uniform_int_distribution<std::int64_t> pos(0, d[a] - kPatch);
      origin[a] = pos(rng);
    }
  }
  PatchPair pp = extract_patch(*image_, *label_, origin);
  pp.fallback_uniform = fallback;
  return pp;
}

PatchPair sample_patch(const Volume& image, const Mask& label, Rng& rng, double fg_bias) {
  return PatchSampler(image, label).draw(rng, fg_bias);
}

void AugmentConfig::validate() const {
  if (!(p_flip >= 0.0 && p_flip <= 1.0) || !(p_rot >= 0.0 && p_rot <= 1.0)) {
    throw ValidationError(fmt::format("augment probabilities must lie in [0,1], got flip={} rot={}", p_flip, p_rot));
  }
}

namespace {

void require_cube(const Dims& d) {
  if (d.nx != d.ny || d.ny != d.nz) throw ShapeError("augmentation expects a cube, got " + to_string(d));
}

/// Axes spanning the rotation plane about `axis`, in right-handed order.
std::pair<int, int> plane_of(int axis) { return {(axis + 1) % 3, (axis + 2) % 3}; }

Index3 rotate_once(Index3 p, int axis, std::int64_t n) {
  const auto [b, c] = plane_of(axis);
  Index3 q = p;
  q[b] = n - 1 - p[c];
  q[c] = p[b];
  return q;
}

template <typename T, typename DstToSrc>
Grid3<T> remap(const Grid3<T>& g, DstToSrc&& dst_to_src) {
  Grid3<T> out(g.dims(), g.spacing(), T{});
  const std::int64_t n = g.dims().nx;
  for (std::int64_t z = 0; z < n; ++z) {
    for (std::int64_t y = 0; y < n; ++y) {
      for (std::int64_t x = 0; x < n; ++x) {
        const Index3 s = dst_to_src(Index3{x, y, z});
        out(x, y, z) = g(s[0], s[1], s[2]);
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
Grid3<T> flip_axis(const Grid3<T>& g, int axis) {
  require_cube(g.dims());
  const std::int64_t n = g.dims().nx;
  return remap(g, [&](Index3 p) {
    p[axis] = n - 1 - p[axis];
    return p;
  });
}

template <typename T>
Grid3<T> rotate_axis(const Grid3<T>& g, int axis, int quarter_turns) {
  require_cube(g.dims());
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return g;
  const std::int64_t n = g.dims().nx;
  // Inverse of k forward quarter turns is (4 - k) forward turns.
  return remap(g, [&](Index3 p) {
    for (int i = 0; i < 4 - k; ++i) p = rotate_once(p, axis, n);
    return p;
  });
}

template <typename T>
Grid3<T> apply_trace(const Grid3<T>& g, const AugmentTrace& trace) {
  Grid3<T> out = g;
  for (int a = 0; a < 3; ++a) {
    if (trace.flipped[a]) out = flip_axis(out, a);
  }
  for (int a = 0; a < 3; ++a) {
    if (trace.quarter_turns[a] != 0) out = rotate_axis(out, a, trace.quarter_turns[a]);
  }
  return out;
}

Index3 map_voxel(const AugmentTrace& trace, Index3 p, std::int64_t n) {
  for (int a = 0; a < 3; ++a) {
    if (trace.flipped[a]) p[a] = n - 1 - p[a];
  }
  for (int a = 0; a < 3; ++a) {
    for (int i = 0; i < trace.quarter_turns[a]; ++i) p = rotate_once(p, a, n);
  }
  return p;
}

PatchPair augment(const PatchPair& pp, const AugmentConfig& cfg, Rng& rng, AugmentTrace* trace) {
  cfg.validate();
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int> angle(1, 3);
  AugmentTrace t;
  for (int a = 0; a < 3; ++a) t.flipped[a] = coin(rng) < cfg.p_flip;
  for (int a = 0; a < 3; ++a) {
    if (coin(rng) < cfg.p_rot) t.quarter_turns[a] = angle(rng);
  }
  if (trace != nullptr) *trace = t;

  const bool identity = t.flipped == std::array<bool, 3>{false, false, false} &&
                        t.quarter_turns == std::array<int, 3>{0, 0, 0};
  if (identity) return pp;
  PatchPair out;
  out.origin = pp.origin;
  out.fallback_uniform = pp.fallback_uniform;
  out.image = apply_trace(pp.image, t);
  out.label = apply_trace(pp.label, t);
  return out;
}

template Grid3<float> flip_axis(const Grid3<float>&, int);
template Grid3<std::uint8_t> flip_axis(const Grid3<std::uint8_t>&, int);
template Grid3<float> rotate_axis(const Grid3<float>&, int, int);
template Grid3<std::uint8_t> rotate_axis(const Grid3<std::uint8_t>&, int, int);
template Grid3<float> apply_trace(const Grid3<float>&, const AugmentTrace&);
template Grid3<std::uint8_t> apply_trace(const Grid3<std::uint8_t>&, const AugmentTrace&);

}  // namespace coroseg

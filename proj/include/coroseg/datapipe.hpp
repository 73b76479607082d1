#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "coroseg/grid.hpp"

namespace coroseg {

/// Explicit random stream threaded through every stochastic operation.
using Rng = std::mt19937_64;

/// Network input edge length; patches are always kPatch^3.
inline constexpr std::int64_t kPatch = 64;

/// Clamps to [lo, hi] and rescales to [0, 1]. Dims and spacing are kept.
Volume window_normalize(const Volume& volume, double lo = 0.0, double hi = 500.0);

struct PatchPair {
  Volume image;  ///< kPatch^3, values in [0, 1]
  Mask label;    ///< kPatch^3, binary
  Index3 origin{0, 0, 0};
  /// Set when foreground-centred sampling was requested but the mask is empty.
  bool fallback_uniform = false;
};

/// Copies the kPatch^3 window whose corner is `origin`.
PatchPair extract_patch(const Volume& image, const Mask& label, const Index3& origin);

/// Random patch sampler over one (image, label) pair. Caches the foreground
/// voxel list so repeated draws are O(patch).
class PatchSampler {
 public:
  /// Throws ShapeError if any extent is below kPatch or the grids disagree.
  PatchSampler(const Volume& image, const Mask& label);

  /// With probability `fg_bias` centres the patch on a uniformly chosen
  /// foreground voxel (corner clamped into bounds); otherwise the corner is
  /// uniform over all valid positions.
  PatchPair draw(Rng& rng, double fg_bias = 0.5) const;

  std::size_t foreground_count() const { return foreground_.size(); }

 private:
  const Volume* image_;
  const Mask* label_;
  std::vector<std::int64_t> foreground_;
};

/// One-shot convenience over PatchSampler.
PatchPair sample_patch(const Volume& image, const Mask& label, Rng& rng, double fg_bias = 0.5);

struct AugmentConfig {
  double p_flip = 0.10;  ///< per axis
  double p_rot = 0.10;   ///< per axis; angle uniform over 90/180/270 degrees
  std::uint64_t seed = 0;

  void validate() const;
};

/// Which transforms an augment call applied, in application order: flips on
/// x, y, z first, then rotations about x, y, z.
struct AugmentTrace {
  std::array<bool, 3> flipped{false, false, false};
  std::array<int, 3> quarter_turns{0, 0, 0};  ///< 0 means not rotated
};

/// Reverses coordinate `axis` of a cube.
template <typename T>
Grid3<T> flip_axis(const Grid3<T>& g, int axis);

/// Rotates a cube by `quarter_turns` x 90 degrees about `axis`.
template <typename T>
Grid3<T> rotate_axis(const Grid3<T>& g, int axis, int quarter_turns);

/// Applies a recorded trace to an arbitrary cube.
template <typename T>
Grid3<T> apply_trace(const Grid3<T>& g, const AugmentTrace& trace);

/// Where voxel `p` of an n^3 cube lands after `trace`.
Index3 map_voxel(const AugmentTrace& trace, Index3 p, std::int64_t n);

/// Draws a trace from `cfg` and applies it to image and label alike.
PatchPair augment(const PatchPair& pp, const AugmentConfig& cfg, Rng& rng, AugmentTrace* trace = nullptr);

}  // namespace coroseg

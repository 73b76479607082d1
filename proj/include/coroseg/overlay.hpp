#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "coroseg/grid.hpp"

namespace coroseg {

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct RgbImage {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> pixels;

  std::array<std::uint8_t, 3> at(std::int64_t col, std::int64_t row) const;
};

inline constexpr std::array<std::uint8_t, 3> kTruthColor{255, 0, 0};
inline constexpr std::array<std::uint8_t, 3> kPredictionColor{0, 255, 0};
/// Ground truth and prediction blended where both are set.
inline constexpr std::array<std::uint8_t, 3> kOverlapColor{255, 255, 0};

/// Mid-slice orthogonal to `axis` (0 = x, 1 = y, 2 = z). The grey image is
/// the volume rescaled by its own min/max; labelled pixels are painted solid
/// red (truth only), green (prediction only) or yellow (both). Columns follow
/// the lower remaining axis, rows the higher one.
RgbImage overlay_slice(const Volume& volume, const Mask& truth, const Mask& prediction, int axis);

/// "case-7  DSC 0.890"
std::string overlay_caption(const std::string& case_id, double dice);

struct OverlayResult {
  std::vector<std::filesystem::path> images;  ///< sagittal (x), coronal (y), axial (z)
  std::string caption;
  double dice = 0.0;
};

/// Writes `<prefix>_sagittal.png`, `_coronal.png`, `_axial.png` and the
/// caption line to `<prefix>_caption.txt`.
/// Throws ShapeError when the grids disagree.
OverlayResult render_overlay(const Volume& volume, const Mask& truth, const Mask& prediction,
                             const std::filesystem::path& prefix, const std::string& case_id);

void write_png(const RgbImage& image, const std::filesystem::path& path);
/// Reads any PNG, converted to 8-bit RGB.
RgbImage read_png(const std::filesystem::path& path);

}  // namespace coroseg

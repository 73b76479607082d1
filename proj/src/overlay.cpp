#include "coroseg/overlay.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <png.h>

#include "coroseg/errors.hpp"
#include "coroseg/metrics.hpp"

namespace coroseg {

std::array<std::uint8_t, 3> RgbImage::at(std::int64_t col, std::int64_t row) const {
  const auto i = static_cast<std::size_t>(3 * (row * width + col));
  return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

RgbImage overlay_slice(const Volume& volume, const Mask& truth, const Mask& prediction, int axis) {
  require_same_dims(volume.dims(), truth.dims(), "overlay truth");
  require_same_dims(volume.dims(), prediction.dims(), "overlay prediction");
  if (axis < 0 || axis > 2) throw ValidationError(fmt::format("slice axis must be 0, 1 or 2, got {}", axis));
  const Dims d = volume.dims();
  const int col_axis = axis == 0 ? 1 : 0;
  const int row_axis = axis == 2 ? 1 : 2;
  const std::int64_t fixed = d[axis] / 2;

  const auto [lo_it, hi_it] = std::minmax_element(volume.storage().begin(), volume.storage().end());
  const double lo = *lo_it;
  const double range = std::max(1e-12, static_cast<double>(*hi_it) - lo);

  RgbImage img{d[col_axis], d[row_axis], {}};
  img.pixels.resize(static_cast<std::size_t>(3 * img.width * img.height));
  for (std::int64_t r = 0; r < img.height; ++r) {
    for (std::int64_t c = 0; c < img.width; ++c) {
      Index3 p{};
      p[axis] = fixed;
      p[col_axis] = c;
      p[row_axis] = r;
      const std::int64_t off = volume.offset(p[0], p[1], p[2]);
      const bool t = truth[off] != 0;
      const bool q = prediction[off] != 0;
      std::array<std::uint8_t, 3> rgb{};
      if (t && q) rgb = kOverlapColor;
      else if (t) rgb = kTruthColor;
      else if (q) rgb = kPredictionColor;
      else {
        const auto g = static_cast<std::uint8_t>(std::lround(255.0 * (volume[off] - lo) / range));
        rgb = {g, g, g};
      }
      std::copy(rgb.begin(), rgb.end(), img.pixels.begin() + 3 * (r * img.width + c));
    }
  }
  return img;
}

std::string overlay_caption(const std::string& case_id, double dice) { return fmt::format("{}  DSC {:.3f}", case_id, dice); }

OverlayResult render_overlay(const Volume& volume, const Mask& truth, const Mask& prediction,
                             const std::filesystem::path& prefix, const std::string& case_id) {
  require_same_dims(volume.dims(), truth.dims(), "overlay truth");
  require_same_dims(volume.dims(), prediction.dims(), "overlay prediction");
  OverlayResult out;
  out.dice = dice(prediction, truth);
  out.caption = overlay_caption(case_id, out.dice);
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
  static constexpr std::array<const char*, 3> kViews{"sagittal", "coronal", "axial"};
  for (int axis = 0; axis < 3; ++axis) {
    std::filesystem::path path = prefix;
    path += fmt::format("_{}.png", kViews[axis]);
    write_png(overlay_slice(volume, truth, prediction, axis), path);
    out.images.push_back(path);
  }
  std::filesystem::path caption_path = prefix;
  caption_path += "_caption.txt";
  std::ofstream(caption_path) << out.caption << '\n';
  return out;
}

void write_png(const RgbImage& image, const std::filesystem::path& path) {
  if (image.width <= 0 || image.height <= 0 ||
      image.pixels.size() != static_cast<std::size_t>(3 * image.width * image.height)) {
    throw ShapeError(fmt::format("RGB buffer of {} bytes does not match {}x{}", image.pixels.size(), image.width,
                                 image.height));
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, image.pixels.data(), 0, nullptr)) {
    const std::string message = png.message;
    png_image_free(&png);
    throw IOError("cannot write " + path.string() + ": " + message);
  }
}

RgbImage read_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FileNotFound("no such image: " + path.string());
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
    throw FormatError("cannot read " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  RgbImage img{png.width, png.height, {}};
  img.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    const std::string message = png.message;
    png_image_free(&png);
    throw FormatError("cannot decode " + path.string() + ": " + message);
  }
  return img;
}

}  // namespace coroseg

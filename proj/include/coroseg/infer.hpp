#pragma once

#include <functional>
#include <vector>

#include <torch/torch.h>

#include "coroseg/grid.hpp"
#include "coroseg/zoo.hpp"

namespace coroseg {

struct StitchConfig {
  std::int64_t stride = 32;  ///< window step per axis, in voxels
  double threshold = 0.5;    ///< probability above which a voxel is foreground
  std::int64_t batch = 4;    ///< windows evaluated per forward call

  /// Throws ConfigError unless 1 <= stride <= 64, threshold in (0, 1), batch >= 1.
  void validate() const;
};

/// Maps a B x 1 x 64^3 float batch to B x 1 x 64^3 logits.
using PatchPredictor = std::function<torch::Tensor(const torch::Tensor&)>;

struct Prediction {
  Mask mask;
  Volume probability;
};

/// Zero-padded extent used for tiling: at least kPatch per axis and a whole
/// number of strides beyond kPatch.
Dims padded_extent(const Dims& dims, std::int64_t stride);

/// Corners of every window tiling a padded extent, x fastest.
std::vector<Index3> window_origins(const Dims& padded, std::int64_t stride);

/// Strict threshold: probability > t.
Mask threshold_probability(const Volume& probability, double threshold);

/// Averages sigmoid(logits) over all windows covering each voxel, crops the
/// padding back off and thresholds. Throws NumericError on non-finite logits.
Prediction sliding_window_predict(const PatchPredictor& predictor, const Volume& volume, const StitchConfig& cfg = {});

/// Runs `model` without gradients; training mode is restored afterwards.
Prediction sliding_window_predict(SegModelImpl& model, const Volume& volume, const StitchConfig& cfg = {});

}  // namespace coroseg

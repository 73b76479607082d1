#include "coroseg/infer.hpp"

#include <fmt/format.h>

#include "coroseg/datapipe.hpp"
#include "coroseg/errors.hpp"
#include "coroseg/layers.hpp"

namespace coroseg {

void StitchConfig::validate() const {
  if (stride < 1 || stride > kPatch) throw ConfigError(fmt::format("stride must lie in [1, {}], got {}", kPatch, stride));
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError(fmt::format("threshold must lie in (0, 1), got {}", threshold));
  if (batch < 1) throw ConfigError(fmt::format("window batch must be positive, got {}", batch));
}

Dims padded_extent(const Dims& dims, std::int64_t stride) {
  auto axis = [stride](std::int64_t n) {
    if (n <= kPatch) return kPatch;
    const std::int64_t steps = (n - kPatch + stride - 1) / stride;
    return kPatch + steps * stride;
  };
  return {axis(dims.nx), axis(dims.ny), axis(dims.nz)};
}

std::vector<Index3> window_origins(const Dims& padded, std::int64_t stride) {
  std::vector<Index3> out;
  for (std::int64_t z = 0; z + kPatch <= padded.nz; z += stride) {
    for (std::int64_t y = 0; y + kPatch <= padded.ny; y += stride) {
      for (std::int64_t x = 0; x + kPatch <= padded.nx; x += stride) out.push_back({x, y, z});
    }
  }
  return out;
}

Mask threshold_probability(const Volume& probability, double threshold) {
  Mask mask(probability.dims(), probability.spacing());
  for (std::int64_t i = 0; i < probability.size(); ++i) mask[i] = probability[i] > threshold ? 1 : 0;
  return mask;
}

Prediction sliding_window_predict(const PatchPredictor& predictor, const Volume& volume, const StitchConfig& cfg) {
  cfg.validate();
  validate_volume(volume);
  const Dims d = volume.dims();
  const Dims p = padded_extent(d, cfg.stride);
  using torch::indexing::Slice;

  // Tensor layout is z, y, x so that x stays the fastest axis.
  auto source = torch::from_blob(const_cast<float*>(volume.storage().data()), {d.nz, d.ny, d.nx}, torch::kFloat32);
  auto padded = torch::zeros({p.nz, p.ny, p.nx}, torch::kFloat32);
  padded.index_put_({Slice(0, d.nz), Slice(0, d.ny), Slice(0, d.nx)}, source);
  auto sum = torch::zeros_like(padded);
  auto hits = torch::zeros_like(padded);

  const auto origins = window_origins(p, cfg.stride);
  auto window = [](const Index3& o) {
    return std::vector<torch::indexing::TensorIndex>{Slice(o[2], o[2] + kPatch), Slice(o[1], o[1] + kPatch),
                                                     Slice(o[0], o[0] + kPatch)};
  };
  for (std::size_t first = 0; first < origins.size(); first += static_cast<std::size_t>(cfg.batch)) {
    const std::size_t last = std::min(origins.size(), first + static_cast<std::size_t>(cfg.batch));
    std::vector<torch::Tensor> patches;
    for (std::size_t i = first; i < last; ++i) patches.push_back(padded.index(window(origins[i])));
    const auto batch = torch::stack(patches).unsqueeze(1);
    const auto logits = predictor(batch);
    if (logits.sizes() != batch.sizes()) {
      throw ShapeError(fmt::format("predictor returned {} for a batch of {}", nn::shape_of(logits),
                                   nn::shape_of(batch)));
    }
    if (!torch::isfinite(logits).all().item<bool>()) throw NumericError("model produced non-finite logits");
    const auto prob = torch::sigmoid(logits.to(torch::kFloat32)).squeeze(1);
    for (std::size_t i = first; i < last; ++i) {
      const auto idx = window(origins[i]);
      sum.index(idx).add_(prob[static_cast<std::int64_t>(i - first)]);
      hits.index(idx).add_(1.0);
    }
  }

  const auto mean = (sum / hits).index({Slice(0, d.nz), Slice(0, d.ny), Slice(0, d.nx)}).contiguous();
  std::vector<float> values(mean.data_ptr<float>(), mean.data_ptr<float>() + mean.numel());
  Volume probability(d, volume.spacing(), std::move(values));
  Mask mask = threshold_probability(probability, cfg.threshold);
  return {std::move(mask), std::move(probability)};
}

Prediction sliding_window_predict(SegModelImpl& model, const Volume& volume, const StitchConfig& cfg) {
  const bool was_training = model.is_training();
  model.eval();
  torch::NoGradGuard guard;
  try {
    auto out = sliding_window_predict([&model](const torch::Tensor& x) { return model.forward(x); }, volume, cfg);
    model.train(was_training);
    return out;
  } catch (...) {
    model.train(was_training);
    throw;
  }
}

}  // namespace coroseg

#include "coroseg/layers.hpp"

namespace coroseg::nn {

namespace F = torch::nn::functional;

ConvNormActImpl::ConvNormActImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride,
                                 std::int64_t dilation, Act act, std::int64_t groups)
    : act_(act) {
  conv_ = register_module("conv", torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, kernel)
                                                        .stride(stride)
                                                        .padding(dilation * (kernel / 2))
                                                        .dilation(dilation)
                                                        .groups(groups)
                                                        .bias(false)));
  norm_ = register_module("norm", torch::nn::InstanceNorm3d(torch::nn::InstanceNorm3dOptions(out).affine(true)));
}

torch::Tensor ConvNormActImpl::forward(const torch::Tensor& x) { return activate(norm_(conv_(x)), act_); }

torch::Tensor activate(const torch::Tensor& x, Act act) {
  switch (act) {
    case Act::ReLU: return torch::relu(x);
    case Act::SiLU: return torch::silu(x);
    case Act::None: break;
  }
  return x;
}

torch::Tensor resize_to(const torch::Tensor& x, at::IntArrayRef spatial) {
  if (x.sizes().slice(2) == spatial) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>(spatial.begin(), spatial.end()))
                               .mode(torch::kTrilinear)
                               .align_corners(false));
}

torch::Tensor upsample(const torch::Tensor& x, std::int64_t factor) {
  return resize_to(x, {x.size(2) * factor, x.size(3) * factor, x.size(4) * factor});
}

torch::nn::Conv3d pointwise(std::int64_t in, std::int64_t out, bool bias) {
  return torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, 1).bias(bias));
}

torch::Tensor global_pool(const torch::Tensor& x) { return x.mean({2, 3, 4}, /*keepdim=*/true); }

std::string shape_of(const torch::Tensor& t) {
  std::string out;
  for (std::int64_t d = 0; d < t.dim(); ++d) {
    if (d > 0) out += " x ";
    out += std::to_string(t.size(d));
  }
  return out;
}

}  // namespace coroseg::nn

#pragma once

#include <torch/torch.h>

namespace coroseg::nn {

enum class Act { None, ReLU, SiLU };

/// Conv3d (no bias) -> InstanceNorm3d (affine) -> activation.
class ConvNormActImpl : public torch::nn::Module {
 public:
  ConvNormActImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride = 1,
                  std::int64_t dilation = 1, Act act = Act::ReLU, std::int64_t groups = 1);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv3d conv_{nullptr};
  torch::nn::InstanceNorm3d norm_{nullptr};
  Act act_;
};
TORCH_MODULE(ConvNormAct);

torch::Tensor activate(const torch::Tensor& x, Act act);

/// Trilinear resize to an explicit spatial size.
torch::Tensor resize_to(const torch::Tensor& x, at::IntArrayRef spatial);

/// Trilinear resize by an integer factor.
torch::Tensor upsample(const torch::Tensor& x, std::int64_t factor);

/// Plain 1x1x1 convolution with bias; used where normalization is meaningless
/// (globally pooled tensors) and for output projections.
torch::nn::Conv3d pointwise(std::int64_t in, std::int64_t out, bool bias = true);

/// Mean over all spatial positions, keeping a 1x1x1 extent.
torch::Tensor global_pool(const torch::Tensor& x);

/// "2 x 1 x 64 x 64 x 64" style description for error messages.
std::string shape_of(const torch::Tensor& t);

}  // namespace coroseg::nn

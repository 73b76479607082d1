#include "coroseg/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <fmt/format.h>

#include "coroseg/datapipe.hpp"
#include "coroseg/errors.hpp"
#include "coroseg/layers.hpp"

namespace coroseg {

using nn::Act;
using nn::ConvNormAct;

namespace {

constexpr int kBlocksPerStage = 2;

std::string normalize_name(std::string_view s) {
  std::string out;
  for (char ch : s) {
    if (std::isalnum(static_cast<unsigned char>(ch))) out.push_back(static_cast<char>(std::tolower(ch)));
  }
  return out;
}

std::int64_t half_at_least(std::int64_t c, std::int64_t floor) { return std::max(floor, c / 2); }

// ---------------------------------------------------------------- ResNet

/// 1x1 reduce, 3x3x3 (optionally strided), 1x1 expand; identity or projected shortcut.
class BottleneckImpl : public torch::nn::Module {
 public:
  BottleneckImpl(std::int64_t in, std::int64_t out, std::int64_t stride) {
    const std::int64_t mid = std::max<std::int64_t>(1, out / 4);
    reduce_ = register_module("reduce", ConvNormAct(in, mid, 1));
    spatial_ = register_module("spatial", ConvNormAct(mid, mid, 3, stride));
    expand_ = register_module("expand", ConvNormAct(mid, out, 1, 1, 1, Act::None));
    if (stride != 1 || in != out) {
      shortcut_ = register_module("shortcut", ConvNormAct(in, out, 1, stride, 1, Act::None));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto y = expand_(spatial_(reduce_(x)));
    return torch::relu(y + (shortcut_ ? shortcut_(x) : x));
  }

 private:
  ConvNormAct reduce_{nullptr}, spatial_{nullptr}, expand_{nullptr}, shortcut_{nullptr};
};
TORCH_MODULE(Bottleneck);

class ResNetEncoder : public Encoder {
 public:
  explicit ResNetEncoder(ChannelSpec ch) : Encoder(EncoderFamily::ResNet, ch) {
    const std::int64_t stem = std::max<std::int64_t>(8, ch[0] / 4);
    stem_ = register_module("stem", ConvNormAct(1, stem, 3, 2));
    std::int64_t in = stem;
    for (std::size_t s = 0; s < 4; ++s) {
      torch::nn::Sequential stage;
      for (int b = 0; b < kBlocksPerStage; ++b) {
        const std::int64_t stride = (s > 0 && b == 0) ? 2 : 1;
        stage->push_back(Bottleneck(in, ch[s], stride));
        in = ch[s];
      }
      stages_.push_back(register_module(fmt::format("stage{}", s + 1), stage));
    }
  }

  FeaturePyramid forward(const torch::Tensor& x) override {
    FeaturePyramid p;
    auto h = stem_(x);
    for (std::size_t s = 0; s < 4; ++s) {
      h = stages_[s]->forward(h);
      p.stages[s] = h;
    }
    return p;
  }

 private:
  ConvNormAct stem_{nullptr};
  std::vector<torch::nn::Sequential> stages_;
};

// ---------------------------------------------------------------- EfficientNet

/// Channel gating from globally pooled context.
class SqueezeExciteImpl : public torch::nn::Module {
 public:
  SqueezeExciteImpl(std::int64_t channels, std::int64_t squeezed) {
    reduce_ = register_module("reduce", nn::pointwise(channels, squeezed));
    expand_ = register_module("expand", nn::pointwise(squeezed, channels));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto s = nn::global_pool(x);
    s = torch::sigmoid(expand_(torch::silu(reduce_(s))));
    return x * s;
  }

 private:
  torch::nn::Conv3d reduce_{nullptr}, expand_{nullptr};
};
TORCH_MODULE(SqueezeExcite);

/// Inverted bottleneck: 1x1 expand, depthwise k^3, squeeze-excitation, 1x1 project.
class MBConvImpl : public torch::nn::Module {
 public:
  MBConvImpl(std::int64_t in, std::int64_t out, std::int64_t stride, std::int64_t kernel, std::int64_t expansion)
      : residual_(stride == 1 && in == out) {
    const std::int64_t hidden = in * expansion;
    expand_ = register_module("expand", ConvNormAct(in, hidden, 1, 1, 1, Act::SiLU));
    depthwise_ = register_module("depthwise", ConvNormAct(hidden, hidden, kernel, stride, 1, Act::SiLU, hidden));
    se_ = register_module("se", SqueezeExcite(hidden, std::max<std::int64_t>(1, in / 4)));
    project_ = register_module("project", ConvNormAct(hidden, out, 1, 1, 1, Act::None));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto y = project_(se_(depthwise_(expand_(x))));
    return residual_ ? y + x : y;
  }

 private:
  bool residual_;
  ConvNormAct expand_{nullptr}, depthwise_{nullptr}, project_{nullptr};
  SqueezeExcite se_{nullptr};
};
TORCH_MODULE(MBConv);

class EfficientNetEncoder : public Encoder {
 public:
  static constexpr std::int64_t kExpansion = 4;
  static constexpr std::array<std::int64_t, 4> kKernels{3, 3, 5, 5};

  explicit EfficientNetEncoder(ChannelSpec ch) : Encoder(EncoderFamily::EfficientNet, ch) {
    const std::int64_t stem = std::max<std::int64_t>(8, ch[0] / 4);
    stem_ = register_module("stem", ConvNormAct(1, stem, 3, 2, 1, Act::SiLU));
    std::int64_t in = stem;
    for (std::size_t s = 0; s < 4; ++s) {
      torch::nn::Sequential stage;
      for (int b = 0; b < kBlocksPerStage; ++b) {
        const std::int64_t stride = (s > 0 && b == 0) ? 2 : 1;
        stage->push_back(MBConv(in, ch[s], stride, kKernels[s], kExpansion));
        in = ch[s];
      }
      stages_.push_back(register_module(fmt::format("stage{}", s + 1), stage));
    }
  }

  FeaturePyramid forward(const torch::Tensor& x) override {
    FeaturePyramid p;
    auto h = stem_(x);
    for (std::size_t s = 0; s < 4; ++s) {
      h = stages_[s]->forward(h);
      p.stages[s] = h;
    }
    return p;
  }

 private:
  ConvNormAct stem_{nullptr};
  std::vector<torch::nn::Sequential> stages_;
};

// ---------------------------------------------------------------- Inception

/// Four parallel branches (1x1; 1x1->3^3; 1x1->3^3->3^3; maxpool->1x1) concatenated.
class InceptionBlockImpl : public torch::nn::Module {
 public:
  InceptionBlockImpl(std::int64_t in, std::int64_t out) {
    const std::int64_t quarter = std::max<std::int64_t>(1, out / 4);
    const std::int64_t b1 = out - 3 * quarter;
    const std::int64_t reduce = half_at_least(in, 4);
    branch1_ = register_module("branch1x1", ConvNormAct(in, b1, 1));
    branch3_ = register_module("branch3x3", torch::nn::Sequential(ConvNormAct(in, reduce, 1), ConvNormAct(reduce, quarter, 3)));
    branch5_ = register_module("branch5x5", torch::nn::Sequential(ConvNormAct(in, reduce, 1), ConvNormAct(reduce, quarter, 3),
                                                                  ConvNormAct(quarter, quarter, 3)));
    branch_pool_ = register_module("branch_pool", ConvNormAct(in, quarter, 1));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto pooled = torch::max_pool3d(x, 3, 1, 1);
    return torch::cat({branch1_(x), branch3_->forward(x), branch5_->forward(x), branch_pool_(pooled)}, 1);
  }

 private:
  ConvNormAct branch1_{nullptr}, branch_pool_{nullptr};
  torch::nn::Sequential branch3_{nullptr}, branch5_{nullptr};
};
TORCH_MODULE(InceptionBlock);

class InceptionEncoder : public Encoder {
 public:
  explicit InceptionEncoder(ChannelSpec ch) : Encoder(EncoderFamily::Inception, ch) {
    const std::int64_t stem = half_at_least(ch[0], 8);
    stem_ = register_module("stem", ConvNormAct(1, stem, 3, 2));
    std::int64_t in = stem;
    for (std::size_t s = 0; s < 4; ++s) {
      torch::nn::Sequential stage;
      for (int b = 0; b < kBlocksPerStage; ++b) {
        stage->push_back(InceptionBlock(in, ch[s]));
        in = ch[s];
      }
      stages_.push_back(register_module(fmt::format("stage{}", s + 1), stage));
    }
  }

  FeaturePyramid forward(const torch::Tensor& x) override {
    FeaturePyramid p;
    auto h = stem_(x);
    for (std::size_t s = 0; s < 4; ++s) {
      if (s > 0) h = torch::max_pool3d(h, 2, 2);
      h = stages_[s]->forward(h);
      p.stages[s] = h;
    }
    return p;
  }

 private:
  ConvNormAct stem_{nullptr};
  std::vector<torch::nn::Sequential> stages_;
};

// ---------------------------------------------------------------- DenseNet

/// Pre-activation 1x1 bottleneck then 3^3 conv emitting `growth` new channels.
class DenseLayerImpl : public torch::nn::Module {
 public:
  DenseLayerImpl(std::int64_t in, std::int64_t growth) {
    norm1_ = register_module("norm1", torch::nn::InstanceNorm3d(torch::nn::InstanceNorm3dOptions(in).affine(true)));
    conv1_ = register_module("conv1", torch::nn::Conv3d(torch::nn::Conv3dOptions(in, 4 * growth, 1).bias(false)));
    norm2_ = register_module("norm2", torch::nn::InstanceNorm3d(torch::nn::InstanceNorm3dOptions(4 * growth).affine(true)));
    conv2_ = register_module("conv2",
                             torch::nn::Conv3d(torch::nn::Conv3dOptions(4 * growth, growth, 3).padding(1).bias(false)));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto y = conv1_(torch::relu(norm1_(x)));
    y = conv2_(torch::relu(norm2_(y)));
    return torch::cat({x, y}, 1);
  }

 private:
  torch::nn::InstanceNorm3d norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv3d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(DenseLayer);

/// Stage s: transition to c_s/2 channels (1x1 + 2x average pool; the stem
/// plays this role for stage 1), then dense layers of growth c_s/4 so the
/// concatenation totals c_s.
class DenseNetEncoder : public Encoder {
 public:
  explicit DenseNetEncoder(ChannelSpec ch) : Encoder(EncoderFamily::DenseNet, ch) {
    stem_ = register_module("stem", ConvNormAct(1, ch[0] / 2, 3, 2));
    std::int64_t in = ch[0] / 2;
    for (std::size_t s = 0; s < 4; ++s) {
      const std::int64_t base = ch[s] / 2;
      const std::int64_t growth = (ch[s] - base) / kBlocksPerStage;
      if (s > 0) {
        transitions_.push_back(register_module(fmt::format("transition{}", s + 1), ConvNormAct(in, base, 1)));
      }
      torch::nn::Sequential block;
      std::int64_t width = base;
      for (int b = 0; b < kBlocksPerStage; ++b) {
        block->push_back(DenseLayer(width, growth));
        width += growth;
      }
      blocks_.push_back(register_module(fmt::format("dense{}", s + 1), block));
      in = width;
    }
  }

  FeaturePyramid forward(const torch::Tensor& x) override {
    FeaturePyramid p;
    auto h = stem_(x);
    for (std::size_t s = 0; s < 4; ++s) {
      if (s > 0) h = torch::avg_pool3d(transitions_[s - 1](h), 2, 2);
      h = blocks_[s]->forward(h);
      p.stages[s] = h;
    }
    return p;
  }

 private:
  ConvNormAct stem_{nullptr};
  std::vector<ConvNormAct> transitions_;
  std::vector<torch::nn::Sequential> blocks_;
};

// ---------------------------------------------------------------- U-Net

class UNetEncoderImpl : public Encoder {
 public:
  explicit UNetEncoderImpl(ChannelSpec ch) : Encoder(EncoderFamily::UNetEncoder, ch) {
    std::int64_t in = 1;
    for (std::size_t s = 0; s < 4; ++s) {
      stages_.push_back(register_module(fmt::format("stage{}", s + 1),
                                        torch::nn::Sequential(ConvNormAct(in, ch[s], 3, 2), ConvNormAct(ch[s], ch[s], 3))));
      in = ch[s];
    }
  }

  FeaturePyramid forward(const torch::Tensor& x) override {
    FeaturePyramid p;
    auto h = x;
    for (std::size_t s = 0; s < 4; ++s) {
      h = stages_[s]->forward(h);
      p.stages[s] = h;
    }
    return p;
  }

 private:
  std::vector<torch::nn::Sequential> stages_;
};

}  // namespace

std::string_view to_string(EncoderFamily f) {
  switch (f) {
    case EncoderFamily::EfficientNet: return "EfficientNet";
    case EncoderFamily::ResNet: return "ResNet";
    case EncoderFamily::Inception: return "Inception";
    case EncoderFamily::DenseNet: return "DenseNet";
    case EncoderFamily::UNetEncoder: return "UNetEncoder";
  }
  return "?";
}

EncoderFamily parse_encoder_family(std::string_view name) {
  const std::string n = normalize_name(name);
  if (n == "efficientnet") return EncoderFamily::EfficientNet;
  if (n == "resnet") return EncoderFamily::ResNet;
  if (n == "inception" || n == "inceptionnet") return EncoderFamily::Inception;
  if (n == "densenet") return EncoderFamily::DenseNet;
  if (n == "unetencoder" || n == "unet") return EncoderFamily::UNetEncoder;
  throw ConfigError(fmt::format("unknown encoder family '{}'", name));
}

std::string to_string(const ChannelSpec& s) { return fmt::format("({}, {}, {}, {})", s[0], s[1], s[2], s[3]); }

ChannelSpec reference_channels(EncoderFamily f) {
  switch (f) {
    case EncoderFamily::EfficientNet: return {{128, 256, 512, 1024}};
    case EncoderFamily::ResNet: return {{256, 512, 1024, 2048}};
    case EncoderFamily::Inception: return {{32, 128, 512, 512}};
    case EncoderFamily::DenseNet: return {{64, 128, 192, 256}};
    case EncoderFamily::UNetEncoder: return {{64, 128, 256, 256}};
  }
  throw ConfigError("unknown encoder family");
}

std::int64_t scale_channels(std::int64_t c, double width_mult) {
  if (!(width_mult > 0.0) || !std::isfinite(width_mult)) {
    throw ConfigError(fmt::format("width_mult must be positive and finite, got {}", width_mult));
  }
  const auto rounded = static_cast<std::int64_t>(std::lround(static_cast<double>(c) * width_mult / 8.0)) * 8;
  return std::max<std::int64_t>(8, rounded);
}

ChannelSpec scaled_channels(EncoderFamily f, double width_mult) {
  ChannelSpec ref = reference_channels(f);
  for (auto& c : ref.c) c = scale_channels(c, width_mult);
  return ref;
}

std::int64_t stage_extent(std::size_t stage) { return kPatch >> (stage + 1); }

std::shared_ptr<Encoder> build_encoder(EncoderFamily family, double width_mult) {
  const ChannelSpec ch = scaled_channels(family, width_mult);
  switch (family) {
    case EncoderFamily::EfficientNet: return std::make_shared<EfficientNetEncoder>(ch);
    case EncoderFamily::ResNet: return std::make_shared<ResNetEncoder>(ch);
    case EncoderFamily::Inception: return std::make_shared<InceptionEncoder>(ch);
    case EncoderFamily::DenseNet: return std::make_shared<DenseNetEncoder>(ch);
    case EncoderFamily::UNetEncoder: return std::make_shared<UNetEncoderImpl>(ch);
  }
  throw ConfigError("unknown encoder family");
}

std::shared_ptr<Encoder> build_encoder(std::string_view family, double width_mult) {
  return build_encoder(parse_encoder_family(family), width_mult);
}

FeaturePyramid encode(Encoder& encoder, const torch::Tensor& batch) {
  if (batch.dim() != 5 || batch.size(1) != 1 || batch.size(2) != kPatch || batch.size(3) != kPatch ||
      batch.size(4) != kPatch) {
    throw ShapeError(fmt::format("encoder input must be B x 1 x {0} x {0} x {0}, got {1}", kPatch,
                                 nn::shape_of(batch)));
  }
  if (!torch::isfinite(batch).all().item<bool>()) throw NumericError("encoder input contains non-finite values");
  return encoder.forward(batch);
}

}  // namespace coroseg

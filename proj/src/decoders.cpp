#include "coroseg/decoders.hpp"

#include <algorithm>
#include <cctype>

#include <fmt/format.h>

#include "coroseg/datapipe.hpp"
#include "coroseg/errors.hpp"
#include "coroseg/layers.hpp"

namespace coroseg {

using nn::Act;
using nn::ConvNormAct;

namespace {

std::string normalize_name(std::string_view s) {
  std::string out;
  for (char ch : s) {
    if (std::isalnum(static_cast<unsigned char>(ch))) out.push_back(static_cast<char>(std::tolower(ch)));
  }
  return out;
}

/// 32^3 features -> 1x1 reduce -> x2 trilinear -> 3^3 conv -> 1x1 logits at 64^3.
class SegmentationHeadImpl : public torch::nn::Module {
 public:
  SegmentationHeadImpl(std::int64_t in, std::int64_t width) {
    reduce_ = register_module("reduce", ConvNormAct(in, width, 1));
    refine_ = register_module("refine", ConvNormAct(width, width, 3));
    logits_ = register_module("logits", nn::pointwise(width, 1));
    // Start from a ~2% foreground prior instead of 50%: vessels are sparse.
    torch::NoGradGuard guard;
    logits_->bias.fill_(-4.0);
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto h = nn::upsample(reduce_(x), 2);
    return logits_(refine_(h));
  }

 private:
  ConvNormAct reduce_{nullptr}, refine_{nullptr};
  torch::nn::Conv3d logits_{nullptr};
};
TORCH_MODULE(SegmentationHead);

// ---------------------------------------------------------------- LinkNet

/// 1x1 to m/4, x2 upsample, 3^3 conv, 1x1 to n.
class LinkBlockImpl : public torch::nn::Module {
 public:
  LinkBlockImpl(std::int64_t in, std::int64_t out) {
    const std::int64_t mid = std::max<std::int64_t>(4, in / 4);
    reduce_ = register_module("reduce", ConvNormAct(in, mid, 1));
    conv_ = register_module("conv", ConvNormAct(mid, mid, 3));
    expand_ = register_module("expand", ConvNormAct(mid, out, 1));
  }

  torch::Tensor forward(const torch::Tensor& x) { return expand_(conv_(nn::upsample(reduce_(x), 2))); }

 private:
  ConvNormAct reduce_{nullptr}, conv_{nullptr}, expand_{nullptr};
};
TORCH_MODULE(LinkBlock);

class LinkNetDecoder : public Decoder {
 public:
  LinkNetDecoder(const ChannelSpec& ch, const DecoderOptions& opt) : Decoder(DecoderFamily::LinkNet, ch) {
    for (std::size_t s = 3; s > 0; --s) {
      blocks_.push_back(register_module(fmt::format("block{}", s), LinkBlock(ch[s], ch[s - 1])));
    }
    head_ = register_module("head", SegmentationHead(ch[0], opt.head_width));
  }

  torch::Tensor forward(const FeaturePyramid& p) override {
    auto x = p.stages[3];
    for (std::size_t i = 0; i < blocks_.size(); ++i) x = blocks_[i](x) + p.stages[2 - i];
    return head_(x);
  }

 private:
  std::vector<LinkBlock> blocks_;
  SegmentationHead head_{nullptr};
};

// ---------------------------------------------------------------- U-Net

/// x2 upsample, concatenate skip, two 3^3 convs.
class UpConcatBlockImpl : public torch::nn::Module {
 public:
  UpConcatBlockImpl(std::int64_t in, std::int64_t skip, std::int64_t out) {
    conv1_ = register_module("conv1", ConvNormAct(in + skip, out, 3));
    conv2_ = register_module("conv2", ConvNormAct(out, out, 3));
  }

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& skip) {
    return conv2_(conv1_(torch::cat({nn::upsample(x, 2), skip}, 1)));
  }

 private:
  ConvNormAct conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(UpConcatBlock);

class UNetDecoderImpl : public Decoder {
 public:
  UNetDecoderImpl(const ChannelSpec& ch, const DecoderOptions& opt) : Decoder(DecoderFamily::UNetDecoder, ch) {
    std::int64_t in = ch[3];
    for (std::size_t s = 3; s > 0; --s) {
      blocks_.push_back(register_module(fmt::format("block{}", s), UpConcatBlock(in, ch[s - 1], ch[s - 1])));
      in = ch[s - 1];
    }
    head_ = register_module("head", SegmentationHead(ch[0], opt.head_width));
  }

  torch::Tensor forward(const FeaturePyramid& p) override {
    auto x = p.stages[3];
    for (std::size_t i = 0; i < blocks_.size(); ++i) x = blocks_[i](x, p.stages[2 - i]);
    return head_(x);
  }

 private:
  std::vector<UpConcatBlock> blocks_;
  SegmentationHead head_{nullptr};
};

// ---------------------------------------------------------------- FPN

/// Lateral 1x1 projections to a common width, top-down additive pathway,
/// per-level 3^3 smoothing, all levels resized to stage 1 and summed.
class FPNDecoder : public Decoder {
 public:
  FPNDecoder(const ChannelSpec& ch, const DecoderOptions& opt) : Decoder(DecoderFamily::FPN, ch) {
    const std::int64_t seg = std::max<std::int64_t>(8, opt.width / 2);
    for (std::size_t s = 0; s < 4; ++s) {
      lateral_.push_back(register_module(fmt::format("lateral{}", s + 1), nn::pointwise(ch[s], opt.width)));
      smooth_.push_back(register_module(fmt::format("smooth{}", s + 1), ConvNormAct(opt.width, seg, 3)));
    }
    head_ = register_module("head", SegmentationHead(seg, opt.head_width));
  }

  torch::Tensor forward(const FeaturePyramid& p) override {
    std::array<torch::Tensor, 4> top_down;
    top_down[3] = lateral_[3](p.stages[3]);
    for (std::size_t s = 3; s > 0; --s) {
      top_down[s - 1] = lateral_[s - 1](p.stages[s - 1]) + nn::upsample(top_down[s], 2);
    }
    const auto target = p.stages[0].sizes().slice(2);
    torch::Tensor merged = smooth_[0](top_down[0]);
    for (std::size_t s = 1; s < 4; ++s) merged = merged + nn::resize_to(smooth_[s](top_down[s]), target);
    return head_(merged);
  }

 private:
  std::vector<torch::nn::Conv3d> lateral_;
  std::vector<ConvNormAct> smooth_;
  SegmentationHead head_{nullptr};
};

// ---------------------------------------------------------------- PAN

/// Pyramid-pooling attention on the deepest stage: a two-level pooled
/// pyramid forms a spatial attention map over a 1x1 projection, plus a
/// global-context branch.
class FeaturePyramidAttentionImpl : public torch::nn::Module {
 public:
  FeaturePyramidAttentionImpl(std::int64_t in, std::int64_t width) {
    mid_ = register_module("mid", ConvNormAct(in, width, 1));
    global_ = register_module("global_context", nn::pointwise(in, width));
    down1_ = register_module("down1", ConvNormAct(in, width, 3));
    down2_ = register_module("down2", torch::nn::Conv3d(torch::nn::Conv3dOptions(width, width, 3).padding(1)));
    refine1_ = register_module("refine1", ConvNormAct(width, width, 3));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    const auto full = x.sizes().slice(2);
    auto d1 = down1_(torch::max_pool3d(x, 2, 2, 0, 1, /*ceil_mode=*/true));
    // Two pooling levels below a 4^3 input leave a single voxel: no normalization there.
    auto d2 = torch::relu(down2_(torch::max_pool3d(d1, 2, 2, 0, 1, true)));
    auto attention = nn::resize_to(refine1_(d1) + nn::resize_to(d2, d1.sizes().slice(2)), full);
    auto g = torch::relu(global_(nn::global_pool(x)));
    return mid_(x) * attention + g.expand_as(attention);
  }

 private:
  ConvNormAct mid_{nullptr}, down1_{nullptr}, refine1_{nullptr};
  torch::nn::Conv3d global_{nullptr}, down2_{nullptr};
};
TORCH_MODULE(FeaturePyramidAttention);

/// Global attention upsample: the coarse feature gates the projected skip
/// both per channel (pooled context) and per voxel (sigmoid map), then is
/// added back after upsampling.
class GlobalAttentionUpsampleImpl : public torch::nn::Module {
 public:
  GlobalAttentionUpsampleImpl(std::int64_t skip, std::int64_t width) {
    low_ = register_module("low", ConvNormAct(skip, width, 3));
    channel_ = register_module("channel", nn::pointwise(width, width));
    spatial_ = register_module("spatial", nn::pointwise(width, 1));
  }

  torch::Tensor forward(const torch::Tensor& high, const torch::Tensor& skip) {
    auto up = nn::resize_to(high, skip.sizes().slice(2));
    auto channel_gate = torch::sigmoid(channel_(nn::global_pool(high)));
    auto spatial_gate = torch::sigmoid(spatial_(up));
    return up + low_(skip) * channel_gate * spatial_gate;
  }

 private:
  ConvNormAct low_{nullptr};
  torch::nn::Conv3d channel_{nullptr}, spatial_{nullptr};
};
TORCH_MODULE(GlobalAttentionUpsample);

class PANDecoder : public Decoder {
 public:
  PANDecoder(const ChannelSpec& ch, const DecoderOptions& opt) : Decoder(DecoderFamily::PAN, ch) {
    fpa_ = register_module("fpa", FeaturePyramidAttention(ch[3], opt.width));
    for (std::size_t s = 3; s > 0; --s) {
      gau_.push_back(register_module(fmt::format("gau{}", s), GlobalAttentionUpsample(ch[s - 1], opt.width)));
    }
    head_ = register_module("head", SegmentationHead(opt.width, opt.head_width));
  }

  torch::Tensor forward(const FeaturePyramid& p) override {
    auto x = fpa_(p.stages[3]);
    for (std::size_t i = 0; i < gau_.size(); ++i) x = gau_[i](x, p.stages[2 - i]);
    return head_(x);
  }

 private:
  FeaturePyramidAttention fpa_{nullptr};
  std::vector<GlobalAttentionUpsample> gau_;
  SegmentationHead head_{nullptr};
};

// ---------------------------------------------------------------- DeepLabV3

/// Atrous spatial pyramid pooling: 1x1, three dilated 3^3 branches and an
/// image-pooling branch, concatenated and projected.
class ASPPImpl : public torch::nn::Module {
 public:
  ASPPImpl(std::int64_t in, std::int64_t width, const std::array<std::int64_t, 3>& rates) {
    branches_.push_back(register_module("branch0", ConvNormAct(in, width, 1)));
    for (std::size_t i = 0; i < rates.size(); ++i) {
      branches_.push_back(register_module(fmt::format("branch{}", i + 1), ConvNormAct(in, width, 3, 1, rates[i])));
    }
    pool_ = register_module("pool", nn::pointwise(in, width));
    project_ = register_module("project", ConvNormAct(width * (rates.size() + 2), width, 1));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> outs;
    for (auto& b : branches_) outs.push_back(b(x));
    outs.push_back(torch::relu(pool_(nn::global_pool(x))).expand_as(outs.front()));
    return project_(torch::cat(outs, 1));
  }

 private:
  std::vector<ConvNormAct> branches_;
  torch::nn::Conv3d pool_{nullptr};
  ConvNormAct project_{nullptr};
};
TORCH_MODULE(ASPP);

/// ASPP on the deepest stage, upsampled to stage-1 resolution and fused with
/// 1x1 projections of stages 1-3.
class DeepLabV3Decoder : public Decoder {
 public:
  DeepLabV3Decoder(const ChannelSpec& ch, const DecoderOptions& opt) : Decoder(DecoderFamily::DeepLabV3, ch) {
    aspp_ = register_module("aspp", ASPP(ch[3], opt.width, opt.atrous_rates));
    aspp_conv_ = register_module("aspp_conv", ConvNormAct(opt.width, opt.width, 3));
    const std::int64_t low = std::max<std::int64_t>(8, opt.width / 4);
    for (std::size_t s = 0; s < 3; ++s) {
      low_.push_back(register_module(fmt::format("low{}", s + 1), ConvNormAct(ch[s], low, 1)));
    }
    const std::int64_t fused = std::max<std::int64_t>(8, opt.width / 2);
    fuse_ = register_module("fuse", ConvNormAct(opt.width + 3 * low, fused, 3));
    head_ = register_module("head", SegmentationHead(fused, opt.head_width));
  }

  torch::Tensor forward(const FeaturePyramid& p) override {
    const auto target = p.stages[0].sizes().slice(2);
    std::vector<torch::Tensor> parts{nn::resize_to(aspp_conv_(aspp_(p.stages[3])), target)};
    for (std::size_t s = 0; s < 3; ++s) parts.push_back(nn::resize_to(low_[s](p.stages[s]), target));
    return head_(fuse_(torch::cat(parts, 1)));
  }

 private:
  ASPP aspp_{nullptr};
  ConvNormAct aspp_conv_{nullptr};
  std::vector<ConvNormAct> low_;
  ConvNormAct fuse_{nullptr};
  SegmentationHead head_{nullptr};
};

}  // namespace

std::string_view to_string(DecoderFamily f) {
  switch (f) {
    case DecoderFamily::DeepLabV3: return "DeepLabV3";
    case DecoderFamily::LinkNet: return "LinkNet";
    case DecoderFamily::FPN: return "FPN";
    case DecoderFamily::PAN: return "PAN";
    case DecoderFamily::UNetDecoder: return "UNetDecoder";
  }
  return "?";
}

DecoderFamily parse_decoder_family(std::string_view name) {
  const std::string n = normalize_name(name);
  if (n == "deeplabv3" || n == "deeplab") return DecoderFamily::DeepLabV3;
  if (n == "linknet") return DecoderFamily::LinkNet;
  if (n == "fpn" || n == "featurepyramidnetwork") return DecoderFamily::FPN;
  if (n == "pan" || n == "pyramidattentionnetwork") return DecoderFamily::PAN;
  if (n == "unetdecoder" || n == "unet") return DecoderFamily::UNetDecoder;
  throw ConfigError(fmt::format("unknown decoder family '{}'", name));
}

std::shared_ptr<Decoder> build_decoder(DecoderFamily family, const ChannelSpec& spec, const DecoderOptions& opt) {
  for (std::int64_t c : spec.c) {
    if (c <= 0) throw ConfigError("pyramid channel spec must be positive, got " + to_string(spec));
  }
  if (opt.width <= 0 || opt.head_width <= 0) throw ConfigError("decoder widths must be positive");
  for (std::int64_t r : opt.atrous_rates) {
    if (r <= 0) throw ConfigError("atrous rates must be positive");
  }
  switch (family) {
    case DecoderFamily::DeepLabV3: return std::make_shared<DeepLabV3Decoder>(spec, opt);
    case DecoderFamily::LinkNet: return std::make_shared<LinkNetDecoder>(spec, opt);
    case DecoderFamily::FPN: return std::make_shared<FPNDecoder>(spec, opt);
    case DecoderFamily::PAN: return std::make_shared<PANDecoder>(spec, opt);
    case DecoderFamily::UNetDecoder: return std::make_shared<UNetDecoderImpl>(spec, opt);
  }
  throw ConfigError("unknown decoder family");
}

std::shared_ptr<Decoder> build_decoder(std::string_view family, const ChannelSpec& spec, const DecoderOptions& opt) {
  return build_decoder(parse_decoder_family(family), spec, opt);
}

torch::Tensor decode(Decoder& decoder, const FeaturePyramid& pyramid) {
  const std::int64_t batch = pyramid.stages[0].defined() ? pyramid.stages[0].size(0) : 0;
  for (std::size_t s = 0; s < 4; ++s) {
    const auto& t = pyramid.stages[s];
    const std::int64_t e = stage_extent(s);
    if (!t.defined() || t.dim() != 5 || t.size(0) != batch || t.size(1) != decoder.expects()[s] ||
        t.size(2) != e || t.size(3) != e || t.size(4) != e) {
      throw ShapeError(fmt::format("pyramid stage {} has shape [{}], decoder expects B x {} x {}^3", s + 1,
                                   t.defined() ? nn::shape_of(t) : "undefined", decoder.expects()[s], e));
    }
  }
  for (std::size_t s = 0; s < 4; ++s) {
    if (!torch::isfinite(pyramid.stages[s]).all().item<bool>()) {
      throw NumericError(fmt::format("pyramid stage {} contains non-finite values", s + 1));
    }
  }
  return decoder.forward(pyramid);
}

}  // namespace coroseg

#pragma once

#include <array>
#include <memory>
#include <string_view>

#include <torch/torch.h>

#include "coroseg/encoders.hpp"

namespace coroseg {

enum class DecoderFamily { DeepLabV3, LinkNet, FPN, PAN, UNetDecoder };

inline constexpr std::array<DecoderFamily, 5> kDecoderFamilies{DecoderFamily::DeepLabV3, DecoderFamily::LinkNet,
                                                                DecoderFamily::FPN, DecoderFamily::PAN,
                                                                DecoderFamily::UNetDecoder};

std::string_view to_string(DecoderFamily f);
/// Case-insensitive; accepts "Feature Pyramid Network", "Pyramid Attention
/// Network" and "U-Net Decoder". Throws ConfigError otherwise.
DecoderFamily parse_decoder_family(std::string_view name);

struct DecoderOptions {
  /// Merge width for FPN, PAN and DeepLabV3 paths.
  std::int64_t width = 128;
  /// Channels of the full-resolution segmentation head.
  std::int64_t head_width = 16;
  /// Dilation rates of the atrous pyramid (DeepLabV3).
  std::array<std::int64_t, 3> atrous_rates{1, 2, 4};
};

/// Maps a FeaturePyramid to B x 1 x 64^3 logits.
class Decoder : public torch::nn::Module {
 public:
  Decoder(DecoderFamily family, ChannelSpec expects) : family_(family), expects_(expects) {}

  DecoderFamily family() const { return family_; }
  /// Channel counts of the pyramid this decoder was built for.
  const ChannelSpec& expects() const { return expects_; }

  virtual torch::Tensor forward(const FeaturePyramid& pyramid) = 0;

 private:
  DecoderFamily family_;
  ChannelSpec expects_;
};

/// Throws ConfigError on a non-positive channel count or bad options.
std::shared_ptr<Decoder> build_decoder(DecoderFamily family, const ChannelSpec& pyramid_spec,
                                       const DecoderOptions& options = {});
std::shared_ptr<Decoder> build_decoder(std::string_view family, const ChannelSpec& pyramid_spec,
                                       const DecoderOptions& options = {});

/// Checks stage shapes against the build-time spec (ShapeError) and
/// finiteness (NumericError), then decodes.
torch::Tensor decode(Decoder& decoder, const FeaturePyramid& pyramid);

}  // namespace coroseg

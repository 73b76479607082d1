#pragma once

#include <array>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

namespace coroseg {

enum class EncoderFamily { EfficientNet, ResNet, Inception, DenseNet, UNetEncoder };

inline constexpr std::array<EncoderFamily, 5> kEncoderFamilies{
    EncoderFamily::EfficientNet, EncoderFamily::ResNet, EncoderFamily::Inception, EncoderFamily::DenseNet,
    EncoderFamily::UNetEncoder};

std::string_view to_string(EncoderFamily f);
/// Case-insensitive; accepts "InceptionNet" and "U-Net Encoder" spellings.
/// Throws ConfigError on anything else.
EncoderFamily parse_encoder_family(std::string_view name);

/// Output channels of the four pyramid stages.
struct ChannelSpec {
  std::array<std::int64_t, 4> c{};

  std::int64_t operator[](std::size_t i) const { return c[i]; }
  bool operator==(const ChannelSpec&) const = default;
};

std::string to_string(const ChannelSpec& s);

/// Stage channels of each family at full width.
ChannelSpec reference_channels(EncoderFamily f);

/// Scales a channel count and rounds to the nearest multiple of 8 (minimum 8).
std::int64_t scale_channels(std::int64_t c, double width_mult);
ChannelSpec scaled_channels(EncoderFamily f, double width_mult);

/// Edge length of stage s (0-based) for a kPatch^3 input: 32, 16, 8, 4.
std::int64_t stage_extent(std::size_t stage);

/// Four feature maps, stage s shaped B x c_s x (32 / 2^s)^3.
struct FeaturePyramid {
  std::array<torch::Tensor, 4> stages;
};

/// Common base so a SegModel can hold any family.
class Encoder : public torch::nn::Module {
 public:
  Encoder(EncoderFamily family, ChannelSpec channels) : family_(family), channels_(channels) {}

  EncoderFamily family() const { return family_; }
  const ChannelSpec& channels() const { return channels_; }

  virtual FeaturePyramid forward(const torch::Tensor& x) = 0;

 private:
  EncoderFamily family_;
  ChannelSpec channels_;
};

/// Builds a freshly initialised encoder. Uses the global torch generator for
/// weight init, so seed it first for reproducible weights.
/// Throws ConfigError when width_mult is not positive and finite.
std::shared_ptr<Encoder> build_encoder(EncoderFamily family, double width_mult = 1.0);
std::shared_ptr<Encoder> build_encoder(std::string_view family, double width_mult = 1.0);

/// Validates the input (ShapeError / NumericError) and runs the encoder.
FeaturePyramid encode(Encoder& encoder, const torch::Tensor& batch);

}  // namespace coroseg

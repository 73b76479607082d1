#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "coroseg/decoders.hpp"
#include "coroseg/encoders.hpp"

namespace coroseg {

/// Published parameter count and on-disk size for one combination at full width.
struct ReferenceEntry {
  EncoderFamily encoder;
  DecoderFamily decoder;
  std::int64_t params;
  double size_mb;
  /// Size duplicated verbatim from another row in the source table.
  bool size_suspect = false;
};

/// The 25 reference rows, decoder-major in registry order.
const std::vector<ReferenceEntry>& reference_table();

struct ModelSpec {
  EncoderFamily encoder = EncoderFamily::EfficientNet;
  DecoderFamily decoder = DecoderFamily::LinkNet;
  double width_mult = 1.0;
  std::optional<std::int64_t> reference_params;
  std::optional<double> reference_size_mb;

  /// "EfficientNet-LinkNet"
  std::string name() const;
};

/// Every encoder/decoder pairing, decoders outer and encoders inner, each
/// carrying its reference values.
std::vector<ModelSpec> list_combinations(double width_mult = 1.0);

/// Spec for one pairing with reference values attached.
ModelSpec make_spec(EncoderFamily encoder, DecoderFamily decoder, double width_mult = 1.0);

/// Encoder and decoder assembled end to end.
class SegModelImpl : public torch::nn::Module {
 public:
  SegModelImpl(const ModelSpec& spec, std::shared_ptr<Encoder> encoder, std::shared_ptr<Decoder> decoder);

  /// B x 1 x 64^3 patches to B x 1 x 64^3 logits, with input/shape validation.
  torch::Tensor forward(const torch::Tensor& x);

  const ModelSpec& spec() const { return spec_; }
  Encoder& encoder() { return *encoder_; }
  Decoder& decoder() { return *decoder_; }

 private:
  ModelSpec spec_;
  std::shared_ptr<Encoder> encoder_;
  std::shared_ptr<Decoder> decoder_;
};
TORCH_MODULE(SegModel);

/// Builds the model with weights drawn from `seed`. Reentrant: weight
/// initialisation is serialised internally around the global generator.
SegModel assemble(const ModelSpec& spec, std::uint64_t seed);

/// Total scalar trainable parameters.
std::int64_t count_parameters(SegModelImpl& model);

/// Relative deviation of the count from the reference, when one exists.
std::optional<double> reference_deviation(const ModelSpec& spec, std::int64_t count);

/// Deep copy of all parameters and buffers, in registration order.
std::vector<torch::Tensor> snapshot_state(torch::nn::Module& module);
void restore_state(torch::nn::Module& module, const std::vector<torch::Tensor>& state);

/// Weights plus (encoder, decoder, width_mult, seed) metadata in a torch archive.
void save_checkpoint(SegModelImpl& model, std::uint64_t seed, const std::filesystem::path& path);
/// Rebuilds the architecture from the stored metadata and loads the weights.
SegModel load_checkpoint(const std::filesystem::path& path);

}  // namespace coroseg

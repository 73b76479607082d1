#include "coroseg/zoo.hpp"

#include <cmath>
#include <mutex>

#include <fmt/format.h>

#include "coroseg/datapipe.hpp"
#include "coroseg/errors.hpp"
#include "coroseg/layers.hpp"

namespace coroseg {

namespace {

std::mutex& init_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

const std::vector<ReferenceEntry>& reference_table() {
  using EF = EncoderFamily;
  using DF = DecoderFamily;
  static const std::vector<ReferenceEntry> table{
      {EF::EfficientNet, DF::DeepLabV3, 12'275'848, 722.31},
      {EF::ResNet, DF::DeepLabV3, 51'372'456, 2547.14},
      {EF::Inception, DF::DeepLabV3, 14'597'944, 429.20},
      {EF::DenseNet, DF::DeepLabV3, 5'780'928, 1243.41},
      {EF::UNetEncoder, DF::DeepLabV3, 9'876'576, 985.33},
      {EF::EfficientNet, DF::LinkNet, 32'967'082, 1006.48},
      {EF::ResNet, DF::LinkNet, 83'675'530, 2852.50},
      {EF::Inception, DF::LinkNet, 31'486'746, 672.91},
      {EF::DenseNet, DF::LinkNet, 23'745'954, 1491.42},
      {EF::UNetEncoder, DF::LinkNet, 26'924'098, 1229.67},
      {EF::EfficientNet, DF::FPN, 9'193'322, 810.41},
      {EF::ResNet, DF::FPN, 36'592'650, 2583.21},
      {EF::Inception, DF::FPN, 10'210'714, 506.84},
      {EF::DenseNet, DF::FPN, 8'026'146, 1347.58},
      {EF::UNetEncoder, DF::FPN, 10'778'306, 1084.12},
      {EF::EfficientNet, DF::PAN, 2'324'554, 613.96},
      {EF::ResNet, DF::PAN, 31'347'178, 2541.75},
      {EF::Inception, DF::PAN, 8'696'989, 401.89},
      {EF::DenseNet, DF::PAN, 30'895'429, 6750.59},
      {EF::UNetEncoder, DF::PAN, 3'675'426, 812.47},
      {EF::EfficientNet, DF::UNetDecoder, 38'360'266, 855.48},
      {EF::ResNet, DF::UNetDecoder, 88'824'170, 2720.53},
      // Same size as the ResNet row above in the source table; kept verbatim.
      {EF::Inception, DF::UNetDecoder, 28'645'114, 2720.53, true},
      {EF::DenseNet, DF::UNetDecoder, 20'213'122, 1324.73},
      {EF::UNetEncoder, DF::UNetDecoder, 22'581'250, 1707.23},
  };
  return table;
}

std::string ModelSpec::name() const { return fmt::format("{}-{}", to_string(encoder), to_string(decoder)); }

ModelSpec make_spec(EncoderFamily encoder, DecoderFamily decoder, double width_mult) {
  ModelSpec spec{encoder, decoder, width_mult, std::nullopt, std::nullopt};
  for (const auto& row : reference_table()) {
    if (row.encoder == encoder && row.decoder == decoder) {
      spec.reference_params = row.params;
      spec.reference_size_mb = row.size_mb;
    }
  }
  return spec;
}

std::vector<ModelSpec> list_combinations(double width_mult) {
  std::vector<ModelSpec> out;
  for (DecoderFamily d : kDecoderFamilies) {
    for (EncoderFamily e : kEncoderFamilies) out.push_back(make_spec(e, d, width_mult));
  }
  return out;
}

SegModelImpl::SegModelImpl(const ModelSpec& spec, std::shared_ptr<Encoder> encoder, std::shared_ptr<Decoder> decoder)
    : spec_(spec) {
  if (!(encoder->channels() == decoder->expects())) {
    throw ConfigError(fmt::format("decoder expects {} but encoder emits {}", to_string(decoder->expects()),
                                  to_string(encoder->channels())));
  }
  encoder_ = register_module("encoder", std::move(encoder));
  decoder_ = register_module("decoder", std::move(decoder));
}

torch::Tensor SegModelImpl::forward(const torch::Tensor& x) {
  auto logits = decode(*decoder_, encode(*encoder_, x));
  if (logits.dim() != 5 || logits.size(1) != 1 || logits.sizes().slice(2) != x.sizes().slice(2)) {
    throw ShapeError("decoder produced logits of shape " + nn::shape_of(logits));
  }
  return logits;
}

SegModel assemble(const ModelSpec& spec, std::uint64_t seed) {
  if (!(spec.width_mult > 0.0) || !std::isfinite(spec.width_mult)) {
    throw ConfigError(fmt::format("width_mult must be positive, got {}", spec.width_mult));
  }
  DecoderOptions opt;
  opt.width = scale_channels(opt.width, spec.width_mult);
  std::lock_guard<std::mutex> lock(init_mutex());
  torch::manual_seed(seed);
  auto encoder = build_encoder(spec.encoder, spec.width_mult);
  auto decoder = build_decoder(spec.decoder, encoder->channels(), opt);
  return SegModel(spec, std::move(encoder), std::move(decoder));
}

std::int64_t count_parameters(SegModelImpl& model) {
  std::int64_t n = 0;
  for (const auto& p : model.parameters()) {
    if (p.requires_grad()) n += p.numel();
  }
  return n;
}

std::optional<double> reference_deviation(const ModelSpec& spec, std::int64_t count) {
  if (!spec.reference_params || *spec.reference_params == 0) return std::nullopt;
  const auto ref = static_cast<double>(*spec.reference_params);
  return (static_cast<double>(count) - ref) / ref;
}

std::vector<torch::Tensor> snapshot_state(torch::nn::Module& module) {
  torch::NoGradGuard guard;
  std::vector<torch::Tensor> out;
  for (const auto& p : module.parameters()) out.push_back(p.detach().clone());
  for (const auto& b : module.buffers()) out.push_back(b.detach().clone());
  return out;
}

void restore_state(torch::nn::Module& module, const std::vector<torch::Tensor>& state) {
  torch::NoGradGuard guard;
  auto params = module.parameters();
  auto buffers = module.buffers();
  if (state.size() != params.size() + buffers.size()) {
    throw ShapeError("state snapshot does not match module structure");
  }
  std::size_t i = 0;
  for (auto& p : params) p.copy_(state[i++]);
  for (auto& b : buffers) b.copy_(state[i++]);
}

void save_checkpoint(SegModelImpl& model, std::uint64_t seed, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  torch::serialize::OutputArchive archive;
  model.save(archive);
  archive.write("meta.encoder", c10::IValue(std::string(to_string(model.spec().encoder))));
  archive.write("meta.decoder", c10::IValue(std::string(to_string(model.spec().decoder))));
  archive.write("meta.width_mult", c10::IValue(model.spec().width_mult));
  archive.write("meta.seed", c10::IValue(static_cast<std::int64_t>(seed)));
  try {
    archive.save_to(path.string());
  } catch (const c10::Error& e) {
    throw IOError("cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
}

SegModel load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FileNotFound("no such checkpoint: " + path.string());
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw FormatError("unreadable checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  c10::IValue enc, dec, width, seed;
  if (!archive.try_read("meta.encoder", enc) || !archive.try_read("meta.decoder", dec) ||
      !archive.try_read("meta.width_mult", width) || !archive.try_read("meta.seed", seed)) {
    throw FormatError(path.string() + ": checkpoint lacks model metadata");
  }
  const ModelSpec spec = make_spec(parse_encoder_family(enc.toStringRef()), parse_decoder_family(dec.toStringRef()),
                                   width.toDouble());
  SegModel model = assemble(spec, static_cast<std::uint64_t>(seed.toInt()));
  model->load(archive);
  return model;
}

}  // namespace coroseg

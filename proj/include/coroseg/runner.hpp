#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "coroseg/overlay.hpp"
#include "coroseg/phantom.hpp"
#include "coroseg/trainer.hpp"

namespace coroseg {

/// A numbered family of phantoms: case i uses seed `first_seed + i`.
struct PhantomSet {
  int count = 10;
  std::uint64_t first_seed = 0;
  std::string prefix = "phantom";
  PhantomSpec spec{};  ///< seed field ignored
};

/// Either generated phantoms or a directory of `{case}/image.*`,
/// `{case}/label.*` with an optional `{case}/class.txt` stratification tag.
struct DatasetSource {
  std::optional<PhantomSet> phantoms;
  std::optional<std::filesystem::path> directory;
};

struct ExperimentConfig {
  DatasetSource dataset;
  std::vector<ModelSpec> combinations;  ///< at width_mult
  double width_mult = 1.0;
  int folds = 5;
  TrainConfig train{};
  double window_lo = 0.0;
  double window_hi = 500.0;
  std::filesystem::path output_dir = "results";
  std::uint64_t seed = 0;  ///< copied into train.seed
  bool deterministic = true;
  bool save_predictions = true;
};

/// Parses a JSON config. Every field is optional except the dataset;
/// "combinations" is "all" or a list of "Encoder-Decoder" strings or
/// {"encoder", "decoder"} objects. Relative paths resolve against `base_dir`.
/// Throws ConfigError on any malformed or unknown entry.
ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// The config with every default written out; round-trips through parse_config.
nlohmann::json to_json(const ExperimentConfig& cfg);

PhantomSet parse_phantom_set(const nlohmann::json& j);
nlohmann::json to_json(const PhantomSet& set);

/// Loads or generates every case, window-normalized. Throws DataError on a
/// missing or inconsistent case.
std::vector<Case> load_dataset(const DatasetSource& source, double window_lo = 0.0, double window_hi = 500.0);

/// Raw (unnormalized) image and label of one case.
std::pair<Volume, Mask> load_case(const DatasetSource& source, const std::string& case_id);

/// Writes `{out}/{prefix}{i}/image.nii.gz` and `label.nii.gz` for each phantom.
std::vector<std::string> write_phantoms(const PhantomSet& set, const std::filesystem::path& out_dir);

using ProgressFn = std::function<void(const std::string&)>;

/// Cross-validates every requested combination and writes, under the output
/// directory: manifest.json, aggregate.csv, table.csv/.md and, per
/// combination, metrics.csv, curve-fold{i}.csv, checkpoints and predictions.
std::filesystem::path run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});
std::filesystem::path run_experiment(const std::filesystem::path& config_path, const ProgressFn& progress = {});

/// Renders overlays for one case from a finished run: the first combination
/// in registry order that holds a prediction, unless `combination` is given.
/// Images go to `{results}/renders/{combination}/{case}_*.png`.
OverlayResult render_case(const std::filesystem::path& results_dir, const std::string& case_id,
                               const std::optional<std::string>& combination = std::nullopt);

}  // namespace coroseg

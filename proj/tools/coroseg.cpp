#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "coroseg/errors.hpp"
#include "coroseg/report.hpp"
#include "coroseg/runner.hpp"

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw coroseg::ConfigError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw coroseg::ConfigError(path + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3D coronary segmentation benchmark: 25 encoder-decoder models, k-fold CV, Dice/HD95"};
  app.set_version_flag("--version", COROSEG_VERSION);
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  std::string config_path;
  auto* run = app.add_subcommand("run", "Cross-validate the configured combinations");
  run->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);

  std::string results_dir;
  auto* tab = app.add_subcommand("tabulate", "Rebuild table.csv / table.md from a results directory");
  tab->add_option("results-dir", results_dir, "Output directory of a run")->required();

  std::string case_id;
  std::string combination;
  auto* render = app.add_subcommand("render", "Write ground-truth/prediction overlays for one case");
  render->add_option("case", case_id, "Case id")->required();
  render->add_option("results-dir", results_dir, "Output directory of a run")->required();
  render->add_option("-c,--combination", combination, "Encoder-Decoder whose prediction to show");

  std::string spec_path;
  std::string out_dir;
  auto* phantoms = app.add_subcommand("phantoms", "Write synthetic vessel phantoms as NIfTI case directories");
  phantoms->add_option("spec", spec_path, "Phantom set (JSON)")->required()->check(CLI::ExistingFile);
  phantoms->add_option("out-dir", out_dir, "Destination directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      auto progress = [quiet](const std::string& msg) {
        if (!quiet) std::cerr << msg << std::endl;
      };
      const auto out = coroseg::run_experiment(std::filesystem::path(config_path), progress);
      std::cout << coroseg::load_reports(out).size() << " combination(s) written to " << out.string() << "\n";
      std::cout << coroseg::tabulate(coroseg::load_reports(out)).to_markdown();
    } else if (*tab) {
      const auto table = coroseg::write_tables(coroseg::load_reports(results_dir), results_dir);
      std::cout << table.to_markdown();
    } else if (*render) {
      const auto result = coroseg::render_case(results_dir, case_id,
                                               combination.empty() ? std::nullopt : std::optional(combination));
      for (const auto& p : result.images) std::cout << p.string() << "\n";
      std::cout << result.caption << "\n";
    } else if (*phantoms) {
      const auto set = coroseg::parse_phantom_set(read_json(spec_path));
      for (const auto& id : coroseg::write_phantoms(set, out_dir)) std::cout << id << "\n";
    }
  } catch (const coroseg::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "coroseg/trainer.hpp"

namespace coroseg {

/// Decoder rows x encoder columns of Dice moments, in registry order.
struct ResultTable {
  std::array<std::array<std::optional<Moments>, 5>, 5> cells{};

  /// "0.882 ± 0.013", or empty for a combination that was not run.
  std::string cell(std::size_t decoder_row, std::size_t encoder_col) const;
  std::string to_csv() const;
  std::string to_markdown() const;
};

/// Places each report's Dice moments in its grid cell; a later report for the
/// same combination replaces an earlier one.
ResultTable tabulate(const std::vector<CVReport>& reports);

/// Columns: case_id, fold, dice, hd95_mm, hd_mm, undefined_flag. Distances
/// are blank when undefined. Values are printed round-trip exact.
void write_metrics_csv(const CVReport& report, const std::filesystem::path& path);
std::vector<CaseResult> read_metrics_csv(const std::filesystem::path& path);

/// Columns: epoch, loss, val_dice.
void write_curve_csv(const std::vector<CurvePoint>& curve, const std::filesystem::path& path);

/// One row per report: encoder, decoder, n_cases, moments of dice, hd95 and hd,
/// undefined count and the formatted Dice cell.
void write_aggregate_csv(const std::vector<CVReport>& reports, const std::filesystem::path& path);

/// Rebuilds CVReports from every `<Encoder>-<Decoder>/metrics.csv` below a
/// results directory. Throws FileNotFound when there are none.
std::vector<CVReport> load_reports(const std::filesystem::path& results_dir);

/// Writes table.csv and table.md into `dir` and returns the table.
ResultTable write_tables(const std::vector<CVReport>& reports, const std::filesystem::path& dir);

}  // namespace coroseg

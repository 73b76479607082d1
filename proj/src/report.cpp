#include "coroseg/report.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "coroseg/errors.hpp"

namespace coroseg {

namespace {

std::string exact(double v) { return fmt::format("{}", v); }

std::string optional_exact(const std::optional<double>& v) { return v ? exact(*v) : std::string(); }

double parse_double(const std::string& text, const std::filesystem::path& path) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw FormatError(fmt::format("{}: '{}' is not a number", path.string(), text));
  }
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IOError("cannot write " + path.string());
  return out;
}

template <typename E>
std::size_t position(const auto& registry, E value) {
  for (std::size_t i = 0; i < registry.size(); ++i) {
    if (registry[i] == value) return i;
  }
  return registry.size();
}

}  // namespace

std::string ResultTable::cell(std::size_t decoder_row, std::size_t encoder_col) const {
  const auto& m = cells.at(decoder_row).at(encoder_col);
  return m ? format_moments(*m) : std::string();
}

std::string ResultTable::to_csv() const {
  std::string out = "decoder";
  for (auto e : kEncoderFamilies) out += fmt::format(",{}", to_string(e));
  out += '\n';
  for (std::size_t r = 0; r < kDecoderFamilies.size(); ++r) {
    out += to_string(kDecoderFamilies[r]);
    for (std::size_t c = 0; c < kEncoderFamilies.size(); ++c) out += "," + cell(r, c);
    out += '\n';
  }
  return out;
}

std::string ResultTable::to_markdown() const {
  std::string out = "| Decoder |";
  std::string rule = "|---|";
  for (auto e : kEncoderFamilies) {
    out += fmt::format(" {} |", to_string(e));
    rule += "---|";
  }
  out += "\n" + rule + "\n";
  for (std::size_t r = 0; r < kDecoderFamilies.size(); ++r) {
    out += fmt::format("| {} |", to_string(kDecoderFamilies[r]));
    for (std::size_t c = 0; c < kEncoderFamilies.size(); ++c) out += fmt::format(" {} |", cell(r, c));
    out += '\n';
  }
  return out;
}

ResultTable tabulate(const std::vector<CVReport>& reports) {
  ResultTable table;
  for (const auto& rep : reports) {
    const std::size_t r = position(kDecoderFamilies, rep.spec.decoder);
    const std::size_t c = position(kEncoderFamilies, rep.spec.encoder);
    table.cells[r][c] = rep.dice;
  }
  return table;
}

void write_metrics_csv(const CVReport& report, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "case_id,fold,dice,hd95_mm,hd_mm,undefined_flag\n";
  for (const auto& row : report.cases) {
    const auto& m = row.metrics;
    out << fmt::format("{},{},{},{},{},{}\n", m.case_id, row.fold, exact(m.dice), optional_exact(m.hd95),
                       optional_exact(m.hd), m.undefined() ? 1 : 0);
  }
}

std::vector<CaseResult> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileNotFound("no such metrics file: " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "case_id,fold,dice,hd95_mm,hd_mm,undefined_flag") {
    throw FormatError(path.string() + ": unexpected header '" + line + "'");
  }
  std::vector<CaseResult> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 6) throw FormatError(fmt::format("{}: expected 6 fields in '{}'", path.string(), line));
    CaseResult row;
    row.metrics.case_id = f[0];
    row.fold = static_cast<int>(parse_double(f[1], path));
    row.metrics.dice = parse_double(f[2], path);
    if (!f[3].empty()) row.metrics.hd95 = parse_double(f[3], path);
    if (!f[4].empty()) row.metrics.hd = parse_double(f[4], path);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_curve_csv(const std::vector<CurvePoint>& curve, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "epoch,loss,val_dice\n";
  for (const auto& p : curve) out << fmt::format("{},{},{}\n", p.epoch, exact(p.loss), exact(p.val_dice));
}

void write_aggregate_csv(const std::vector<CVReport>& reports, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "encoder,decoder,n_cases,dice_mean,dice_std,hd95_mean,hd95_std,hd_mean,hd_std,undefined_count,dice_cell\n";
  for (const auto& r : reports) {
    out << fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", to_string(r.spec.encoder), to_string(r.spec.decoder),
                       r.cases.size(), exact(r.dice.mean), exact(r.dice.std), exact(r.hd95.mean), exact(r.hd95.std),
                       exact(r.hd.mean), exact(r.hd.std), r.undefined_count, format_moments(r.dice));
  }
}

std::vector<CVReport> load_reports(const std::filesystem::path& results_dir) {
  if (!std::filesystem::is_directory(results_dir)) {
    throw FileNotFound("no such results directory: " + results_dir.string());
  }
  std::vector<CVReport> reports;
  for (DecoderFamily d : kDecoderFamilies) {
    for (EncoderFamily e : kEncoderFamilies) {
      ModelSpec spec = make_spec(e, d);
      const auto path = results_dir / spec.name() / "metrics.csv";
      if (!std::filesystem::exists(path)) continue;
      CVReport rep;
      rep.spec = spec;
      rep.cases = read_metrics_csv(path);
      aggregate(rep);
      reports.push_back(std::move(rep));
    }
  }
  if (reports.empty()) throw FileNotFound("no <Encoder>-<Decoder>/metrics.csv under " + results_dir.string());
  return reports;
}

ResultTable write_tables(const std::vector<CVReport>& reports, const std::filesystem::path& dir) {
  ResultTable table = tabulate(reports);
  open_out(dir / "table.csv") << table.to_csv();
  open_out(dir / "table.md") << table.to_markdown();
  return table;
}

}  // namespace coroseg

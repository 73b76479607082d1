// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset, e.g. `acceptance 2 3 5`.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "coroseg/datapipe.hpp"
#include "coroseg/infer.hpp"
#include "coroseg/layers.hpp"
#include "coroseg/metrics.hpp"
#include "coroseg/phantom.hpp"
#include "coroseg/report.hpp"
#include "coroseg/runner.hpp"
#include "coroseg/trainer.hpp"
#include "coroseg/zoo.hpp"
#include "oracles.hpp"

using namespace coroseg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (detail.size() < 400) detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<Case> phantom_cases(int n, std::uint64_t first_seed) {
  std::vector<Case> out;
  for (int i = 0; i < n; ++i) {
    PhantomSpec s;
    s.seed = first_seed + static_cast<std::uint64_t>(i);
    Phantom ph = generate_phantom(s);
    out.push_back({fmt::format("ph{}", i), window_normalize(ph.image), std::move(ph.label), std::nullopt});
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 1. Every pairing at full width maps 1x1x64^3 to 1x1x64^3 and every encoder
//    stage has its Table 1 shape.
Outcome shape_conformance() {
  Outcome o;
  const auto t0 = Clock::now();
  torch::NoGradGuard guard;
  torch::manual_seed(0);
  const auto x = torch::rand({1, 1, 64, 64, 64});
  const std::map<EncoderFamily, std::array<std::int64_t, 4>> table1{
      {EncoderFamily::EfficientNet, {128, 256, 512, 1024}}, {EncoderFamily::ResNet, {256, 512, 1024, 2048}},
      {EncoderFamily::Inception, {32, 128, 512, 512}},      {EncoderFamily::DenseNet, {64, 128, 192, 256}},
      {EncoderFamily::UNetEncoder, {64, 128, 256, 256}}};
  int stage_checks = 0;
  std::set<EncoderFamily> stages_done;
  for (const auto& spec : list_combinations(1.0)) {
    auto model = assemble(spec, 0);
    const auto y = model->forward(x);
    o.require(y.sizes() == at::IntArrayRef{1, 1, 64, 64, 64}, spec.name() + " output " + nn::shape_of(y));
    if (stages_done.insert(spec.encoder).second) {
      const auto p = encode(model->encoder(), x);
      for (std::size_t s = 0; s < 4; ++s) {
        const std::int64_t e = 32 >> s;
        const auto want = std::vector<std::int64_t>{1, table1.at(spec.encoder)[s], e, e, e};
        o.require(p.stages[s].sizes() == at::IntArrayRef(want),
                  fmt::format("{} stage {} is {}", to_string(spec.encoder), s + 1, nn::shape_of(p.stages[s])));
        ++stage_checks;
      }
    }
  }
  const double t = seconds_since(t0);
  o.require(stage_checks == 20, fmt::format("{} stage shapes checked", stage_checks));
  o.require(t < 15 * 60, fmt::format("took {:.0f}s", t));
  o.detail = fmt::format("25 forwards, {} stage shapes, {:.0f}s", stage_checks, t) +
             (o.pass ? "" : " | " + o.detail);
  return o;
}

// 2. dice / hausdorff / hd95 against exhaustive oracles plus metric properties.
Outcome metric_oracles() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::int64_t> extent(2, 12);
  std::uniform_real_distribution<double> spacing(0.2, 2.0), density(0.02, 0.6), factor(0.1, 10.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Dims d{extent(rng), extent(rng), extent(rng)};
    const Spacing s{spacing(rng), spacing(rng), spacing(rng)};
    const Mask a = oracle::random_mask(d, s, density(rng), rng);
    const Mask b = oracle::random_mask(d, s, density(rng), rng);
    const double dab = dice(a, b), h = hausdorff(a, b), h95 = hd95(a, b);
    worst = std::max({worst, std::abs(dab - oracle::dice(a, b)), std::abs(h - oracle::hausdorff(a, b)),
                      std::abs(h95 - oracle::hd95(a, b))});
    o.require(dab == dice(b, a) && h == hausdorff(b, a) && h95 == hd95(b, a), fmt::format("asymmetry in pair {}", trial));
    o.require(dab >= 0.0 && dab <= 1.0 && h >= 0.0 && h95 >= 0.0, fmt::format("range in pair {}", trial));
    o.require(h95 <= h, fmt::format("hd95 > hd in pair {}", trial));
    const double k = factor(rng);
    Mask as = a, bs = b;
    as.set_spacing({s.sx * k, s.sy * k, s.sz * k});
    bs.set_spacing(as.spacing());
    o.require(dice(as, bs) == dab, fmt::format("dice changed under scaling in pair {}", trial));
    o.require(std::abs(hausdorff(as, bs) - k * h) <= 1e-9 * std::max(1.0, k * h) &&
                  std::abs(hd95(as, bs) - k * h95) <= 1e-9 * std::max(1.0, k * h95),
              fmt::format("distances not scaled by {} in pair {}", k, trial));
  }
  const double t = seconds_since(t0);
  o.require(worst <= 1e-9, fmt::format("max oracle deviation {:.3g}", worst));
  o.require(t < 60, fmt::format("took {:.1f}s", t));
  o.detail = fmt::format("100 pairs, max oracle deviation {:.2g}, {:.1f}s", worst, t) + (o.pass ? "" : " | " + o.detail);
  return o;
}

// 3. Augmentation frequencies, involution and identity.
Outcome augmentation_statistics() {
  Outcome o;
  const auto t0 = Clock::now();
  PhantomSpec spec;
  spec.seed = 21;
  const Phantom ph = generate_phantom(spec);
  PatchPair pp{window_normalize(ph.image), ph.label, {0, 0, 0}, false};
  AugmentConfig cfg;
  Rng rng(cfg.seed);
  std::array<int, 3> flips{}, rots{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    AugmentTrace t;
    const PatchPair out = augment(pp, cfg, rng, &t);
    if (i < 50) o.require(count_foreground(out.label) == count_foreground(pp.label), "label count changed");
    for (int a = 0; a < 3; ++a) {
      flips[a] += t.flipped[a];
      rots[a] += t.quarter_turns[a] != 0;
    }
  }
  std::string freq;
  for (int a = 0; a < 3; ++a) {
    const double f = flips[a] / double(n), r = rots[a] / double(n);
    freq += fmt::format(" {}:{:.4f}/{:.4f}", "xyz"[a], f, r);
    o.require(std::abs(f - 0.10) <= 0.01, fmt::format("flip frequency {:.4f} on axis {}", f, a));
    o.require(std::abs(r - 0.10) <= 0.01, fmt::format("rotation frequency {:.4f} on axis {}", r, a));
  }
  for (int a = 0; a < 3; ++a) {
    o.require(flip_axis(flip_axis(pp.image, a), a) == pp.image && flip_axis(flip_axis(pp.label, a), a) == pp.label,
              fmt::format("double flip on axis {} is not the identity", a));
  }
  AugmentConfig off;
  off.p_flip = 0.0;
  off.p_rot = 0.0;
  for (int i = 0; i < 100; ++i) {
    const PatchPair out = augment(pp, off, rng);
    o.require(out.image == pp.image && out.label == pp.label, "zero-probability augment changed the patch");
  }
  const double t = seconds_since(t0);
  o.require(t < 60, fmt::format("took {:.1f}s", t));
  o.detail = fmt::format("flip/rot frequencies{}, {:.1f}s", freq, t) + (o.pass ? "" : " | " + o.detail);
  return o;
}

// 4. Intensity windowing.
Outcome normalization() {
  Outcome o;
  Volume v({3, 1, 1}, {0.4, 0.4, 0.625});
  v[0] = -50.0f;
  v[1] = 250.0f;
  v[2] = 600.0f;
  const Volume n = window_normalize(v);
  o.require(n[0] == 0.0f && n[1] == 0.5f && n[2] == 1.0f,
            fmt::format("mapped to ({}, {}, {})", n[0], n[1], n[2]));
  std::mt19937_64 rng(4);
  std::normal_distribution<float> wide(250.0f, 500.0f);
  for (int trial = 0; trial < 20; ++trial) {
    Volume r({17, 13, 11}, {1, 1, 1});
    for (auto& x : r.storage()) x = wide(rng);
    const Volume normalized = window_normalize(r);
    for (float x : normalized.storage()) o.require(x >= 0.0f && x <= 1.0f, fmt::format("output {}", x));
  }
  o.detail = "-50 -> 0, 250 -> 0.5, 600 -> 1; 20 random volumes within [0, 1]" + (o.pass ? "" : " | " + o.detail);
  return o;
}

// 5. Stratified five-fold split of 40 cases.
Outcome fold_properties() {
  Outcome o;
  std::vector<std::string> ids, labels;
  for (int i = 0; i < 40; ++i) {
    ids.push_back(fmt::format("case{:02d}", i));
    labels.push_back(i < 20 ? "normal" : "diseased");
  }
  const FoldSplit f = make_folds(ids, labels, 5, 2024);
  std::set<std::size_t> seen;
  for (int k = 0; k < 5; ++k) {
    const auto v = f.validation(k);
    int normal = 0;
    for (auto i : v) {
      o.require(seen.insert(i).second, fmt::format("case {} in two folds", i));
      normal += labels[i] == "normal";
    }
    o.require(v.size() == 8, fmt::format("fold {} has {} cases", k, v.size()));
    o.require(normal == 4 && v.size() - normal == 4, fmt::format("fold {} has {} normal", k, normal));
  }
  o.require(seen.size() == 40, "folds are not exhaustive");
  o.require(make_folds(ids, labels, 5, 2024).fold_of == f.fold_of, "same seed gave a different split");
  o.detail = "5 disjoint folds of 8, 4 + 4 per class, seeded" + (o.pass ? "" : " | " + o.detail);
  return o;
}

// 6. Loss gradient against central differences in double precision.
Outcome gradient_correctness() {
  Outcome o;
  torch::manual_seed(6);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const auto target = (torch::rand({1, 1, 8, 8, 8}, torch::kFloat64) > 0.6).to(torch::kFloat64);
    auto logits = (torch::randn({1, 1, 8, 8, 8}, torch::kFloat64) * 3.0).requires_grad_(true);
    segmentation_loss(logits, target).backward();
    const auto grad = logits.grad().flatten();
    torch::NoGradGuard guard;
    const auto base = logits.detach().flatten();
    // Central differences: truncation error O(h^2), rounding O(eps / h).
    const double h = 1e-4;
    for (std::int64_t i = 0; i < base.numel(); ++i) {
      auto plus = base.clone(), minus = base.clone();
      plus[i] += h;
      minus[i] -= h;
      const double fd = (segmentation_loss(plus.view_as(logits), target).item<double>() -
                         segmentation_loss(minus.view_as(logits), target).item<double>()) /
                        (2 * h);
      worst = std::max(worst, std::abs(grad[i].item<double>() - fd) / std::max(std::abs(fd), 1e-12));
    }
  }
  o.require(worst < 1e-3, fmt::format("relative error {:.3g}", worst));
  o.detail = fmt::format("5 random 8^3 instances, max relative error {:.2g}", worst) + (o.pass ? "" : " | " + o.detail);
  return o;
}

// 7. Learnability: single-phantom overfit, then 5-fold CV on 10 phantoms.
Outcome learnability() {
  Outcome o;
  enable_deterministic_mode();
  const ModelSpec spec = make_spec(EncoderFamily::EfficientNet, DecoderFamily::LinkNet, 0.25);

  auto t0 = Clock::now();
  const auto single = phantom_cases(1, 1);
  TrainConfig overfit;
  overfit.epochs = 20;
  overfit.steps_per_epoch = 10;  // 200 steps
  overfit.batch_size = 1;
  overfit.augment.p_flip = 0.0;
  overfit.augment.p_rot = 0.0;
  auto model = assemble(spec, 0);
  const FoldResult fit = train_fold(*model, 0, {&single[0]}, {&single[0]}, overfit);
  const double t_fit = seconds_since(t0);
  o.require(fit.best.best_val_dice >= 0.95, fmt::format("overfit Dice {:.4f}", fit.best.best_val_dice));

  t0 = Clock::now();
  const auto data = phantom_cases(10, 100);
  TrainConfig cv;
  cv.epochs = 10;
  cv.steps_per_epoch = 10;
  cv.batch_size = 1;
  const CVReport report = cross_validate(spec, data, cv);
  const double t_cv = seconds_since(t0);
  o.require(report.dice.mean >= 0.70, fmt::format("CV mean Dice {:.4f}", report.dice.mean));
  o.require(t_cv < 30 * 60, fmt::format("CV took {:.0f}s", t_cv));
  o.detail = fmt::format("overfit best Dice {:.4f} (epoch {}, {:.0f}s); 5-fold CV Dice {} ({:.0f}s)",
                         fit.best.best_val_dice, fit.best.epoch, t_fit, format_moments(report.dice), t_cv) +
             (o.pass ? "" : " | " + o.detail);
  return o;
}

// 8. Sliding-window coverage, shape and threshold monotonicity on 100^3.
Outcome inference_coverage() {
  Outcome o;
  const Dims d{100, 100, 100};
  StitchConfig cfg;
  const Dims padded = padded_extent(d, cfg.stride);
  std::vector<std::uint16_t> hits(static_cast<std::size_t>(d.count()), 0);
  const auto origins = window_origins(padded, cfg.stride);
  for (const auto& w : origins) {
    for (std::int64_t z = w[2]; z < std::min(w[2] + kPatch, d.nz); ++z)
      for (std::int64_t y = w[1]; y < std::min(w[1] + kPatch, d.ny); ++y)
        for (std::int64_t x = w[0]; x < std::min(w[0] + kPatch, d.nx); ++x)
          hits[static_cast<std::size_t>(x + d.nx * (y + d.ny * z))]++;
  }
  const auto uncovered = std::count(hits.begin(), hits.end(), 0);
  o.require(uncovered == 0, fmt::format("{} voxels uncovered", uncovered));

  PhantomSpec ps;
  ps.seed = 3;
  ps.dims = d;
  const Phantom ph = generate_phantom(ps);
  auto model = assemble(make_spec(EncoderFamily::UNetEncoder, DecoderFamily::LinkNet, 0.25), 0);
  int windows = 0;
  const PatchPredictor counted = [&](const torch::Tensor& x) {
    windows += static_cast<int>(x.size(0));
    return model->forward(x);
  };
  model->eval();
  torch::NoGradGuard guard;
  const Prediction p = sliding_window_predict(counted, window_normalize(ph.image), cfg);
  o.require(windows == static_cast<int>(origins.size()), fmt::format("{} windows evaluated", windows));
  o.require(p.mask.dims() == d && p.probability.dims() == d, "output dims differ from input");
  o.require(p.mask.spacing() == ph.image.spacing(), "output spacing differs from input");
  Mask previous = threshold_probability(p.probability, 0.001);
  for (double t = 0.05; t < 1.0; t += 0.05) {
    const Mask next = threshold_probability(p.probability, t);
    bool monotone = true;
    for (std::int64_t i = 0; i < next.size(); ++i) monotone = monotone && next[i] <= previous[i];
    o.require(monotone, fmt::format("threshold {:.2f} added foreground", t));
    previous = next;
  }
  o.detail = fmt::format("{} windows, every voxel covered (min hits {}), 100^3 output, monotone in threshold",
                         origins.size(), *std::min_element(hits.begin(), hits.end())) +
             (o.pass ? "" : " | " + o.detail);
  return o;
}

// 9. Table 3 cell format and bit-reproducible experiments.
Outcome reporting_fidelity() {
  Outcome o;
  std::vector<CVReport> reports;
  for (const auto& spec : list_combinations()) {
    CVReport r;
    r.spec = spec;
    r.dice = {0.8820, 0.0130, 10};
    reports.push_back(r);
  }
  const ResultTable full = tabulate(reports);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) o.require(full.cell(r, c) == "0.882 ± 0.013", "cell " + full.cell(r, c));
  const ResultTable partial = tabulate({reports[6]});
  o.require(partial.cell(1, 1) == "0.882 ± 0.013" && partial.cell(0, 0).empty(), "missing cell not blank");

  const fs::path root = fs::temp_directory_path() / "coroseg_acceptance";
  fs::remove_all(root);
  nlohmann::json cfg{{"dataset", {{"phantoms", {{"count", 10}, {"first_seed", 60}}}}},
                     {"combinations", {"UNetEncoder-LinkNet", "DenseNet-PAN"}},
                     {"width_mult", 0.125},
                     {"seed", 11},
                     {"deterministic", true},
                     {"train", {{"epochs", 2}, {"steps_per_epoch", 2}, {"batch_size", 1}}}};
  std::vector<fs::path> outs;
  for (const char* run : {"first", "second"}) {
    cfg["output_dir"] = (root / run).string();
    outs.push_back(run_experiment(parse_config(cfg)));
  }
  for (const char* name : {"UNetEncoder-LinkNet", "DenseNet-PAN"}) {
    const std::string a = slurp(outs[0] / name / "metrics.csv"), b = slurp(outs[1] / name / "metrics.csv");
    o.require(!a.empty() && a == b, std::string(name) + " metrics differ between runs");
  }
  o.require(slurp(outs[0] / "aggregate.csv") == slurp(outs[1] / "aggregate.csv"), "aggregate tables differ");
  o.detail = "5x5 grid of \"0.882 ± 0.013\" cells, blanks for missing; two seeded runs bit-identical" +
             (o.pass ? "" : " | " + o.detail);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"shape conformance", shape_conformance},
      {"metric oracle equivalence", metric_oracles},
      {"augmentation statistics", augmentation_statistics},
      {"normalization", normalization},
      {"fold properties", fold_properties},
      {"gradient correctness", gradient_correctness},
      {"learnability", learnability},
      {"inference coverage", inference_coverage},
      {"reporting fidelity", reporting_fidelity},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += o.pass ? 0 : 1;
    std::printf("criterion %d (%s): %s — %s\n", id, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}

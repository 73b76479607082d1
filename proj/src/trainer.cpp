#include "coroseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "coroseg/errors.hpp"
#include "coroseg/layers.hpp"

namespace coroseg {

namespace {

Rng derived_stream(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  return Rng(seq);
}

template <typename T>
torch::Tensor to_tensor(const Grid3<T>& g) {
  const Dims d = g.dims();
  std::vector<float> values(g.storage().begin(), g.storage().end());
  return torch::from_blob(values.data(), {1, d.nz, d.ny, d.nx}, torch::kFloat32).clone();
}

}  // namespace

std::vector<std::size_t> FoldSplit::validation(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] == fold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldSplit::training(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] != fold) out.push_back(i);
  }
  return out;
}

FoldSplit make_folds(const std::vector<std::string>& case_ids, const std::optional<std::vector<std::string>>& labels,
                     int k, std::uint64_t seed) {
  if (k < 2) throw ValidationError(fmt::format("need at least 2 folds, got {}", k));
  if (case_ids.size() < static_cast<std::size_t>(k)) {
    throw ValidationError(fmt::format("{} cases cannot fill {} folds", case_ids.size(), k));
  }
  if (labels && labels->size() != case_ids.size()) {
    throw ValidationError(fmt::format("{} labels for {} cases", labels->size(), case_ids.size()));
  }
  FoldSplit split;
  split.k = k;
  split.case_ids = case_ids;
  split.fold_of.assign(case_ids.size(), -1);
  split.stratified = labels.has_value();

  // Classes in sorted order so the result does not depend on input order of tags.
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < case_ids.size(); ++i) groups[labels ? (*labels)[i] : std::string()].push_back(i);

  Rng rng = derived_stream(seed, 0x5f0d);
  int next = 0;
  for (auto& [cls, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t idx : members) {
      split.fold_of[idx] = next;
      next = (next + 1) % k;
    }
  }
  return split;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError(fmt::format("epochs must be >= 1, got {}", epochs));
  if (steps_per_epoch < 1) throw ValidationError(fmt::format("steps_per_epoch must be >= 1, got {}", steps_per_epoch));
  if (batch_size < 1) throw ValidationError(fmt::format("batch_size must be >= 1, got {}", batch_size));
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError(fmt::format("learning_rate must be positive, got {}", learning_rate));
  }
  if (!(dice_w >= 0.0 && ce_w >= 0.0) || dice_w + ce_w <= 0.0) {
    throw ValidationError(fmt::format("loss weights must be non-negative and not both zero, got ({}, {})", dice_w, ce_w));
  }
  if (!(fg_bias >= 0.0 && fg_bias <= 1.0)) throw ValidationError(fmt::format("fg_bias must lie in [0, 1], got {}", fg_bias));
  augment.validate();
  try {
    stitch.validate();
  } catch (const ConfigError& e) {
    throw ValidationError(e.what());
  }
}

torch::Tensor segmentation_loss(const torch::Tensor& logits, const torch::Tensor& target, double dice_w,
                                double ce_w) {
  if (logits.sizes() != target.sizes()) {
    throw ShapeError(fmt::format("logits {} vs target {}", nn::shape_of(logits), nn::shape_of(target)));
  }
  const auto t = target.to(logits.scalar_type());
  const auto p = torch::sigmoid(logits);
  const auto soft_dice = (2.0 * (p * t).sum() + 1.0) / (p.sum() + t.sum() + 1.0);
  const auto bce = torch::binary_cross_entropy_with_logits(logits, t);
  return dice_w * (1.0 - soft_dice) + ce_w * bce;
}

double validation_dice(SegModelImpl& model, const std::vector<const Case*>& cases, const StitchConfig& stitch) {
  if (cases.empty()) throw ValidationError("validation set is empty");
  double total = 0.0;
  for (const Case* c : cases) total += dice(sliding_window_predict(model, c->image, stitch).mask, c->label);
  return total / static_cast<double>(cases.size());
}

FoldResult train_fold(SegModelImpl& model, std::uint64_t model_seed, const std::vector<const Case*>& train,
                      const std::vector<const Case*>& validation, const TrainConfig& cfg,
                      const std::function<void(const CurvePoint&)>& on_epoch) {
  cfg.validate();
  if (train.empty()) throw ValidationError("training set is empty");
  if (validation.empty()) throw ValidationError("validation set is empty");

  std::vector<PatchSampler> samplers;
  samplers.reserve(train.size());
  for (const Case* c : train) samplers.emplace_back(c->image, c->label);

  Rng sample_rng = derived_stream(cfg.seed, model_seed * 2 + 1);
  Rng augment_rng = derived_stream(cfg.augment.seed, model_seed * 2 + 2);
  std::uniform_int_distribution<std::size_t> pick(0, samplers.size() - 1);

  torch::optim::Adam optimizer(model.parameters(), torch::optim::AdamOptions(cfg.learning_rate));
  FoldResult result;
  result.best.spec = model.spec();
  result.best.seed = model_seed;
  result.best.best_val_dice = -1.0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    model.train();
    double loss_sum = 0.0;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      std::vector<torch::Tensor> images, labels;
      for (int b = 0; b < cfg.batch_size; ++b) {
        PatchPair pp = samplers[pick(sample_rng)].draw(sample_rng, cfg.fg_bias);
        pp = augment(pp, cfg.augment, augment_rng);
        images.push_back(to_tensor(pp.image));
        labels.push_back(to_tensor(pp.label));
      }
      const auto x = torch::stack(images);
      const auto y = torch::stack(labels);
      optimizer.zero_grad();
      auto loss = segmentation_loss(model.forward(x), y, cfg.dice_w, cfg.ce_w);
      const double value = loss.item<double>();
      if (!std::isfinite(value)) throw NumericError(fmt::format("training loss became {} at epoch {}", value, epoch));
      loss.backward();
      optimizer.step();
      loss_sum += value;
    }
    CurvePoint point{epoch, loss_sum / cfg.steps_per_epoch, validation_dice(model, validation, cfg.stitch)};
    result.curve.push_back(point);
    if (point.val_dice > result.best.best_val_dice) {
      result.best.best_val_dice = point.val_dice;
      result.best.epoch = epoch;
      result.best.state = snapshot_state(model);
    }
    if (on_epoch) on_epoch(point);
  }
  restore_state(model, result.best.state);
  return result;
}

Moments moments(const std::vector<double>& values) {
  Moments m;
  m.n = values.size();
  if (values.empty()) return m;
  m.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(m.n);
  double ss = 0.0;
  for (double v : values) ss += (v - m.mean) * (v - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(m.n));
  return m;
}

std::string format_moments(const Moments& m, int decimals) {
  return fmt::format("{:.{}f} ± {:.{}f}", m.mean, decimals, m.std, decimals);
}

void aggregate(CVReport& report) {
  std::vector<double> d, h95, h;
  report.undefined_count = 0;
  for (const auto& row : report.cases) {
    d.push_back(row.metrics.dice);
    if (row.metrics.hd95) h95.push_back(*row.metrics.hd95);
    if (row.metrics.hd) h.push_back(*row.metrics.hd);
    if (row.metrics.undefined()) ++report.undefined_count;
  }
  report.dice = moments(d);
  report.hd95 = moments(h95);
  report.hd = moments(h);
}

CVReport cross_validate(const ModelSpec& spec, const std::vector<Case>& dataset, const TrainConfig& cfg,
                        const FoldSplit& folds, const CVHooks& hooks) {
  cfg.validate();
  if (folds.case_ids.size() != dataset.size()) {
    throw ValidationError(fmt::format("fold split covers {} cases, dataset has {}", folds.case_ids.size(), dataset.size()));
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (folds.case_ids[i] != dataset[i].id) {
      throw ValidationError(fmt::format("fold split case {} is '{}', dataset has '{}'", i, folds.case_ids[i], dataset[i].id));
    }
  }
  CVReport report;
  report.spec = spec;
  for (int fold = 0; fold < folds.k; ++fold) {
    std::vector<const Case*> train, validation;
    for (std::size_t i : folds.training(fold)) train.push_back(&dataset[i]);
    for (std::size_t i : folds.validation(fold)) validation.push_back(&dataset[i]);
    const std::uint64_t model_seed = cfg.seed + static_cast<std::uint64_t>(fold);
    SegModel model = assemble(spec, model_seed);
    std::function<void(const CurvePoint&)> on_epoch;
    if (hooks.on_epoch) on_epoch = [&](const CurvePoint& p) { hooks.on_epoch(fold, p); };
    FoldResult trained = train_fold(*model, model_seed, train, validation, cfg, on_epoch);
    if (hooks.on_fold) hooks.on_fold(fold, *model, trained);
    for (const Case* c : validation) {
      Prediction pred = sliding_window_predict(*model, c->image, cfg.stitch);
      report.cases.push_back({fold, evaluate_case(c->id, pred.mask, c->label)});
      if (hooks.on_prediction) hooks.on_prediction(fold, *c, pred);
    }
    report.curves.push_back(std::move(trained.curve));
    report.fold_best_dice.push_back(trained.best.best_val_dice);
  }
  aggregate(report);
  return report;
}

CVReport cross_validate(const ModelSpec& spec, const std::vector<Case>& dataset, const TrainConfig& cfg) {
  std::vector<std::string> ids;
  std::vector<std::string> tags;
  bool tagged = true;
  for (const auto& c : dataset) {
    ids.push_back(c.id);
    if (c.cls) tags.push_back(*c.cls);
    else tagged = false;
  }
  const FoldSplit folds = make_folds(ids, tagged ? std::optional(tags) : std::nullopt, 5, cfg.seed);
  return cross_validate(spec, dataset, cfg, folds);
}

void enable_deterministic_mode() {
  torch::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(true, false);
}

}  // namespace coroseg

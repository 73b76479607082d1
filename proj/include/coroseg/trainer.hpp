#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "coroseg/datapipe.hpp"
#include "coroseg/grid.hpp"
#include "coroseg/infer.hpp"
#include "coroseg/metrics.hpp"
#include "coroseg/zoo.hpp"

namespace coroseg {

/// One training/validation case: a normalized image with its label.
struct Case {
  std::string id;
  Volume image;  ///< already window-normalized to [0, 1]
  Mask label;
  std::optional<std::string> cls;  ///< stratification tag, e.g. "normal" / "diseased"
};

/// Assignment of every case to one of k validation folds.
struct FoldSplit {
  int k = 5;
  std::vector<std::string> case_ids;
  std::vector<int> fold_of;  ///< parallel to case_ids
  bool stratified = false;

  /// Indices into case_ids validated in `fold`, ascending.
  std::vector<std::size_t> validation(int fold) const;
  /// Indices into case_ids trained on in `fold`, ascending.
  std::vector<std::size_t> training(int fold) const;
};

/// Shuffles with `seed` and deals cases round-robin into k folds. With labels,
/// each class is dealt in turn, continuing where the previous class stopped,
/// so both fold sizes and per-class counts differ by at most one.
/// Throws ValidationError when there are fewer cases than folds.
FoldSplit make_folds(const std::vector<std::string>& case_ids,
                     const std::optional<std::vector<std::string>>& labels = std::nullopt, int k = 5,
                     std::uint64_t seed = 0);

struct TrainConfig {
  int epochs = 20;
  int steps_per_epoch = 10;
  int batch_size = 2;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  double dice_w = 1.0;
  double ce_w = 1.0;
  double fg_bias = 0.5;
  AugmentConfig augment{};
  StitchConfig stitch{};

  /// Throws ValidationError on any out-of-range field.
  void validate() const;
};

/// dice_w * (1 - softDice(sigmoid(logits), target)) + ce_w * BCE(logits, target),
/// soft Dice smoothed by 1 in numerator and denominator and pooled over the
/// batch. Works in any floating dtype. Throws ShapeError on mismatched shapes.
torch::Tensor segmentation_loss(const torch::Tensor& logits, const torch::Tensor& target, double dice_w = 1.0,
                                double ce_w = 1.0);

struct CurvePoint {
  int epoch = 0;
  double loss = 0.0;      ///< mean training loss over the epoch
  double val_dice = 0.0;  ///< mean whole-volume validation Dice
};

struct Checkpoint {
  ModelSpec spec;
  std::uint64_t seed = 0;  ///< initialization seed of the model
  std::vector<torch::Tensor> state;
  double best_val_dice = 0.0;
  int epoch = 0;
};

struct FoldResult {
  Checkpoint best;
  std::vector<CurvePoint> curve;
};

/// Mean whole-volume Dice of sliding-window predictions over `cases`.
double validation_dice(SegModelImpl& model, const std::vector<const Case*>& cases, const StitchConfig& stitch);

/// Adam on patch batches, validating after every epoch and keeping the
/// snapshot with the highest validation Dice (first occurrence on ties). The
/// best weights are loaded back into `model` before returning.
/// Throws ValidationError on an empty set or an invalid config.
FoldResult train_fold(SegModelImpl& model, std::uint64_t model_seed, const std::vector<const Case*>& train,
                      const std::vector<const Case*>& validation, const TrainConfig& cfg,
                      const std::function<void(const CurvePoint&)>& on_epoch = {});

/// Mean and population standard deviation.
struct Moments {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};
Moments moments(const std::vector<double>& values);
/// "0.882 ± 0.013"
std::string format_moments(const Moments& m, int decimals = 3);

struct CaseResult {
  int fold = 0;
  MetricReport metrics;
};

struct CVReport {
  ModelSpec spec;
  std::vector<CaseResult> cases;  ///< one row per (fold, validation case), fold order
  std::vector<std::vector<CurvePoint>> curves;  ///< per fold
  std::vector<double> fold_best_dice;
  Moments dice;
  Moments hd95;  ///< over defined values only
  Moments hd;
  std::size_t undefined_count = 0;
};

/// Recomputes the aggregate moments from the per-case rows.
void aggregate(CVReport& report);

/// Optional observers for persisting artefacts while a cross-validation runs.
struct CVHooks {
  std::function<void(int fold, const CurvePoint&)> on_epoch;
  std::function<void(int fold, SegModelImpl&, const FoldResult&)> on_fold;
  std::function<void(int fold, const Case&, const Prediction&)> on_prediction;
};

/// Trains one model per fold (initialization seed cfg.seed + fold) and
/// evaluates every validation case with the best weights.
CVReport cross_validate(const ModelSpec& spec, const std::vector<Case>& dataset, const TrainConfig& cfg,
                        const FoldSplit& folds, const CVHooks& hooks = {});
/// Folds drawn with make_folds(ids, class tags if all present, 5, cfg.seed).
CVReport cross_validate(const ModelSpec& spec, const std::vector<Case>& dataset, const TrainConfig& cfg);

/// Single-threaded, deterministic kernels: repeated runs are bit-identical.
void enable_deterministic_mode();

}  // namespace coroseg

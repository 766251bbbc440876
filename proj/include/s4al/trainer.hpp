#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "s4al/augment.hpp"
#include "s4al/datapool.hpp"
#include "s4al/losses.hpp"
#include "s4al/metrics.hpp"
#include "s4al/model.hpp"
#include "s4al/replay.hpp"

namespace s4al {

struct TrainSchedule {
  int epochs = 100;
  int final_cycle_epochs = 200;
  int batch_size = 4;
  double lr0 = 1e-2;
  double poly_power = 0.9;
  int warmup_epochs = 10;  // supervised only
  double confidence_threshold = 0.97;
  double ema_momentum = 0.99;
  int balanced_classmix_start_cycle = 1;
  int iters_per_epoch = 0;  // 0: one pass over the labeled stream
  SgdConfig sgd;
  bool confidence_weighting = true;
  bool balanced_classmix = true;
  int val_every = 1;
  int checkpoint_every = 25;
  WeakAugmentParams weak;
  StrongAugmentParams strong;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainSchedule from_json(const nlohmann::json& j);
};

// One line of the metrics log.
struct EpochRecord {
  int cycle = 0;
  int epoch = 0;
  bool warmup = false;
  LossBreakdown loss;
  double lr = 0;
  int steps = 0;
  std::optional<double> val_miou_teacher;
  std::optional<double> val_miou_student;
  std::optional<double> val_loss_teacher;
  std::optional<double> val_loss_student;

  nlohmann::json to_json() const;
  static EpochRecord from_json(const nlohmann::json& j);
};

struct EvalResult {
  ConfusionMatrix confusion;
  IouResult iou;
  double loss = 0;  // mean pixel cross-entropy
};

// Eval-mode prediction over a split; `batch` images per forward.
EvalResult evaluate(const SegmentationModel& model, std::span<const Sample> samples, int ignore_index, int batch = 8);
LabelMap predict(const SegmentationModel& model, const Image& image);

// Everything needed to continue a cycle from an epoch boundary.
struct CycleProgress {
  int cycle = 0;
  std::uint64_t seed = 0;
  int total_epochs = 0;
  int next_epoch = 0;
  std::size_t iteration = 0;
  std::vector<std::vector<float>> velocity;
  std::vector<EpochRecord> log;
  std::vector<float> best_teacher;  // export_state of the best-validating teacher
  double best_val_miou = -1;
  int best_epoch = -1;

  bool done() const { return next_epoch >= total_epochs; }
  nlohmann::json meta_json() const;  // all but the float blobs
  static CycleProgress from_meta_json(const nlohmann::json& j);
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  // Called after epochs whose 1-based index is a multiple of checkpoint_every.
  std::function<void(const CycleProgress&, const ModelPair&, const ReplayBuffer&)> on_checkpoint;
  // Checked after every epoch; returning true interrupts the cycle.
  std::function<bool(const CycleProgress&)> stop_after_epoch;
};

// Runs one training stage: warmup epochs on labeled data, then teacher-student
// epochs. The teacher is reset to the student when the first SSL epoch starts
// (or at the end when there is none). `resume`, when given, must come from a
// checkpoint of the same cycle together with the matching pair and replay
// buffer.
CycleProgress train_cycle(const PoolState& pool, const Dataset& dataset, ModelPair& pair,
                          const TrainSchedule& schedule, ReplayBuffer& replay, int cycle, bool final_stage, Rng& rng,
                          const TrainHooks& hooks = {}, const CycleProgress* resume = nullptr);

// Per-step pieces, exposed for tests.

// Labeled view: weak augmentation with unknown pixels set to ignore.
struct LabeledView {
  Image image;
  LabelMap label;
};
LabeledView labeled_view(const Sample& sample, const Mask& known, int ignore_index, Rng& rng,
                         const WeakAugmentParams& params);

// Unlabeled view in strong-view coordinates: pseudo labels (overwritten by
// revealed ground truth), their confidence, and the mask of pixels that take
// part in the unsupervised loss.
struct UnlabeledView {
  Image image;
  LabelMap label;
  ScalarMap confidence;
  Mask valid;
};
std::vector<UnlabeledView> unlabeled_views(const SegmentationModel& teacher, std::span<const Sample* const> samples,
                                           std::span<const Mask* const> known, int ignore_index, Rng& rng,
                                           const WeakAugmentParams& weak, const StrongAugmentParams& strong);

// ClassMix of view i (source) onto view (i+1) mod n (target).
std::vector<UnlabeledView> mix_batch(const std::vector<UnlabeledView>& views, const ClassDistribution& dist,
                                     bool balanced, Rng& rng);

// Per-image eta and loss, reduced as eta = mean(eta_i) and
// L = sum(eta_i L_i) / sum(eta_i), so eta * L = mean(eta_i L_i).
struct UnsupTerm {
  double eta = 0;
  double loss = 0;
};
UnsupTerm unsup_term(std::span<const float> logits, int num_classes, const std::vector<UnlabeledView>& views,
                     double tau, bool confidence_weighting, std::span<float> grad);

}  // namespace s4al

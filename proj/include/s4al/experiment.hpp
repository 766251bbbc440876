#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "s4al/config.hpp"
#include "s4al/datapool.hpp"
#include "s4al/metrics.hpp"
#include "s4al/model.hpp"
#include "s4al/replay.hpp"
#include "s4al/trainer.hpp"

namespace s4al {

struct RunOptions {
  bool resume = false;
  bool deterministic = false;
  bool dry_run = false;  // pool bookkeeping only, random acquisition, no model
  bool quiet = true;
  // Testing hooks: stop once this cycle's acquisition is persisted, or after
  // this many epochs of the given cycle have been checkpointed.
  std::optional<int> stop_after_cycle;
  std::optional<std::pair<int, int>> stop_at_epoch;  // (cycle, epochs done)
};

struct CycleSummary {
  int cycle = 0;
  double labeled_fraction = 0;
  std::size_t acquired_pixels = 0;  // revealed by this cycle's acquisition
  std::optional<IouResult> teacher;
  std::optional<IouResult> student;
  double seconds = 0;
};

struct ExperimentReport {
  std::string config_hash;
  std::vector<CycleSummary> cycles;
  bool complete = false;
  double seconds = 0;
};

// Run directory layout:
//   config.ini            canonical snapshot of the config
//   config.hash           FNV-1a of config.ini
//   run.lock              present while a process owns the directory
//   state.json            next cycle to train and its latest checkpoint
//   pool/cycle_NNN.json   pool state at the start of cycle NNN
//   checkpoints/*.ckpt    end-of-cycle and every-N-epoch checkpoints
//   metrics.jsonl         one record per epoch
//   acquisitions.jsonl    one record per acquired region
//   acquired_classes.jsonl  per-cycle class pixel counts of acquired regions
//   eval.jsonl            per-cycle test evaluation
//   report/               CSV tables written by write_report
ExperimentReport run_experiment(const ExperimentConfig& config, const std::string& run_dir,
                                const RunOptions& options = {});
// As above with an already loaded dataset (the config's dataset section is
// still part of the hash).
ExperimentReport run_experiment(const ExperimentConfig& config, const Dataset& dataset, const std::string& run_dir,
                                const RunOptions& options = {});

Dataset load_experiment_dataset(const ExperimentConfig& config);
// Train-split ids and grid only, for "layout" datasets and dry runs.
PoolState initial_pool(const ExperimentConfig& config, const Dataset& dataset);

// Model pair, replay buffer and (for mid-cycle checkpoints) the progress
// needed to continue training.
struct TrainingSnapshot {
  std::optional<ModelPair> pair;
  ReplayBuffer replay;
  std::optional<CycleProgress> progress;
};

void save_training_checkpoint(const std::string& path, const ModelPair& pair, const ReplayBuffer& replay,
                              const CycleProgress& progress, const ExperimentConfig& config, bool mid);
TrainingSnapshot load_training_checkpoint(const std::string& path, const ExperimentConfig& config, int num_classes);
// `which` is teacher, student or best (the best-validating teacher).
std::unique_ptr<SegmentationModel> load_network(const std::string& path, const ExperimentConfig& config,
                                                int num_classes, const std::string& which);
std::unique_ptr<SegmentationModel> make_model(const ExperimentConfig& config, int num_classes, std::uint64_t seed);

// Compute device from S4AL_DEVICE; only "cpu" exists, "auto" or unset
// resolve to it.
std::string resolve_device();

// Writes report/iou_teacher.csv, report/iou_student.csv,
// report/acquisition_summary.csv and report/miou_vs_fraction.csv. Throws
// incomplete-run when the logs are missing.
void write_report(const std::string& run_dir);

}  // namespace s4al

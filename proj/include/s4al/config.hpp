#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s4al/acquire.hpp"
#include "s4al/model.hpp"
#include "s4al/synthetic.hpp"
#include "s4al/trainer.hpp"

namespace s4al {

struct CycleConfig {
  int num_cycles = 2;  // C; 0 runs a single training stage without acquisition
  int per_image_k = 4;
  int region_h = 30;
  int region_w = 30;
  AcquisitionMetric metric = AcquisitionMetric::kEntropy;
  double initial_fraction = 0.1;
  int replay_capacity = 50;  // M
  bool global_budget = false;
  int budget_regions = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Where the train/val/test images come from. "synthetic" generates them from
// the [synthetic] section, "directory" reads the dataset_io layout at `path`,
// and "layout" describes image count and size only, which is enough for
// bookkeeping dry runs.
struct DatasetConfig {
  std::string source = "synthetic";
  std::string path;
  int num_classes = 0;
  int train_count = 0;
  int height = 0;
  int width = 0;
};

struct ExperimentConfig {
  std::string name = "experiment";
  bool reinit_each_cycle = false;
  DatasetConfig dataset;
  SyntheticConfig synthetic;
  CycleConfig cycle;
  TrainSchedule train;
  EncoderDecoderConfig model;  // num_classes is taken from the dataset

  void validate() const;
};

// Sectioned key=value text: [experiment], [dataset], [synthetic], [cycle],
// [train], [augment], [model]. Keys missing from the file keep their
// defaults; unknown sections or keys are rejected.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Every key in a fixed order with round-trip number formatting.
std::string canonical_config(const ExperimentConfig& config);
// 64-bit FNV-1a of the canonical text, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);
std::string fnv1a_hex(const std::string& text);

}  // namespace s4al

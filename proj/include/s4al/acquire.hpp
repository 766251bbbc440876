#pragma once

#include <span>
#include <string>
#include <vector>

#include "s4al/datapool.hpp"
#include "s4al/raster.hpp"
#include "s4al/rng.hpp"

namespace s4al {

class SegmentationModel;

enum class AcquisitionMetric { kRandom, kLeastConfidence, kEntropy, kMargin };

const char* metric_name(AcquisitionMetric m);
AcquisitionMetric parse_metric(const std::string& name);

// Per-pixel informativeness, higher meaning more informative.
struct ScoreMap {
  ScalarMap scores;
  AcquisitionMetric metric = AcquisitionMetric::kEntropy;
};

// `probs` is K x H x W channel-major and must sum to 1 per pixel (1e-4
// tolerance). `rng` is only drawn from for the random metric.
ScoreMap pixel_scores(std::span<const float> probs, int num_classes, int h, int w, AcquisitionMetric metric,
                      Rng* rng = nullptr);

struct RegionScore {
  std::size_t image = 0;
  RegionId region;
  double score = 0;  // mean over the region's unknown pixels
  std::size_t unlabeled_pixels = 0;
};

// Fully known regions are omitted.
std::vector<RegionScore> region_scores(const ScoreMap& scores, const RegionGrid& grid, const Mask& known,
                                       std::size_t image = 0);

// Top-min(k, available) regions per image; ties by (row, col).
std::vector<Selection> select_regions(std::span<const std::vector<RegionScore>> per_image, int per_image_k);
// Top-`budget` regions across all images; ties by (image, row, col).
std::vector<Selection> select_regions_global(std::span<const std::vector<RegionScore>> per_image, std::size_t budget);

struct AcquisitionRecord {
  int cycle = 0;
  std::string image_id;
  RegionId region;
  double score = 0;
  AcquisitionMetric metric = AcquisitionMetric::kEntropy;
};

std::string to_json_line(const AcquisitionRecord& r);
AcquisitionRecord acquisition_from_json_line(const std::string& line);

struct AcquireOptions {
  AcquisitionMetric metric = AcquisitionMetric::kEntropy;
  int per_image_k = 4;
  bool global_budget = false;  // rank all regions together instead of per image
  std::size_t budget_regions = 0;  // used with global_budget
};

// Scores every image of the unlabeled stream with the teacher (eval mode,
// un-augmented) and picks regions. `images` are the train images aligned with
// the pool.
std::vector<AcquisitionRecord> acquire(const SegmentationModel& teacher, std::span<const Sample> train,
                                       const PoolState& pool, const AcquireOptions& options, int cycle, Rng& rng);

// Acquisition without a model: every unknown pixel gets a uniform random
// score. Used for bookkeeping dry runs.
std::vector<AcquisitionRecord> acquire_random(const PoolState& pool, const AcquireOptions& options, int cycle, Rng& rng);

std::vector<Selection> to_selections(std::span<const AcquisitionRecord> records, const PoolState& pool);

}  // namespace s4al

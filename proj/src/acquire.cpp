#include "s4al/acquire.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "s4al/losses.hpp"
#include "s4al/model.hpp"

namespace s4al {

const char* metric_name(AcquisitionMetric m) {
  switch (m) {
    case AcquisitionMetric::kRandom: return "random";
    case AcquisitionMetric::kLeastConfidence: return "least_confidence";
    case AcquisitionMetric::kEntropy: return "entropy";
    case AcquisitionMetric::kMargin: return "margin";
  }
  return "?";
}

AcquisitionMetric parse_metric(const std::string& name) {
  if (name == "random") return AcquisitionMetric::kRandom;
  if (name == "least_confidence") return AcquisitionMetric::kLeastConfidence;
  if (name == "entropy") return AcquisitionMetric::kEntropy;
  if (name == "margin") return AcquisitionMetric::kMargin;
  fail(ErrorKind::kInvalidArgument, "unknown acquisition metric: " + name);
}

ScoreMap pixel_scores(std::span<const float> probs, int num_classes, int h, int w, AcquisitionMetric metric,
                      Rng* rng) {
  const std::size_t pixels = static_cast<std::size_t>(h) * w;
  require(num_classes >= 2 && probs.size() == pixels * num_classes, "pixel_scores: size mismatch");
  ScoreMap out{ScalarMap(1, h, w, 0.0f), metric};
  if (metric == AcquisitionMetric::kRandom) require(rng != nullptr, "random metric needs an rng");
  for (std::size_t i = 0; i < pixels; ++i) {
    double sum = 0, entropy = 0, p1 = 0, p2 = 0;
    for (int c = 0; c < num_classes; ++c) {
      const double p = probs[c * pixels + i];
      sum += p;
      if (p > 0) entropy -= p * std::log(p);
      if (p > p1) {
        p2 = p1;
        p1 = p;
      } else if (p > p2) {
        p2 = p;
      }
    }
    if (std::abs(sum - 1.0) > 1e-4) fail(ErrorKind::kInvalidArgument, "pixel probabilities do not sum to 1");
    double s = 0;
    switch (metric) {
      case AcquisitionMetric::kRandom: s = rng->uniform(); break;
      case AcquisitionMetric::kLeastConfidence: s = 1.0 - p1; break;
      case AcquisitionMetric::kEntropy: s = entropy; break;
      case AcquisitionMetric::kMargin: s = 1.0 - (p1 - p2); break;
    }
    out.scores.data[i] = static_cast<float>(s);
  }
  return out;
}

std::vector<RegionScore> region_scores(const ScoreMap& scores, const RegionGrid& grid, const Mask& known,
                                       std::size_t image) {
  require(scores.scores.same_shape(grid.image_h(), grid.image_w()) && known.same_shape(grid.image_h(), grid.image_w()),
          "region_scores: shape mismatch");
  std::vector<RegionScore> out;
  for (int r = 0; r < grid.count(); ++r) {
    const RegionId id = grid.unflat(r);
    const RegionExtent e = grid.extent(id);
    double sum = 0;
    std::size_t n = 0;
    for (int y = e.y0; y < e.y0 + e.h; ++y)
      for (int x = e.x0; x < e.x0 + e.w; ++x) {
        if (known.at(y, x)) continue;
        sum += scores.scores.at(y, x);
        ++n;
      }
    if (n == 0) continue;
    out.push_back({image, id, sum / static_cast<double>(n), n});
  }
  return out;
}

namespace {

bool ranks_before(const RegionScore& a, const RegionScore& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.image != b.image) return a.image < b.image;
  return a.region < b.region;
}

std::vector<RegionScore> top_per_image(std::span<const std::vector<RegionScore>> per_image, int per_image_k) {
  require(per_image_k >= 1, "per_image_k must be at least 1");
  std::vector<RegionScore> out;
  for (const auto& regions : per_image) {
    std::vector<RegionScore> ranked;
    for (const RegionScore& r : regions)
      if (r.unlabeled_pixels > 0) ranked.push_back(r);
    const std::size_t k = std::min<std::size_t>(per_image_k, ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k), ranked.end(), ranks_before);
    out.insert(out.end(), ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return out;
}

std::vector<RegionScore> top_global(std::span<const std::vector<RegionScore>> per_image, std::size_t budget) {
  std::vector<RegionScore> ranked;
  for (const auto& regions : per_image)
    for (const RegionScore& r : regions)
      if (r.unlabeled_pixels > 0) ranked.push_back(r);
  const std::size_t k = std::min(budget, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k), ranked.end(), ranks_before);
  ranked.resize(k);
  return ranked;
}

std::vector<Selection> as_selections(const std::vector<RegionScore>& chosen) {
  std::vector<Selection> out;
  out.reserve(chosen.size());
  for (const RegionScore& r : chosen) out.push_back({r.image, r.region});
  return out;
}

}  // namespace

std::vector<Selection> select_regions(std::span<const std::vector<RegionScore>> per_image, int per_image_k) {
  return as_selections(top_per_image(per_image, per_image_k));
}

std::vector<Selection> select_regions_global(std::span<const std::vector<RegionScore>> per_image, std::size_t budget) {
  return as_selections(top_global(per_image, budget));
}

std::string to_json_line(const AcquisitionRecord& r) {
  nlohmann::json j = {{"cycle", r.cycle},
                      {"image_id", r.image_id},
                      {"row", r.region.row},
                      {"col", r.region.col},
                      {"score", r.score},
                      {"metric", metric_name(r.metric)}};
  return j.dump();
}

AcquisitionRecord acquisition_from_json_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    AcquisitionRecord r;
    r.cycle = j.at("cycle").get<int>();
    r.image_id = j.at("image_id").get<std::string>();
    r.region = {j.at("row").get<int>(), j.at("col").get<int>()};
    r.score = j.at("score").get<double>();
    r.metric = parse_metric(j.at("metric").get<std::string>());
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("malformed acquisition record: ") + e.what());
  }
}

namespace {

std::vector<AcquisitionRecord> finish(const std::vector<std::vector<RegionScore>>& per_image, const PoolState& pool,
                                      const AcquireOptions& options, int cycle) {
  const std::vector<RegionScore> chosen = options.global_budget ? top_global(per_image, options.budget_regions)
                                                                : top_per_image(per_image, options.per_image_k);
  std::vector<AcquisitionRecord> out;
  out.reserve(chosen.size());
  for (const RegionScore& r : chosen) out.push_back({cycle, pool.id(r.image), r.region, r.score, options.metric});
  return out;
}

}  // namespace

std::vector<AcquisitionRecord> acquire(const SegmentationModel& teacher, std::span<const Sample> train,
                                       const PoolState& pool, const AcquireOptions& options, int cycle, Rng& rng) {
  require(train.size() == pool.size(), "acquire: dataset does not match pool");
  const std::vector<std::size_t> candidates = pool.unlabeled_stream();
  std::vector<std::vector<RegionScore>> per_image;
  constexpr std::size_t kBatch = 8;
  for (std::size_t start = 0; start < candidates.size(); start += kBatch) {
    const std::size_t end = std::min(candidates.size(), start + kBatch);
    std::vector<const Image*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&train[candidates[i]].image);
    const Tensor probs = softmax(teacher.infer(stack_images(batch)));
    for (std::size_t i = start; i < end; ++i) {
      const int b = static_cast<int>(i - start);
      const ScoreMap scores =
          pixel_scores({probs.sample(b), probs.sample_size()}, probs.c, probs.h, probs.w, options.metric, &rng);
      per_image.push_back(region_scores(scores, pool.grid(), pool.known_mask(candidates[i]), candidates[i]));
    }
  }
  return finish(per_image, pool, options, cycle);
}

std::vector<AcquisitionRecord> acquire_random(const PoolState& pool, const AcquireOptions& options, int cycle, Rng& rng) {
  const RegionGrid& grid = pool.grid();
  std::vector<std::vector<RegionScore>> per_image;
  for (std::size_t image : pool.unlabeled_stream()) {
    std::vector<RegionScore> regions;
    for (int r = 0; r < grid.count(); ++r) {
      const RegionId id = grid.unflat(r);
      if (pool.region_known(image, id)) continue;
      regions.push_back({image, id, rng.uniform(), grid.extent(id).pixels()});
    }
    per_image.push_back(std::move(regions));
  }
  AcquireOptions opts = options;
  opts.metric = AcquisitionMetric::kRandom;
  return finish(per_image, pool, opts, cycle);
}

std::vector<Selection> to_selections(std::span<const AcquisitionRecord> records, const PoolState& pool) {
  std::vector<Selection> out;
  out.reserve(records.size());
  for (const AcquisitionRecord& r : records) out.push_back({pool.index_of(r.image_id), r.region});
  return out;
}

}  // namespace s4al

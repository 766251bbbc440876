#include "s4al/datapool.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "s4al/rng.hpp"

namespace s4al {

using nlohmann::json;

void Dataset::validate() const {
  require(num_classes >= 1, "dataset needs at least one class");
  require(ignore_index < 0 || ignore_index >= num_classes, "ignore_index collides with a class id");
  auto check = [&](const std::vector<Sample>& split, const char* name) {
    for (const Sample& s : split) {
      require(s.image.channels == 3 && s.image.same_shape(height, width),
              std::string("image shape mismatch in ") + name + " split: " + s.id);
      require(s.label.channels == 1 && s.label.same_shape(height, width),
              std::string("label shape mismatch in ") + name + " split: " + s.id);
      for (std::uint8_t v : s.label.data) {
        if (v >= num_classes && v != ignore_index) fail(ErrorKind::kInvalidArgument, "label value out of range in " + s.id);
      }
    }
  };
  check(train, "train");
  check(val, "val");
  check(test, "test");
}

std::vector<std::string> Dataset::train_ids() const {
  std::vector<std::string> ids;
  ids.reserve(train.size());
  for (const Sample& s : train) ids.push_back(s.id);
  return ids;
}

RegionGrid::RegionGrid(int image_h, int image_w, int region_h, int region_w)
    : image_h_(image_h), image_w_(image_w), region_h_(region_h), region_w_(region_w) {
  require(image_h > 0 && image_w > 0 && region_h > 0 && region_w > 0, "region grid dimensions must be positive");
  rows_ = (image_h + region_h - 1) / region_h;
  cols_ = (image_w + region_w - 1) / region_w;
}

RegionExtent RegionGrid::extent(RegionId id) const {
  require(contains(id), "region outside grid");
  RegionExtent e;
  e.y0 = id.row * region_h_;
  e.x0 = id.col * region_w_;
  e.h = std::min(region_h_, image_h_ - e.y0);
  e.w = std::min(region_w_, image_w_ - e.x0);
  return e;
}

RegionGrid build_region_grid(int height, int width, int region_h, int region_w) {
  return RegionGrid(height, width, region_h, region_w);
}

const char* status_name(ImageStatus s) {
  switch (s) {
    case ImageStatus::kLabeled: return "LABELED";
    case ImageStatus::kUnlabeled: return "UNLABELED";
    case ImageStatus::kPartial: return "PARTIAL";
  }
  return "?";
}

ImageStatus parse_status(const std::string& s) {
  if (s == "LABELED") return ImageStatus::kLabeled;
  if (s == "UNLABELED") return ImageStatus::kUnlabeled;
  if (s == "PARTIAL") return ImageStatus::kPartial;
  fail(ErrorKind::kFormat, "unknown image status: " + s);
}

PoolState::PoolState(std::vector<std::string> ids, RegionGrid grid, std::uint64_t seed)
    : ids_(std::move(ids)), grid_(grid), seed_(seed) {
  require(grid_.count() > 0, "pool needs a non-empty region grid");
  region_known_.assign(ids_.size(), std::vector<std::uint8_t>(grid_.count(), 0));
  known_pixels_.assign(ids_.size(), 0);
  for (std::size_t i = 0; i < ids_.size(); ++i)
    if (!index_.emplace(ids_[i], i).second) fail(ErrorKind::kInvalidArgument, "duplicate image id: " + ids_[i]);
}

std::size_t PoolState::index_of(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) fail(ErrorKind::kInvalidArgument, "unknown image id: " + id);
  return it->second;
}

ImageStatus PoolState::status(std::size_t image) const {
  const std::size_t k = known_pixels_.at(image);
  if (k == 0) return ImageStatus::kUnlabeled;
  if (k == image_pixels()) return ImageStatus::kLabeled;
  return ImageStatus::kPartial;
}

bool PoolState::region_known(std::size_t image, RegionId region) const {
  return region_known_.at(image).at(grid_.flat(region)) != 0;
}

std::size_t PoolState::total_known_pixels() const {
  return std::accumulate(known_pixels_.begin(), known_pixels_.end(), std::size_t{0});
}

Mask PoolState::known_mask(std::size_t image) const {
  Mask mask(1, grid_.image_h(), grid_.image_w(), 0);
  const auto& flags = region_known_.at(image);
  for (int r = 0; r < grid_.count(); ++r) {
    if (!flags[r]) continue;
    const RegionExtent e = grid_.extent(grid_.unflat(r));
    for (int y = e.y0; y < e.y0 + e.h; ++y) std::fill_n(&mask.at(y, e.x0), e.w, std::uint8_t{1});
  }
  return mask;
}

std::vector<std::uint32_t> PoolState::known_rle(std::size_t image) const {
  const auto& flags = region_known_.at(image);
  std::vector<std::uint32_t> runs;
  std::uint8_t current = 0;
  std::uint32_t length = 0;
  for (int y = 0; y < grid_.image_h(); ++y) {
    const int row = y / grid_.region_h();
    for (int col = 0; col < grid_.cols(); ++col) {
      const std::uint8_t bit = flags[grid_.flat({row, col})] ? 1 : 0;
      if (bit != current) {
        runs.push_back(length);
        current = bit;
        length = 0;
      }
      length += static_cast<std::uint32_t>(grid_.extent({row, col}).w);
    }
  }
  runs.push_back(length);
  return runs;
}

std::vector<std::size_t> PoolState::labeled_stream() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i)
    if (known_pixels_[i] > 0) out.push_back(i);
  return out;
}

std::vector<std::size_t> PoolState::unlabeled_stream() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i)
    if (known_pixels_[i] < image_pixels()) out.push_back(i);
  return out;
}

std::size_t PoolState::count(ImageStatus s) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < size(); ++i) n += status(i) == s;
  return n;
}

void PoolState::mark_labeled(std::size_t image) {
  std::fill(region_known_.at(image).begin(), region_known_.at(image).end(), std::uint8_t{1});
  known_pixels_[image] = image_pixels();
}

void PoolState::reveal(std::span<const Selection> selections, int cycle) {
  std::set<Selection> seen;
  for (const Selection& s : selections) {
    require(s.image < size(), "selection image index out of range");
    require(grid_.contains(s.region), "selection region outside grid");
    if (!seen.insert(s).second || region_known(s.image, s.region)) {
      fail(ErrorKind::kDuplicateAcquisition, "region (" + std::to_string(s.region.row) + "," +
                                                  std::to_string(s.region.col) + ") of " + ids_[s.image] +
                                                  " is already known");
    }
  }
  for (const Selection& s : selections) {
    region_known_[s.image][grid_.flat(s.region)] = 1;
    known_pixels_[s.image] += grid_.extent(s.region).pixels();
    log_.push_back({cycle, s.image, s.region});
  }
}

void PoolState::set_known_mask(std::size_t image, const Mask& mask) {
  require(mask.same_shape(grid_.image_h(), grid_.image_w()), "known mask shape mismatch");
  auto& flags = region_known_.at(image);
  std::size_t known = 0;
  for (int r = 0; r < grid_.count(); ++r) {
    const RegionExtent e = grid_.extent(grid_.unflat(r));
    std::size_t on = 0;
    for (int y = e.y0; y < e.y0 + e.h; ++y)
      for (int x = e.x0; x < e.x0 + e.w; ++x) on += mask.at(y, x) != 0;
    if (on != 0 && on != e.pixels()) fail(ErrorKind::kFormat, "known mask is not region aligned for " + ids_[image]);
    flags[r] = on != 0;
    known += on;
  }
  known_pixels_[image] = known;
}

PoolState init_split(std::vector<std::string> ids, const RegionGrid& grid, double fraction, std::uint64_t seed) {
  require(fraction > 0.0 && fraction < 1.0, "initial fraction must lie in (0, 1)");
  require(!ids.empty(), "cannot split an empty dataset");
  const std::size_t n = ids.size();
  // Round half up; the epsilon absorbs representation error in fraction * n.
  std::size_t k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5 + 1e-9));
  k = std::clamp<std::size_t>(k, 1, n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);

  PoolState pool(std::move(ids), grid, seed);
  for (std::size_t i = 0; i < k; ++i) pool.mark_labeled(order[i]);
  return pool;
}

PoolState init_split(const Dataset& dataset, const RegionGrid& grid, double fraction, std::uint64_t seed) {
  require(grid.image_h() == dataset.height && grid.image_w() == dataset.width, "region grid does not match dataset");
  return init_split(dataset.train_ids(), grid, fraction, seed);
}

PoolState init_split(const Dataset& dataset, double fraction, std::uint64_t seed) {
  return init_split(dataset, RegionGrid(dataset.height, dataset.width, dataset.height, dataset.width), fraction, seed);
}

PoolState reveal_regions(PoolState pool, std::span<const Selection> selections, int cycle) {
  pool.reveal(selections, cycle);
  return pool;
}

double labeled_fraction(const PoolState& pool) {
  const double total = static_cast<double>(pool.size()) * static_cast<double>(pool.image_pixels());
  if (total == 0.0) return 0.0;
  return static_cast<double>(pool.total_known_pixels()) / total;
}

std::uint64_t ClassDistribution::total() const {
  return std::accumulate(pixel_count.begin(), pixel_count.end(), std::uint64_t{0});
}

double ClassDistribution::share(int c) const {
  const std::uint64_t t = total();
  return t == 0 ? 0.0 : static_cast<double>(pixel_count.at(c)) / static_cast<double>(t);
}

bool ClassDistribution::is_tail(int c) const { return std::binary_search(tail.begin(), tail.end(), c); }

ClassDistribution distribution_from_counts(std::vector<std::uint64_t> counts) {
  ClassDistribution d;
  d.pixel_count = std::move(counts);
  const std::uint64_t total = d.total();
  if (total == 0) fail(ErrorKind::kEmptyPool, "no labeled pixels to build a class distribution from");
  const auto k = static_cast<std::uint64_t>(d.pixel_count.size());
  for (std::size_t c = 0; c < d.pixel_count.size(); ++c) {
    // share < 1/K  <=>  count * K < total, exact in integers.
    if (d.pixel_count[c] * k < total)
      d.tail.push_back(static_cast<int>(c));
    else
      d.head.push_back(static_cast<int>(c));
  }
  return d;
}

ClassDistribution class_pixel_distribution(const PoolState& pool, const Dataset& dataset) {
  require(pool.size() == dataset.train.size(), "pool does not match dataset");
  if (pool.total_known_pixels() == 0) fail(ErrorKind::kEmptyPool, "pool has no known pixels");
  std::vector<std::uint64_t> counts(dataset.num_classes, 0);
  const RegionGrid& grid = pool.grid();
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool.known_pixels(i) == 0) continue;
    const LabelMap& label = dataset.train[i].label;
    for (int r = 0; r < grid.count(); ++r) {
      const RegionId id = grid.unflat(r);
      if (!pool.region_known(i, id)) continue;
      const RegionExtent e = grid.extent(id);
      for (int y = e.y0; y < e.y0 + e.h; ++y)
        for (int x = e.x0; x < e.x0 + e.w; ++x) {
          const int v = label.at(y, x);
          if (v != dataset.ignore_index) ++counts[v];
        }
    }
  }
  return distribution_from_counts(std::move(counts));
}

std::vector<std::uint32_t> rle_encode(const Mask& mask) {
  std::vector<std::uint32_t> runs;
  std::uint8_t current = 0;
  std::uint32_t length = 0;
  for (std::uint8_t v : mask.data) {
    const std::uint8_t bit = v ? 1 : 0;
    if (bit != current) {
      runs.push_back(length);
      current = bit;
      length = 0;
    }
    ++length;
  }
  runs.push_back(length);
  return runs;
}

Mask rle_decode(std::span<const std::uint32_t> runs, int h, int w) {
  Mask mask(1, h, w, 0);
  std::size_t pos = 0;
  std::uint8_t bit = 0;
  for (std::uint32_t len : runs) {
    if (pos + len > mask.data.size()) fail(ErrorKind::kFormat, "RLE runs exceed mask size");
    std::fill_n(mask.data.begin() + static_cast<std::ptrdiff_t>(pos), len, bit);
    pos += len;
    bit ^= 1;
  }
  if (pos != mask.data.size()) fail(ErrorKind::kFormat, "RLE runs do not cover the mask");
  return mask;
}

namespace {
constexpr int kPoolFormatVersion = 1;
}

std::string pool_to_json(const PoolState& pool) {
  json j;
  j["version"] = kPoolFormatVersion;
  j["seed"] = pool.seed();
  const RegionGrid& g = pool.grid();
  j["grid"] = {{"image_h", g.image_h()}, {"image_w", g.image_w()}, {"region_h", g.region_h()}, {"region_w", g.region_w()}};
  json images = json::array();
  for (std::size_t i = 0; i < pool.size(); ++i) {
    images.push_back({{"id", pool.id(i)}, {"status", status_name(pool.status(i))}, {"known_rle", pool.known_rle(i)}});
  }
  j["images"] = std::move(images);
  json log = json::array();
  for (const AcquisitionEntry& e : pool.acquisition_log()) {
    log.push_back({{"cycle", e.cycle}, {"image_id", pool.id(e.image)}, {"row", e.region.row}, {"col", e.region.col}});
  }
  j["acquisition_log"] = std::move(log);
  return j.dump();
}

PoolState pool_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("pool state is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("version").get<int>() != kPoolFormatVersion) fail(ErrorKind::kFormat, "unsupported pool state version");
    const json& g = j.at("grid");
    RegionGrid grid(g.at("image_h").get<int>(), g.at("image_w").get<int>(), g.at("region_h").get<int>(),
                    g.at("region_w").get<int>());
    std::vector<std::string> ids;
    for (const json& im : j.at("images")) ids.push_back(im.at("id").get<std::string>());
    PoolState pool(ids, grid, j.at("seed").get<std::uint64_t>());

    // Replay the log on an empty pool to recover its order, then install the
    // final masks (which also carry the initial split).
    std::vector<Selection> batch;
    int batch_cycle = -1;
    PoolState replayed(ids, grid, pool.seed());
    auto flush = [&] {
      if (!batch.empty()) replayed.reveal(batch, batch_cycle);
      batch.clear();
    };
    for (const json& e : j.at("acquisition_log")) {
      const int cycle = e.at("cycle").get<int>();
      if (cycle != batch_cycle) flush();
      batch_cycle = cycle;
      batch.push_back({pool.index_of(e.at("image_id").get<std::string>()), {e.at("row").get<int>(), e.at("col").get<int>()}});
    }
    flush();

    std::size_t i = 0;
    for (const json& im : j.at("images")) {
      const auto runs = im.at("known_rle").get<std::vector<std::uint32_t>>();
      replayed.set_known_mask(i, rle_decode(runs, grid.image_h(), grid.image_w()));
      if (status_name(replayed.status(i)) != im.at("status").get<std::string>())
        fail(ErrorKind::kFormat, "status disagrees with known mask for " + ids[i]);
      ++i;
    }
    return replayed;
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("malformed pool state: ") + e.what());
  }
}

void save_pool(const PoolState& pool, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path);
  out << pool_to_json(pool) << '\n';
}

PoolState load_pool(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return pool_from_json(ss.str());
}

}  // namespace s4al

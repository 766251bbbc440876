#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "s4al/raster.hpp"

namespace s4al {

struct Sample {
  std::string id;
  Image image;     // 3 x H x W, values in [0,1]
  LabelMap label;  // H x W, values in {0..K-1} or ignore_index
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
  int num_classes = 0;
  int ignore_index = 255;
  int height = 0;
  int width = 0;

  // Throws invalid-argument when shapes disagree or a label is out of range.
  void validate() const;
  std::vector<std::string> train_ids() const;
};

struct RegionId {
  int row = 0;
  int col = 0;
  auto operator<=>(const RegionId&) const = default;
};

struct RegionExtent {
  int y0 = 0;
  int x0 = 0;
  int h = 0;
  int w = 0;
  std::size_t pixels() const { return static_cast<std::size_t>(h) * w; }
};

// Tiling of an image into fixed-size regions; the last row/column may be
// smaller when the region size does not divide the image.
class RegionGrid {
 public:
  RegionGrid() = default;
  RegionGrid(int image_h, int image_w, int region_h, int region_w);

  int image_h() const { return image_h_; }
  int image_w() const { return image_w_; }
  int region_h() const { return region_h_; }
  int region_w() const { return region_w_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int count() const { return rows_ * cols_; }

  bool contains(RegionId id) const { return id.row >= 0 && id.row < rows_ && id.col >= 0 && id.col < cols_; }
  int flat(RegionId id) const { return id.row * cols_ + id.col; }
  RegionId unflat(int index) const { return {index / cols_, index % cols_}; }
  RegionExtent extent(RegionId id) const;
  RegionId region_of(int y, int x) const { return {y / region_h_, x / region_w_}; }

  bool operator==(const RegionGrid&) const = default;

 private:
  int image_h_ = 0;
  int image_w_ = 0;
  int region_h_ = 0;
  int region_w_ = 0;
  int rows_ = 0;
  int cols_ = 0;
};

RegionGrid build_region_grid(int height, int width, int region_h, int region_w);

enum class ImageStatus { kLabeled, kUnlabeled, kPartial };
const char* status_name(ImageStatus s);
ImageStatus parse_status(const std::string& s);

struct Selection {
  std::size_t image = 0;  // index into the train split
  RegionId region;
  auto operator<=>(const Selection&) const = default;
};

struct AcquisitionEntry {
  int cycle = 0;
  std::size_t image = 0;
  RegionId region;
  bool operator==(const AcquisitionEntry&) const = default;
};

// Labeling state of the train split. Ground truth is only ever revealed in
// whole regions (or whole images at initialisation), so the known mask is held
// at region granularity and expanded to pixels on demand.
class PoolState {
 public:
  PoolState() = default;
  PoolState(std::vector<std::string> ids, RegionGrid grid, std::uint64_t seed);

  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::string& id(std::size_t image) const { return ids_.at(image); }
  std::size_t index_of(const std::string& id) const;
  const RegionGrid& grid() const { return grid_; }
  std::uint64_t seed() const { return seed_; }

  ImageStatus status(std::size_t image) const;
  bool region_known(std::size_t image, RegionId region) const;
  std::size_t known_pixels(std::size_t image) const { return known_pixels_.at(image); }
  std::size_t total_known_pixels() const;
  std::size_t image_pixels() const { return static_cast<std::size_t>(grid_.image_h()) * grid_.image_w(); }
  Mask known_mask(std::size_t image) const;
  // rle_encode(known_mask(image)) without expanding the mask.
  std::vector<std::uint32_t> known_rle(std::size_t image) const;
  const std::vector<AcquisitionEntry>& acquisition_log() const { return log_; }

  // Indices by status; the labeled stream holds LABELED and PARTIAL images,
  // the unlabeled stream holds UNLABELED and PARTIAL images.
  std::vector<std::size_t> labeled_stream() const;
  std::vector<std::size_t> unlabeled_stream() const;
  std::size_t count(ImageStatus s) const;

  void mark_labeled(std::size_t image);
  // All-or-nothing: every selection is validated before any is applied.
  void reveal(std::span<const Selection> selections, int cycle);

  // Replaces the region flags of one image from a pixel mask; the mask must be
  // a union of whole regions.
  void set_known_mask(std::size_t image, const Mask& mask);

  bool operator==(const PoolState&) const = default;

 private:
  std::vector<std::string> ids_;
  RegionGrid grid_;
  std::uint64_t seed_ = 0;
  std::vector<std::vector<std::uint8_t>> region_known_;
  std::vector<std::size_t> known_pixels_;
  std::vector<AcquisitionEntry> log_;
  std::unordered_map<std::string, std::size_t> index_;
};

PoolState init_split(std::vector<std::string> ids, const RegionGrid& grid, double fraction, std::uint64_t seed);
PoolState init_split(const Dataset& dataset, const RegionGrid& grid, double fraction, std::uint64_t seed);
// Whole-image grid, for callers that never acquire regions.
PoolState init_split(const Dataset& dataset, double fraction, std::uint64_t seed);

PoolState reveal_regions(PoolState pool, std::span<const Selection> selections, int cycle);

double labeled_fraction(const PoolState& pool);

struct ClassDistribution {
  std::vector<std::uint64_t> pixel_count;
  std::vector<int> head;
  std::vector<int> tail;

  std::uint64_t total() const;
  double share(int c) const;
  bool is_tail(int c) const;
};

// Shares below 1/K make a class tail; ties go to head.
ClassDistribution distribution_from_counts(std::vector<std::uint64_t> counts);
ClassDistribution class_pixel_distribution(const PoolState& pool, const Dataset& dataset);

// Run-length encoding of a mask in row-major order: alternating run lengths,
// starting with a (possibly empty) run of zeros.
std::vector<std::uint32_t> rle_encode(const Mask& mask);
Mask rle_decode(std::span<const std::uint32_t> runs, int h, int w);

std::string pool_to_json(const PoolState& pool);
PoolState pool_from_json(const std::string& text);
void save_pool(const PoolState& pool, const std::string& path);
PoolState load_pool(const std::string& path);

}  // namespace s4al

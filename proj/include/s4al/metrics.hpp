#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "s4al/raster.hpp"

namespace s4al {

// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = 0) : k_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {}

  int num_classes() const { return k_; }
  std::uint64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * k_ + pred]; }
  std::uint64_t total() const;

  // Pixels whose ground truth is ignore_index are skipped.
  void accumulate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int ignore_index);
  void accumulate(const LabelMap& pred, const LabelMap& gt, int ignore_index);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int k_;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix accumulate(ConfusionMatrix cm, const LabelMap& pred, const LabelMap& gt, int ignore_index);

struct IouResult {
  // nullopt for classes absent from both ground truth and prediction.
  std::vector<std::optional<double>> per_class;
  double miou = 0;
};

// Throws undefined-metric on an empty matrix.
IouResult iou(const ConfusionMatrix& cm);

}  // namespace s4al

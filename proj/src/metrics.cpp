#include "s4al/metrics.hpp"

#include <numeric>

namespace s4al {

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

void ConfusionMatrix::accumulate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                                 int ignore_index) {
  require(pred.size() == gt.size(), "confusion matrix: shape mismatch");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int g = gt[i];
    if (g == ignore_index) continue;
    const int p = pred[i];
    require(g < k_ && p < k_, "confusion matrix: label out of range");
    ++counts_[static_cast<std::size_t>(g) * k_ + p];
  }
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& gt, int ignore_index) {
  require(pred.same_shape(gt.h, gt.w), "confusion matrix: shape mismatch");
  accumulate(std::span<const std::uint8_t>(pred.data), std::span<const std::uint8_t>(gt.data), ignore_index);
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  require(other.k_ == k_, "confusion matrix: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

ConfusionMatrix accumulate(ConfusionMatrix cm, const LabelMap& pred, const LabelMap& gt, int ignore_index) {
  cm.accumulate(pred, gt, ignore_index);
  return cm;
}

IouResult iou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) fail(ErrorKind::kUndefinedMetric, "IoU of an empty confusion matrix");
  const int k = cm.num_classes();
  IouResult out;
  out.per_class.resize(k);
  double sum = 0;
  int defined = 0;
  for (int c = 0; c < k; ++c) {
    std::uint64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    const double v = static_cast<double>(tp) / static_cast<double>(denom);
    out.per_class[c] = v;
    sum += v;
    ++defined;
  }
  out.miou = sum / defined;
  return out;
}

}  // namespace s4al

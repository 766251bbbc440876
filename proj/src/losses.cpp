#include "s4al/losses.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "s4al/model.hpp"

namespace s4al {

template <class T>
void softmax_pixels(std::span<const T> logits, int num_classes, std::span<T> probs) {
  require(num_classes > 0 && logits.size() % num_classes == 0 && probs.size() == logits.size(),
          "softmax: size mismatch");
  const std::size_t pixels = logits.size() / num_classes;
  for (std::size_t i = 0; i < pixels; ++i) {
    T mx = logits[i];
    for (int c = 1; c < num_classes; ++c) mx = std::max(mx, logits[c * pixels + i]);
    double sum = 0;
    for (int c = 0; c < num_classes; ++c) {
      const T e = std::exp(logits[c * pixels + i] - mx);
      probs[c * pixels + i] = e;
      sum += e;
    }
    const T inv = static_cast<T>(1.0 / sum);
    for (int c = 0; c < num_classes; ++c) probs[c * pixels + i] *= inv;
  }
}

template void softmax_pixels<float>(std::span<const float>, int, std::span<float>);
template void softmax_pixels<double>(std::span<const double>, int, std::span<double>);

Tensor softmax(const Tensor& logits) {
  Tensor probs(logits.n, logits.c, logits.h, logits.w);
  for (int i = 0; i < logits.n; ++i) {
    softmax_pixels<float>({logits.sample(i), logits.sample_size()}, logits.c, {probs.sample(i), probs.sample_size()});
  }
  return probs;
}

PseudoLabelMap pseudo_label(std::span<const float> probs, int num_classes, int h, int w) {
  const std::size_t pixels = static_cast<std::size_t>(h) * w;
  require(probs.size() == pixels * num_classes, "pseudo_label: size mismatch");
  PseudoLabelMap out{LabelMap(1, h, w, 0), ScalarMap(1, h, w, 0.0f)};
  for (std::size_t i = 0; i < pixels; ++i) {
    int best = 0;
    float p = probs[i];
    for (int c = 1; c < num_classes; ++c) {
      if (probs[c * pixels + i] > p) {
        p = probs[c * pixels + i];
        best = c;
      }
    }
    out.labels.data[i] = static_cast<std::uint8_t>(best);
    out.confidence.data[i] = p;
  }
  return out;
}

PseudoLabelMap pseudo_label(const SegmentationModel& teacher, const Image& weak) {
  const Image* one[] = {&weak};
  const Tensor probs = softmax(teacher.infer(stack_images(one)));
  return pseudo_label({probs.sample(0), probs.sample_size()}, probs.c, probs.h, probs.w);
}

double eta(const ScalarMap& confidence, double tau, const Mask& valid) {
  require(valid.same_shape(confidence.h, confidence.w), "eta: shape mismatch");
  std::size_t n = 0, hit = 0;
  for (std::size_t i = 0; i < valid.data.size(); ++i) {
    if (!valid.data[i]) continue;
    ++n;
    hit += confidence.data[i] > tau;
  }
  return n == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(n);
}

namespace {

// Shared kernel: sum over selected pixels of weight * CE, gradient
// weight * (softmax - onehot) * scale.
template <class T, class Select>
double weighted_ce(std::span<const T> logits, int num_classes, const LabelMap& target, Select select,
                   std::span<T> grad, double grad_scale) {
  const std::size_t pixels = target.pixels();
  require(logits.size() == pixels * num_classes, "loss: logits do not match label map");
  require(grad.empty() || grad.size() == logits.size(), "loss: gradient buffer size mismatch");
  std::size_t count = 0;
  for (std::size_t i = 0; i < pixels; ++i) count += select(i).first;
  if (count == 0) return 0.0;

  const double inv_n = 1.0 / static_cast<double>(count);
  double total = 0;
  std::vector<double> p(num_classes);
  for (std::size_t i = 0; i < pixels; ++i) {
    const auto [use, weight] = select(i);
    if (!use) continue;
    const int y = target.data[i];
    require(y < num_classes, "loss: target class out of range");
    double mx = static_cast<double>(logits[i]);
    for (int c = 1; c < num_classes; ++c) mx = std::max(mx, static_cast<double>(logits[c * pixels + i]));
    double sum = 0;
    for (int c = 0; c < num_classes; ++c) {
      p[c] = std::exp(static_cast<double>(logits[c * pixels + i]) - mx);
      sum += p[c];
    }
    const double log_sum = std::log(sum) + mx;
    total += weight * (log_sum - static_cast<double>(logits[y * pixels + i]));
    if (!grad.empty()) {
      const double k = weight * inv_n * grad_scale / sum;
      for (int c = 0; c < num_classes; ++c) grad[c * pixels + i] += static_cast<T>(k * p[c]);
      grad[y * pixels + i] -= static_cast<T>(weight * inv_n * grad_scale);
    }
  }
  return total * inv_n;
}

}  // namespace

template <class T>
double supervised_loss(std::span<const T> logits, int num_classes, const LabelMap& labels, int ignore_index,
                       std::span<T> grad, double grad_scale) {
  return weighted_ce<T>(
      logits, num_classes, labels,
      [&](std::size_t i) { return std::pair<bool, double>{labels.data[i] != ignore_index, 1.0}; }, grad, grad_scale);
}

template <class T>
double weighted_unsup_loss(std::span<const T> logits, int num_classes, const LabelMap& pseudo,
                           const ScalarMap& confidence, const Mask& valid, bool confidence_weighting,
                           std::span<T> grad, double grad_scale) {
  require(confidence.same_shape(pseudo.h, pseudo.w) && valid.same_shape(pseudo.h, pseudo.w),
          "unsupervised loss: shape mismatch");
  return weighted_ce<T>(
      logits, num_classes, pseudo,
      [&](std::size_t i) {
        return std::pair<bool, double>{valid.data[i] != 0,
                                       confidence_weighting ? static_cast<double>(confidence.data[i]) : 1.0};
      },
      grad, grad_scale);
}

template double supervised_loss<float>(std::span<const float>, int, const LabelMap&, int, std::span<float>, double);
template double supervised_loss<double>(std::span<const double>, int, const LabelMap&, int, std::span<double>, double);
template double weighted_unsup_loss<float>(std::span<const float>, int, const LabelMap&, const ScalarMap&, const Mask&,
                                           bool, std::span<float>, double);
template double weighted_unsup_loss<double>(std::span<const double>, int, const LabelMap&, const ScalarMap&,
                                            const Mask&, bool, std::span<double>, double);

LossBreakdown total_loss(double sup, double unsup1, double unsup2, double eta1, double eta2, bool replay_active) {
  require(eta1 >= 0 && eta1 <= 1 && eta2 >= 0 && eta2 <= 1, "eta must lie in [0, 1]");
  LossBreakdown b;
  b.sup = sup;
  b.unsup1 = unsup1;
  b.eta1 = eta1;
  b.replay_active = replay_active;
  if (replay_active) {
    b.unsup2 = unsup2;
    b.eta2 = eta2;
    b.total = sup + eta1 * unsup1 + eta2 * unsup2;
  } else {
    b.total = sup + eta1 * unsup1;
  }
  return b;
}

}  // namespace s4al

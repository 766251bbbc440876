#pragma once

#include <span>

#include "s4al/nn.hpp"
#include "s4al/raster.hpp"

namespace s4al {

class SegmentationModel;

// Per-pixel argmax of the teacher softmax and its probability.
struct PseudoLabelMap {
  LabelMap labels;
  ScalarMap confidence;  // in [1/K, 1]
};

// Logits and probabilities use channel-major layout: value of class c at pixel
// i is at [c * pixels + i].
template <class T>
void softmax_pixels(std::span<const T> logits, int num_classes, std::span<T> probs);

Tensor softmax(const Tensor& logits);

// Ties resolve to the lowest class index.
PseudoLabelMap pseudo_label(std::span<const float> probs, int num_classes, int h, int w);
// Teacher in eval mode on one weakly augmented image.
PseudoLabelMap pseudo_label(const SegmentationModel& teacher, const Image& weak);

// Fraction of valid pixels whose confidence exceeds tau; 0 when nothing is
// valid.
double eta(const ScalarMap& confidence, double tau, const Mask& valid);

// Mean cross-entropy over pixels whose label is not ignore_index. When `grad`
// is non-empty, grad_scale * dLoss/dlogits is added into it. Returns 0 when no
// pixel is valid.
template <class T>
double supervised_loss(std::span<const T> logits, int num_classes, const LabelMap& labels, int ignore_index,
                       std::span<T> grad = {}, double grad_scale = 1.0);

// Mean over valid pixels of p(x) * CE(softmax(x), pseudo(x)); with
// `confidence_weighting` off every p(x) is taken as 1. Gradient per pixel is
// p * (softmax - onehot) / |valid|.
template <class T>
double weighted_unsup_loss(std::span<const T> logits, int num_classes, const LabelMap& pseudo,
                           const ScalarMap& confidence, const Mask& valid, bool confidence_weighting = true,
                           std::span<T> grad = {}, double grad_scale = 1.0);

struct LossBreakdown {
  double sup = 0;
  double unsup1 = 0;
  double unsup2 = 0;
  double eta1 = 0;
  double eta2 = 0;
  double total = 0;
  bool replay_active = false;
};

// L_total = L_sup + eta1 * L_unsup1 (+ eta2 * L_unsup2 once the replay stream
// is active).
LossBreakdown total_loss(double sup, double unsup1, double unsup2, double eta1, double eta2, bool replay_active = true);

}  // namespace s4al

#pragma once

#include <array>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "s4al/nn.hpp"
#include "s4al/raster.hpp"

namespace s4al {

enum class Mode { kTrain, kEval };

// What the trainer needs from a segmentation network. Logits come back at
// input resolution, one channel per class. Eval-mode inference is const and
// may be called concurrently.
class SegmentationModel {
 public:
  virtual ~SegmentationModel() = default;

  virtual int num_classes() const = 0;
  virtual std::string architecture() const = 0;

  // Train mode uses batch statistics and caches activations for backward().
  Tensor forward(const Tensor& images, Mode mode) {
    return mode == Mode::kTrain ? forward_train(images) : infer(images);
  }
  virtual Tensor infer(const Tensor& images) const = 0;
  virtual Tensor forward_train(const Tensor& images) = 0;
  // Gradient of the loss w.r.t. the logits of the last forward_train call.
  virtual void backward(const Tensor& grad_logits) = 0;

  virtual std::vector<nn::Parameter*> parameters() = 0;
  virtual std::vector<const nn::Parameter*> parameters() const = 0;
  // Normalisation running statistics.
  virtual std::vector<std::vector<float>*> buffers() = 0;
  virtual std::vector<const std::vector<float>*> buffers() const = 0;

  virtual std::unique_ptr<SegmentationModel> clone() const = 0;

  void zero_grad();
  std::size_t parameter_count() const;
};

struct EncoderDecoderConfig {
  int num_classes = 2;
  std::vector<int> widths{16, 32, 64, 128};  // one entry per resolution level
};

// U-shaped network: two conv blocks per encoder level with 2x2 max pooling
// between levels, nearest upsampling plus skip concatenation and one conv
// block per decoder level, and a 1x1 classifier.
class EncoderDecoder final : public SegmentationModel {
 public:
  EncoderDecoder(const EncoderDecoderConfig& config, std::uint64_t seed);

  int num_classes() const override { return config_.num_classes; }
  std::string architecture() const override;
  Tensor infer(const Tensor& images) const override;
  Tensor forward_train(const Tensor& images) override;
  void backward(const Tensor& grad_logits) override;
  std::vector<nn::Parameter*> parameters() override;
  std::vector<const nn::Parameter*> parameters() const override;
  std::vector<std::vector<float>*> buffers() override;
  std::vector<const std::vector<float>*> buffers() const override;
  std::unique_ptr<SegmentationModel> clone() const override;

 private:
  template <bool Train, class Self>
  static Tensor run(Self& self, const Tensor& images);

  EncoderDecoderConfig config_;
  std::vector<std::array<nn::ConvBlock, 2>> encoder_;
  std::vector<nn::ConvBlock> decoder_;  // decoder_[i] produces level i
  nn::Conv2d head_;

  // forward_train caches
  int in_h_ = 0, in_w_ = 0, pad_h_ = 0, pad_w_ = 0;
  std::vector<std::vector<std::uint32_t>> pool_argmax_;
  std::vector<std::pair<int, int>> level_shape_;
};

// Pads a batch of images (each 3 x H x W) into a tensor.
Tensor stack_images(std::span<const Image* const> images);
Tensor stack_images(const std::vector<Image>& images);

// Student and its exponential-moving-average teacher.
struct ModelPair {
  std::unique_ptr<SegmentationModel> student;
  std::unique_ptr<SegmentationModel> teacher;

  explicit ModelPair(std::unique_ptr<SegmentationModel> s);
  ModelPair(const ModelPair& other);
  ModelPair& operator=(const ModelPair& other);
  ModelPair(ModelPair&&) noexcept = default;
  ModelPair& operator=(ModelPair&&) noexcept = default;

  // Teacher becomes an exact copy of the student.
  void sync_teacher();
};

// teacher <- m * teacher + (1 - m) * student for every parameter and running
// statistic.
void ema_update(ModelPair& pair, double momentum);
void ema_update(std::span<float> teacher, std::span<const float> student, double momentum);

// Flat export/import of parameters followed by buffers.
std::vector<float> export_state(const SegmentationModel& model);
void import_state(SegmentationModel& model, std::span<const float> state);

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

class SgdOptimizer {
 public:
  explicit SgdOptimizer(SgdConfig config = {}) : config_(config) {}

  // v <- mu v + (g + wd w);  w <- w - lr v
  void step(std::span<nn::Parameter* const> params, double lr);
  const std::vector<std::vector<float>>& velocity() const { return velocity_; }
  void set_velocity(std::vector<std::vector<float>> v) { velocity_ = std::move(v); }
  const SgdConfig& config() const { return config_; }

 private:
  SgdConfig config_;
  std::vector<std::vector<float>> velocity_;
};

// Poly decay: lr0 * (1 - iter / max_iter)^power.
double poly_lr(double lr0, std::size_t iter, std::size_t max_iter, double power);

// Versioned checkpoint container: a JSON header followed by named float
// blobs.
struct Checkpoint {
  static constexpr int kVersion = 1;
  nlohmann::json meta;
  std::map<std::string, std::vector<float>> tensors;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace s4al

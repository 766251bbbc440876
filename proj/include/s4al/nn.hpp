#pragma once

#include <cstddef>
#include <cstdint>
#include <new>
#include <string>
#include <vector>

#include "s4al/rng.hpp"

namespace s4al {

// 64-byte aligned storage. Vectorised kernels peel differently depending on
// the address, so unaligned buffers give run-to-run rounding differences.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

// Dense NCHW float batch.
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  FloatBuffer data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, float fill = 0.0f)
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  float* sample(int i) { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
  const float* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
  float& at(int i, int ch, int y, int x) { return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x]; }
  const float& at(int i, int ch, int y, int x) const { return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x]; }
  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

namespace nn {

struct Parameter {
  std::string name;
  FloatBuffer value;
  FloatBuffer grad;
};

// Same-padded stride-1 convolution with odd kernel size, via im2col + GEMM.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int in_ch, int out_ch, int kernel);

  void init(Rng& rng, double gain = 2.0);
  Tensor forward(const Tensor& x);  // caches the input for backward
  Tensor infer(const Tensor& x) const;
  // Accumulates parameter gradients; returns dL/dx unless `need_input_grad` is false.
  Tensor backward(const Tensor& dy, bool need_input_grad = true);
  void collect(std::vector<Parameter*>& out) { out.push_back(&weight_); out.push_back(&bias_); }
  void collect(std::vector<const Parameter*>& out) const { out.push_back(&weight_); out.push_back(&bias_); }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  int in_ = 0;
  int out_ = 0;
  int k_ = 1;
  Parameter weight_;  // out x (in * k * k)
  Parameter bias_;
  Tensor input_;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(std::string name, int channels, double momentum = 0.1, double eps = 1e-5);

  Tensor forward(const Tensor& x);  // batch statistics, updates running statistics
  Tensor infer(const Tensor& x) const;  // running statistics
  Tensor backward(const Tensor& dy);
  void collect(std::vector<Parameter*>& out) { out.push_back(&gamma_); out.push_back(&beta_); }
  void collect(std::vector<const Parameter*>& out) const { out.push_back(&gamma_); out.push_back(&beta_); }
  void collect_buffers(std::vector<std::vector<float>*>& out) { out.push_back(&running_mean_); out.push_back(&running_var_); }
  void collect_buffers(std::vector<const std::vector<float>*>& out) const {
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }

 private:
  int channels_ = 0;
  double momentum_ = 0.1;
  double eps_ = 1e-5;
  Parameter gamma_;
  Parameter beta_;
  std::vector<float> running_mean_;
  std::vector<float> running_var_;
  Tensor xhat_;
  std::vector<float> inv_std_;
};

// conv -> batch norm -> ReLU
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(const std::string& name, int in_ch, int out_ch);

  void init(Rng& rng) { conv_.init(rng); }
  Tensor forward(const Tensor& x);
  Tensor infer(const Tensor& x) const;
  Tensor backward(const Tensor& dy, bool need_input_grad = true);
  template <class P>
  void collect(P& out) { conv_.collect(out); bn_.collect(out); }
  template <class P>
  void collect(P& out) const { conv_.collect(out); bn_.collect(out); }
  template <class B>
  void collect_buffers(B& out) { bn_.collect_buffers(out); }
  template <class B>
  void collect_buffers(B& out) const { bn_.collect_buffers(out); }

 private:
  Conv2d conv_;
  BatchNorm2d bn_;
  Tensor output_;
};

// 2x2 max pooling; odd trailing rows/columns are dropped.
Tensor maxpool2(const Tensor& x, std::vector<std::uint32_t>* argmax = nullptr);
Tensor maxpool2_backward(const Tensor& dy, const std::vector<std::uint32_t>& argmax, int in_h, int in_w);

// Nearest-neighbour 2x upsampling to exactly (out_h, out_w).
Tensor upsample2(const Tensor& x, int out_h, int out_w);
Tensor upsample2_backward(const Tensor& dy, int in_h, int in_w);

Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& ab, int a_channels, Tensor& a, Tensor& b);

}  // namespace nn
}  // namespace s4al

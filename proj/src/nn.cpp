#include "s4al/nn.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "s4al/error.hpp"

namespace s4al::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// Rows are (channel, ky, kx), columns are output pixels.
void im2col(const float* x, int channels, int h, int w, int k, float* col) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    const float* plane = x + c * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * hw;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          float* out = row + static_cast<std::size_t>(y) * w;
          if (sy < 0 || sy >= h) {
            std::fill_n(out, w, 0.0f);
            continue;
          }
          const float* in = plane + static_cast<std::size_t>(sy) * w;
          std::fill_n(out, x_lo, 0.0f);
          if (x_hi > x_lo) std::copy_n(in + x_lo + dx, x_hi - x_lo, out + x_lo);
          std::fill(out + std::max(x_hi, x_lo), out + w, 0.0f);
        }
      }
    }
  }
}

void col2im(const float* col, int channels, int h, int w, int k, float* x) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::fill_n(x, channels * hw, 0.0f);
  for (int c = 0; c < channels; ++c) {
    float* plane = x + c * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * hw;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const float* in = row + static_cast<std::size_t>(y) * w;
          float* out = plane + static_cast<std::size_t>(sy) * w;
          for (int xx = x_lo; xx < x_hi; ++xx) out[xx + dx] += in[xx];
        }
      }
    }
  }
}

}  // namespace

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int kernel) : in_(in_ch), out_(out_ch), k_(kernel) {
  require(in_ch > 0 && out_ch > 0 && kernel > 0 && kernel % 2 == 1, "invalid convolution shape");
  weight_.name = name + ".weight";
  weight_.value.assign(static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel, 0.0f);
  weight_.grad.assign(weight_.value.size(), 0.0f);
  bias_.name = name + ".bias";
  bias_.value.assign(out_ch, 0.0f);
  bias_.grad.assign(out_ch, 0.0f);
}

void Conv2d::init(Rng& rng, double gain) {
  const double stddev = std::sqrt(gain / (in_ * k_ * k_));
  for (float& v : weight_.value) v = static_cast<float>(rng.normal(0.0, stddev));
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0f);
}

Tensor Conv2d::infer(const Tensor& x) const {
  require(x.c == in_, "conv input channel mismatch");
  Tensor y(x.n, out_, x.h, x.w);
  const auto hw = static_cast<Eigen::Index>(x.plane());
  const auto rows = static_cast<Eigen::Index>(in_) * k_ * k_;
  ConstMatMap W(weight_.value.data(), out_, rows);
  Eigen::Map<const Eigen::VectorXf> b(bias_.value.data(), out_);
  FloatBuffer col(k_ == 1 ? 0 : static_cast<std::size_t>(rows * hw));
  for (int i = 0; i < x.n; ++i) {
    const float* src = x.sample(i);
    if (k_ != 1) {
      im2col(src, in_, x.h, x.w, k_, col.data());
      src = col.data();
    }
    MatMap Y(y.sample(i), out_, hw);
    Y.noalias() = W * ConstMatMap(src, rows, hw);
    Y.colwise() += b;
  }
  return y;
}

Tensor Conv2d::forward(const Tensor& x) {
  input_ = x;
  return infer(x);
}

Tensor Conv2d::backward(const Tensor& dy, bool need_input_grad) {
  require(dy.n == input_.n && dy.c == out_ && dy.h == input_.h && dy.w == input_.w, "conv backward shape mismatch");
  const auto hw = static_cast<Eigen::Index>(dy.plane());
  const auto rows = static_cast<Eigen::Index>(in_) * k_ * k_;
  ConstMatMap W(weight_.value.data(), out_, rows);
  MatMap dW(weight_.grad.data(), out_, rows);
  Eigen::Map<Eigen::VectorXf> db(bias_.grad.data(), out_);
  Tensor dx;
  if (need_input_grad) dx = Tensor(input_.n, in_, input_.h, input_.w);
  FloatBuffer col(k_ == 1 ? 0 : static_cast<std::size_t>(rows * hw));
  FloatBuffer dcol(k_ == 1 || !need_input_grad ? 0 : static_cast<std::size_t>(rows * hw));
  for (int i = 0; i < dy.n; ++i) {
    const float* src = input_.sample(i);
    if (k_ != 1) {
      im2col(src, in_, input_.h, input_.w, k_, col.data());
      src = col.data();
    }
    ConstMatMap dY(dy.sample(i), out_, hw);
    dW.noalias() += dY * ConstMatMap(src, rows, hw).transpose();
    db += dY.rowwise().sum();
    if (!need_input_grad) continue;
    if (k_ == 1) {
      MatMap(dx.sample(i), rows, hw).noalias() = W.transpose() * dY;
    } else {
      MatMap(dcol.data(), rows, hw).noalias() = W.transpose() * dY;
      col2im(dcol.data(), in_, input_.h, input_.w, k_, dx.sample(i));
    }
  }
  return dx;
}

BatchNorm2d::BatchNorm2d(std::string name, int channels, double momentum, double eps)
    : channels_(channels), momentum_(momentum), eps_(eps) {
  gamma_.name = name + ".gamma";
  gamma_.value.assign(channels, 1.0f);
  gamma_.grad.assign(channels, 0.0f);
  beta_.name = name + ".beta";
  beta_.value.assign(channels, 0.0f);
  beta_.grad.assign(channels, 0.0f);
  running_mean_.assign(channels, 0.0f);
  running_var_.assign(channels, 1.0f);
}

Tensor BatchNorm2d::forward(const Tensor& x) {
  require(x.c == channels_, "batch norm channel mismatch");
  const std::size_t hw = x.plane();
  const double m = static_cast<double>(x.n) * static_cast<double>(hw);
  require(m > 1, "batch norm needs more than one value per channel");
  Tensor y(x.n, x.c, x.h, x.w);
  xhat_ = Tensor(x.n, x.c, x.h, x.w);
  inv_std_.assign(channels_, 0.0f);
  for (int c = 0; c < channels_; ++c) {
    double sum = 0, sq = 0;
    for (int i = 0; i < x.n; ++i) {
      const float* p = x.sample(i) + c * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        sum += p[j];
        sq += static_cast<double>(p[j]) * p[j];
      }
    }
    const double mean = sum / m;
    const double var = std::max(0.0, sq / m - mean * mean);
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = static_cast<float>(inv);
    running_mean_[c] = static_cast<float>((1 - momentum_) * running_mean_[c] + momentum_ * mean);
    running_var_[c] = static_cast<float>((1 - momentum_) * running_var_[c] + momentum_ * var * m / (m - 1));
    const float g = gamma_.value[c], b = beta_.value[c];
    const auto fm = static_cast<float>(mean), fi = static_cast<float>(inv);
    for (int i = 0; i < x.n; ++i) {
      const float* p = x.sample(i) + c * hw;
      float* xh = xhat_.sample(i) + c * hw;
      float* q = y.sample(i) + c * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        xh[j] = (p[j] - fm) * fi;
        q[j] = g * xh[j] + b;
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::infer(const Tensor& x) const {
  require(x.c == channels_, "batch norm channel mismatch");
  const std::size_t hw = x.plane();
  Tensor y(x.n, x.c, x.h, x.w);
  for (int c = 0; c < channels_; ++c) {
    const auto inv = static_cast<float>(1.0 / std::sqrt(static_cast<double>(running_var_[c]) + eps_));
    const float scale = gamma_.value[c] * inv;
    const float shift = beta_.value[c] - running_mean_[c] * scale;
    for (int i = 0; i < x.n; ++i) {
      const float* p = x.sample(i) + c * hw;
      float* q = y.sample(i) + c * hw;
      for (std::size_t j = 0; j < hw; ++j) q[j] = p[j] * scale + shift;
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
  require(dy.same_shape(xhat_), "batch norm backward shape mismatch");
  const std::size_t hw = dy.plane();
  const double m = static_cast<double>(dy.n) * static_cast<double>(hw);
  Tensor dx(dy.n, dy.c, dy.h, dy.w);
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int i = 0; i < dy.n; ++i) {
      const float* g = dy.sample(i) + c * hw;
      const float* xh = xhat_.sample(i) + c * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        sum_dy += g[j];
        sum_dy_xhat += static_cast<double>(g[j]) * xh[j];
      }
    }
    gamma_.grad[c] += static_cast<float>(sum_dy_xhat);
    beta_.grad[c] += static_cast<float>(sum_dy);
    const float k = gamma_.value[c] * inv_std_[c];
    const auto mean_dy = static_cast<float>(sum_dy / m);
    const auto mean_dy_xhat = static_cast<float>(sum_dy_xhat / m);
    for (int i = 0; i < dy.n; ++i) {
      const float* g = dy.sample(i) + c * hw;
      const float* xh = xhat_.sample(i) + c * hw;
      float* d = dx.sample(i) + c * hw;
      for (std::size_t j = 0; j < hw; ++j) d[j] = k * (g[j] - mean_dy - xh[j] * mean_dy_xhat);
    }
  }
  return dx;
}

ConvBlock::ConvBlock(const std::string& name, int in_ch, int out_ch)
    : conv_(name + ".conv", in_ch, out_ch, 3), bn_(name + ".bn", out_ch) {}

Tensor ConvBlock::forward(const Tensor& x) {
  output_ = bn_.forward(conv_.forward(x));
  for (float& v : output_.data) v = std::max(v, 0.0f);
  return output_;
}

Tensor ConvBlock::infer(const Tensor& x) const {
  Tensor y = bn_.infer(conv_.infer(x));
  for (float& v : y.data) v = std::max(v, 0.0f);
  return y;
}

Tensor ConvBlock::backward(const Tensor& dy, bool need_input_grad) {
  Tensor g = dy;
  for (std::size_t i = 0; i < g.data.size(); ++i)
    if (output_.data[i] <= 0.0f) g.data[i] = 0.0f;
  return conv_.backward(bn_.backward(g), need_input_grad);
}

Tensor maxpool2(const Tensor& x, std::vector<std::uint32_t>* argmax) {
  const int oh = x.h / 2, ow = x.w / 2;
  require(oh > 0 && ow > 0, "maxpool input too small");
  Tensor y(x.n, x.c, oh, ow);
  if (argmax) argmax->assign(y.size(), 0);
  std::size_t o = 0;
  for (int i = 0; i < x.n; ++i)
    for (int c = 0; c < x.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(i) * x.c + c) * x.plane();
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx, ++o) {
          std::size_t best = base + static_cast<std::size_t>(2 * yy) * x.w + 2 * xx;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t idx = base + static_cast<std::size_t>(2 * yy + dy) * x.w + 2 * xx + dx;
              if (x.data[idx] > x.data[best]) best = idx;
            }
          y.data[o] = x.data[best];
          if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best);
        }
    }
  return y;
}

Tensor maxpool2_backward(const Tensor& dy, const std::vector<std::uint32_t>& argmax, int in_h, int in_w) {
  Tensor dx(dy.n, dy.c, in_h, in_w);
  for (std::size_t o = 0; o < dy.data.size(); ++o) dx.data[argmax[o]] += dy.data[o];
  return dx;
}

Tensor upsample2(const Tensor& x, int out_h, int out_w) {
  Tensor y(x.n, x.c, out_h, out_w);
  for (int i = 0; i < x.n; ++i)
    for (int c = 0; c < x.c; ++c)
      for (int yy = 0; yy < out_h; ++yy) {
        const int sy = std::min(yy / 2, x.h - 1);
        for (int xx = 0; xx < out_w; ++xx) y.at(i, c, yy, xx) = x.at(i, c, sy, std::min(xx / 2, x.w - 1));
      }
  return y;
}

Tensor upsample2_backward(const Tensor& dy, int in_h, int in_w) {
  Tensor dx(dy.n, dy.c, in_h, in_w);
  for (int i = 0; i < dy.n; ++i)
    for (int c = 0; c < dy.c; ++c)
      for (int yy = 0; yy < dy.h; ++yy) {
        const int sy = std::min(yy / 2, in_h - 1);
        for (int xx = 0; xx < dy.w; ++xx) dx.at(i, c, sy, std::min(xx / 2, in_w - 1)) += dy.at(i, c, yy, xx);
      }
  return dx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.n == b.n && a.h == b.h && a.w == b.w, "concat shape mismatch");
  Tensor y(a.n, a.c + b.c, a.h, a.w);
  for (int i = 0; i < a.n; ++i) {
    std::copy_n(a.sample(i), a.sample_size(), y.sample(i));
    std::copy_n(b.sample(i), b.sample_size(), y.sample(i) + a.sample_size());
  }
  return y;
}

void split_channels(const Tensor& ab, int a_channels, Tensor& a, Tensor& b) {
  a = Tensor(ab.n, a_channels, ab.h, ab.w);
  b = Tensor(ab.n, ab.c - a_channels, ab.h, ab.w);
  for (int i = 0; i < ab.n; ++i) {
    std::copy_n(ab.sample(i), a.sample_size(), a.sample(i));
    std::copy_n(ab.sample(i) + a.sample_size(), b.sample_size(), b.sample(i));
  }
}

}  // namespace s4al::nn

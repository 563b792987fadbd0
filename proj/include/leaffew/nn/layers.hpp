/* Copyright 2026 The Leaffew Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "leaffew/core/error.hpp"
#include "leaffew/core/rng.hpp"
#include "leaffew/nn/tensor.hpp"

namespace leaffew::nn {

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapM = Eigen::Map<MatX<S>>;
template <class S>
using CMapM = Eigen::Map<const MatX<S>>;

template <class S>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<S> forward(const Tensor<S>& x, bool train) = 0;
  virtual Tensor<S> backward(const Tensor<S>& dy) = 0;
  virtual void collect(std::vector<Param<S>*>& out) {}
  virtual Shape out_shape(Shape in) const = 0;
  virtual std::int64_t macs(Shape in) const { return 0; }
};

// ---------------------------------------------------------------------------
// Convolution. Grouped im2col+GEMM, with a direct path for depthwise.
// Padding is (k-1)/2, the same-convolution choice of the MobileNet family.
// ---------------------------------------------------------------------------
template <class S>
class Conv2d : public Layer<S> {
 public:
  Conv2d(const std::string& name, int in_ch, int out_ch, int kernel, int stride,
         int groups, bool bias)
      : in_ch_(in_ch), out_ch_(out_ch), k_(kernel), stride_(stride),
        groups_(groups), pad_((kernel - 1) / 2), has_bias_(bias) {
    if (in_ch % groups != 0 || out_ch % groups != 0)
      throw ConfigError("conv groups must divide channel counts");
    weight_.name = name + ".weight";
    weight_.init_zero({out_ch, in_ch / groups, kernel, kernel});
    if (bias) {
      bias_.name = name + ".bias";
      bias_.init_zero({out_ch});
    }
  }

  void init(Rng& rng) {
    // kaiming-normal, fan_out mode
    const double fan_out =
        static_cast<double>(out_ch_) * k_ * k_ / static_cast<double>(groups_);
    const double stddev = std::sqrt(2.0 / fan_out);
    for (auto& v : weight_.value) v = static_cast<S>(rng.normal(0.0, stddev));
    if (has_bias_) std::fill(bias_.value.begin(), bias_.value.end(), S(0));
  }

  Shape out_shape(Shape in) const override {
    return {out_ch_, (in.h + 2 * pad_ - k_) / stride_ + 1,
            (in.w + 2 * pad_ - k_) / stride_ + 1};
  }

  std::int64_t macs(Shape in) const override {
    const Shape o = out_shape(in);
    return static_cast<std::int64_t>(out_ch_) * (in.c / groups_) * k_ * k_ *
           o.h * o.w;
  }

  Tensor<S> forward(const Tensor<S>& x, bool) override {
    x_ = x;
    const Shape os = out_shape(x.shape());
    Tensor<S> y(x.n, os);
    if (is_depthwise()) {
      forward_depthwise(x, y);
    } else {
      forward_gemm(x, y);
    }
    if (has_bias_) {
      const int hw = os.h * os.w;
      for (int n = 0; n < y.n; ++n) {
        S* p = y.sample(n);
        for (int c = 0; c < out_ch_; ++c)
          for (int i = 0; i < hw; ++i) p[static_cast<std::size_t>(c) * hw + i] += bias_.value[c];
      }
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    Tensor<S> dx(x_.n, x_.shape());
    if (has_bias_) {
      const int hw = dy.h * dy.w;
      for (int n = 0; n < dy.n; ++n) {
        const S* p = dy.sample(n);
        for (int c = 0; c < out_ch_; ++c) {
          S acc = 0;
          for (int i = 0; i < hw; ++i) acc += p[static_cast<std::size_t>(c) * hw + i];
          bias_.grad[c] += acc;
        }
      }
    }
    if (is_depthwise()) {
      backward_depthwise(dy, dx);
    } else {
      backward_gemm(dy, dx);
    }
    return dx;
  }

  void collect(std::vector<Param<S>*>& out) override {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }

 private:
  bool is_depthwise() const {
    return groups_ == in_ch_ && in_ch_ == out_ch_;
  }

  // col matrix is (Cg*k*k) x (Ho*Wo) for one (sample, group)
  void im2col(const S* x, int ho, int wo, int group, S* col) const {
    const int cg = in_ch_ / groups_;
    const int hw_in = x_.h * x_.w;
    for (int c = 0; c < cg; ++c) {
      const S* xc = x + static_cast<std::size_t>(group * cg + c) * hw_in;
      for (int kh = 0; kh < k_; ++kh) {
        for (int kw = 0; kw < k_; ++kw) {
          S* row = col + (static_cast<std::size_t>(c) * k_ * k_ + kh * k_ + kw) *
                             (static_cast<std::size_t>(ho) * wo);
          for (int oh = 0; oh < ho; ++oh) {
            const int ih = oh * stride_ - pad_ + kh;
            if (ih < 0 || ih >= x_.h) {
              std::fill(row + static_cast<std::size_t>(oh) * wo,
                        row + static_cast<std::size_t>(oh + 1) * wo, S(0));
              continue;
            }
            for (int ow = 0; ow < wo; ++ow) {
              const int iw = ow * stride_ - pad_ + kw;
              row[static_cast<std::size_t>(oh) * wo + ow] =
                  (iw < 0 || iw >= x_.w) ? S(0) : xc[ih * x_.w + iw];
            }
          }
        }
      }
    }
  }

  void col2im(const S* col, int ho, int wo, int group, S* dx) const {
    const int cg = in_ch_ / groups_;
    const int hw_in = x_.h * x_.w;
    for (int c = 0; c < cg; ++c) {
      S* xc = dx + static_cast<std::size_t>(group * cg + c) * hw_in;
      for (int kh = 0; kh < k_; ++kh) {
        for (int kw = 0; kw < k_; ++kw) {
          const S* row = col + (static_cast<std::size_t>(c) * k_ * k_ + kh * k_ + kw) *
                                   (static_cast<std::size_t>(ho) * wo);
          for (int oh = 0; oh < ho; ++oh) {
            const int ih = oh * stride_ - pad_ + kh;
            if (ih < 0 || ih >= x_.h) continue;
            for (int ow = 0; ow < wo; ++ow) {
              const int iw = ow * stride_ - pad_ + kw;
              if (iw >= 0 && iw < x_.w)
                xc[ih * x_.w + iw] += row[static_cast<std::size_t>(oh) * wo + ow];
            }
          }
        }
      }
    }
  }

  void forward_gemm(const Tensor<S>& x, Tensor<S>& y) {
    const Shape os = y.shape();
    const int hw = os.h * os.w;
    const int cg_in = in_ch_ / groups_;
    const int cg_out = out_ch_ / groups_;
    const std::size_t col_rows = static_cast<std::size_t>(cg_in) * k_ * k_;
#pragma omp parallel for schedule(static)
    for (int n = 0; n < x.n; ++n) {
      std::vector<S> col(col_rows * hw);
      for (int g = 0; g < groups_; ++g) {
        im2col(x.sample(n), os.h, os.w, g, col.data());
        CMapM<S> w(weight_.value.data() + static_cast<std::size_t>(g) * cg_out * col_rows,
                   cg_out, static_cast<Eigen::Index>(col_rows));
        CMapM<S> cm(col.data(), static_cast<Eigen::Index>(col_rows), hw);
        MapM<S> out(y.sample(n) + static_cast<std::size_t>(g) * cg_out * hw, cg_out, hw);
        out.noalias() = w * cm;
      }
    }
  }

  void backward_gemm(const Tensor<S>& dy, Tensor<S>& dx) {
    const Shape os = dy.shape();
    const int hw = os.h * os.w;
    const int cg_in = in_ch_ / groups_;
    const int cg_out = out_ch_ / groups_;
    const std::size_t col_rows = static_cast<std::size_t>(cg_in) * k_ * k_;
    int nthreads = 1;
#ifdef _OPENMP
    nthreads = omp_get_max_threads();
#endif
    // per-thread weight-grad accumulators, reduced in thread order below
    std::vector<std::vector<S>> wg(nthreads,
                                   std::vector<S>(weight_.value.size(), S(0)));
#pragma omp parallel for schedule(static)
    for (int n = 0; n < dy.n; ++n) {
      int tid = 0;
#ifdef _OPENMP
      tid = omp_get_thread_num();
#endif
      std::vector<S> col(col_rows * hw);
      std::vector<S> dcol(col_rows * hw);
      for (int g = 0; g < groups_; ++g) {
        im2col(x_.sample(n), os.h, os.w, g, col.data());
        CMapM<S> w(weight_.value.data() + static_cast<std::size_t>(g) * cg_out * col_rows,
                   cg_out, static_cast<Eigen::Index>(col_rows));
        CMapM<S> dout(dy.sample(n) + static_cast<std::size_t>(g) * cg_out * hw, cg_out, hw);
        CMapM<S> cm(col.data(), static_cast<Eigen::Index>(col_rows), hw);
        MapM<S> dwm(wg[tid].data() + static_cast<std::size_t>(g) * cg_out * col_rows,
                    cg_out, static_cast<Eigen::Index>(col_rows));
        dwm.noalias() += dout * cm.transpose();
        MapM<S> dcm(dcol.data(), static_cast<Eigen::Index>(col_rows), hw);
        dcm.noalias() = w.transpose() * dout;
        col2im(dcol.data(), os.h, os.w, g, dx.sample(n));
      }
    }
    for (int t = 0; t < nthreads; ++t)
      for (std::size_t i = 0; i < weight_.grad.size(); ++i)
        weight_.grad[i] += wg[t][i];
  }

  void forward_depthwise(const Tensor<S>& x, Tensor<S>& y) {
    const Shape os = y.shape();
#pragma omp parallel for schedule(static)
    for (int n = 0; n < x.n; ++n) {
      for (int c = 0; c < in_ch_; ++c) {
        const S* xc = x.sample(n) + static_cast<std::size_t>(c) * x.h * x.w;
        const S* wc = weight_.value.data() + static_cast<std::size_t>(c) * k_ * k_;
        S* yc = y.sample(n) + static_cast<std::size_t>(c) * os.h * os.w;
        for (int oh = 0; oh < os.h; ++oh) {
          for (int ow = 0; ow < os.w; ++ow) {
            S acc = 0;
            const int ihb = oh * stride_ - pad_;
            const int iwb = ow * stride_ - pad_;
            for (int kh = 0; kh < k_; ++kh) {
              const int ih = ihb + kh;
              if (ih < 0 || ih >= x.h) continue;
              for (int kw = 0; kw < k_; ++kw) {
                const int iw = iwb + kw;
                if (iw < 0 || iw >= x.w) continue;
                acc += wc[kh * k_ + kw] * xc[ih * x.w + iw];
              }
            }
            yc[static_cast<std::size_t>(oh) * os.w + ow] = acc;
          }
        }
      }
    }
  }

  void backward_depthwise(const Tensor<S>& dy, Tensor<S>& dx) {
    const Shape os = dy.shape();
    int nthreads = 1;
#ifdef _OPENMP
    nthreads = omp_get_max_threads();
#endif
    std::vector<std::vector<S>> wg(nthreads,
                                   std::vector<S>(weight_.value.size(), S(0)));
#pragma omp parallel for schedule(static)
    for (int n = 0; n < dy.n; ++n) {
      int tid = 0;
#ifdef _OPENMP
      tid = omp_get_thread_num();
#endif
      for (int c = 0; c < in_ch_; ++c) {
        const S* xc = x_.sample(n) + static_cast<std::size_t>(c) * x_.h * x_.w;
        const S* wc = weight_.value.data() + static_cast<std::size_t>(c) * k_ * k_;
        S* gwc = wg[tid].data() + static_cast<std::size_t>(c) * k_ * k_;
        const S* dyc = dy.sample(n) + static_cast<std::size_t>(c) * os.h * os.w;
        S* dxc = dx.sample(n) + static_cast<std::size_t>(c) * x_.h * x_.w;
        for (int oh = 0; oh < os.h; ++oh) {
          for (int ow = 0; ow < os.w; ++ow) {
            const S g = dyc[static_cast<std::size_t>(oh) * os.w + ow];
            const int ihb = oh * stride_ - pad_;
            const int iwb = ow * stride_ - pad_;
            for (int kh = 0; kh < k_; ++kh) {
              const int ih = ihb + kh;
              if (ih < 0 || ih >= x_.h) continue;
              for (int kw = 0; kw < k_; ++kw) {
                const int iw = iwb + kw;
                if (iw < 0 || iw >= x_.w) continue;
                gwc[kh * k_ + kw] += g * xc[ih * x_.w + iw];
                dxc[ih * x_.w + iw] += g * wc[kh * k_ + kw];
              }
            }
          }
        }
      }
    }
    for (int t = 0; t < nthreads; ++t)
      for (std::size_t i = 0; i < weight_.grad.size(); ++i)
        weight_.grad[i] += wg[t][i];
  }

  int in_ch_, out_ch_, k_, stride_, groups_, pad_;
  bool has_bias_;
  Param<S> weight_;
  Param<S> bias_;
  Tensor<S> x_;
};

// ---------------------------------------------------------------------------
// Batch normalization. Biased variance normalizes, unbiased updates the
// running estimate. Stats are computed serially so results do not depend on
// thread count.
// ---------------------------------------------------------------------------
template <class S>
class BatchNorm2d : public Layer<S> {
 public:
  BatchNorm2d(const std::string& name, int channels, double eps = 1e-5,
              double momentum = 0.1)
      : ch_(channels), eps_(eps), momentum_(momentum) {
    gamma_.name = name + ".weight";
    gamma_.init_zero({channels});
    std::fill(gamma_.value.begin(), gamma_.value.end(), S(1));
    beta_.name = name + ".bias";
    beta_.init_zero({channels});
    running_mean_.name = name + ".running_mean";
    running_mean_.init_zero({channels});
    running_mean_.trainable = false;
    running_var_.name = name + ".running_var";
    running_var_.init_zero({channels});
    std::fill(running_var_.value.begin(), running_var_.value.end(), S(1));
    running_var_.trainable = false;
  }

  Shape out_shape(Shape in) const override { return in; }

  Tensor<S> forward(const Tensor<S>& x, bool train) override {
    const int hw = x.h * x.w;
    const std::int64_t m = static_cast<std::int64_t>(x.n) * hw;
    Tensor<S> y(x.n, x.shape());
    train_ = train;
    if (train) {
      mean_.assign(ch_, S(0));
      invstd_.assign(ch_, S(0));
      for (int c = 0; c < ch_; ++c) {
        double sum = 0.0, sq = 0.0;
        for (int n = 0; n < x.n; ++n) {
          const S* p = x.sample(n) + static_cast<std::size_t>(c) * hw;
          for (int i = 0; i < hw; ++i) {
            sum += p[i];
            sq += static_cast<double>(p[i]) * p[i];
          }
        }
        const double mu = sum / static_cast<double>(m);
        const double var = std::max(sq / static_cast<double>(m) - mu * mu, 0.0);
        mean_[c] = static_cast<S>(mu);
        invstd_[c] = static_cast<S>(1.0 / std::sqrt(var + eps_));
        const double unbiased = m > 1 ? var * m / static_cast<double>(m - 1) : var;
        running_mean_.value[c] = static_cast<S>(
            (1.0 - momentum_) * running_mean_.value[c] + momentum_ * mu);
        running_var_.value[c] = static_cast<S>(
            (1.0 - momentum_) * running_var_.value[c] + momentum_ * unbiased);
      }
      xhat_ = Tensor<S>(x.n, x.shape());
#pragma omp parallel for schedule(static)
      for (int n = 0; n < x.n; ++n) {
        for (int c = 0; c < ch_; ++c) {
          const S* p = x.sample(n) + static_cast<std::size_t>(c) * hw;
          S* xh = xhat_.sample(n) + static_cast<std::size_t>(c) * hw;
          S* yo = y.sample(n) + static_cast<std::size_t>(c) * hw;
          const S mu = mean_[c], is = invstd_[c];
          const S g = gamma_.value[c], b = beta_.value[c];
          for (int i = 0; i < hw; ++i) {
            xh[i] = (p[i] - mu) * is;
            yo[i] = g * xh[i] + b;
          }
        }
      }
    } else {
#pragma omp parallel for schedule(static)
      for (int n = 0; n < x.n; ++n) {
        for (int c = 0; c < ch_; ++c) {
          const S* p = x.sample(n) + static_cast<std::size_t>(c) * hw;
          S* yo = y.sample(n) + static_cast<std::size_t>(c) * hw;
          const S is = static_cast<S>(
              1.0 / std::sqrt(static_cast<double>(running_var_.value[c]) + eps_));
          const S mu = running_mean_.value[c];
          const S g = gamma_.value[c], b = beta_.value[c];
          for (int i = 0; i < hw; ++i) yo[i] = g * (p[i] - mu) * is + b;
        }
      }
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    const int hw = dy.h * dy.w;
    const std::int64_t m = static_cast<std::int64_t>(dy.n) * hw;
    Tensor<S> dx(dy.n, dy.shape());
    if (!train_) {
      for (int n = 0; n < dy.n; ++n)
        for (int c = 0; c < ch_; ++c) {
          const S is = static_cast<S>(
              1.0 / std::sqrt(static_cast<double>(running_var_.value[c]) + eps_));
          const S* d = dy.sample(n) + static_cast<std::size_t>(c) * hw;
          S* o = dx.sample(n) + static_cast<std::size_t>(c) * hw;
          for (int i = 0; i < hw; ++i) o[i] = d[i] * gamma_.value[c] * is;
        }
      return dx;
    }
    for (int c = 0; c < ch_; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int n = 0; n < dy.n; ++n) {
        const S* d = dy.sample(n) + static_cast<std::size_t>(c) * hw;
        const S* xh = xhat_.sample(n) + static_cast<std::size_t>(c) * hw;
        for (int i = 0; i < hw; ++i) {
          sum_dy += d[i];
          sum_dy_xhat += static_cast<double>(d[i]) * xh[i];
        }
      }
      gamma_.grad[c] += static_cast<S>(sum_dy_xhat);
      beta_.grad[c] += static_cast<S>(sum_dy);
      const double mean_dy = sum_dy / static_cast<double>(m);
      const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(m);
      const double scale = gamma_.value[c] * invstd_[c];
      for (int n = 0; n < dy.n; ++n) {
        const S* d = dy.sample(n) + static_cast<std::size_t>(c) * hw;
        const S* xh = xhat_.sample(n) + static_cast<std::size_t>(c) * hw;
        S* o = dx.sample(n) + static_cast<std::size_t>(c) * hw;
        for (int i = 0; i < hw; ++i)
          o[i] = static_cast<S>(scale * (d[i] - mean_dy - xh[i] * mean_dy_xhat));
      }
    }
    return dx;
  }

  void collect(std::vector<Param<S>*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }

 private:
  int ch_;
  double eps_, momentum_;
  Param<S> gamma_, beta_, running_mean_, running_var_;
  std::vector<S> mean_, invstd_;
  Tensor<S> xhat_;
  bool train_ = false;
};

// ---------------------------------------------------------------------------
// Elementwise activations.
// ---------------------------------------------------------------------------
enum class Act { relu, relu6, hardswish, hardsigmoid, identity };

template <class S>
class Activation : public Layer<S> {
 public:
  explicit Activation(Act kind) : kind_(kind) {}

  Shape out_shape(Shape in) const override { return in; }

  static S eval(Act kind, S x) {
    switch (kind) {
      case Act::relu: return x > S(0) ? x : S(0);
      case Act::relu6: return std::min(std::max(x, S(0)), S(6));
      case Act::hardswish:
        return x * std::min(std::max(x + S(3), S(0)), S(6)) / S(6);
      case Act::hardsigmoid:
        return std::min(std::max(x + S(3), S(0)), S(6)) / S(6);
      default: return x;
    }
  }

  static S grad(Act kind, S x) {
    switch (kind) {
      case Act::relu: return x > S(0) ? S(1) : S(0);
      case Act::relu6: return (x > S(0) && x < S(6)) ? S(1) : S(0);
      case Act::hardswish:
        if (x <= S(-3)) return S(0);
        if (x >= S(3)) return S(1);
        return (S(2) * x + S(3)) / S(6);
      case Act::hardsigmoid:
        return (x > S(-3) && x < S(3)) ? S(1) / S(6) : S(0);
      default: return S(1);
    }
  }

  Tensor<S> forward(const Tensor<S>& x, bool) override {
    x_ = x;
    Tensor<S> y = x;
    for (auto& v : y.data) v = eval(kind_, v);
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    Tensor<S> dx = dy;
    for (std::size_t i = 0; i < dx.data.size(); ++i)
      dx.data[i] *= grad(kind_, x_.data[i]);
    return dx;
  }

 private:
  Act kind_;
  Tensor<S> x_;
};

// ---------------------------------------------------------------------------
// Squeeze-and-excitation: pooled squeeze, two 1x1 convs, hard-sigmoid gate.
// ---------------------------------------------------------------------------
template <class S>
class SqueezeExcite : public Layer<S> {
 public:
  SqueezeExcite(const std::string& name, int channels, int squeeze)
      : ch_(channels), sq_(squeeze) {
    fc1_w_.name = name + ".fc1.weight";
    fc1_w_.init_zero({squeeze, channels, 1, 1});
    fc1_b_.name = name + ".fc1.bias";
    fc1_b_.init_zero({squeeze});
    fc2_w_.name = name + ".fc2.weight";
    fc2_w_.init_zero({channels, squeeze, 1, 1});
    fc2_b_.name = name + ".fc2.bias";
    fc2_b_.init_zero({channels});
  }

  void init(Rng& rng) {
    const double s1 = std::sqrt(2.0 / sq_);  // kaiming fan_out on 1x1 convs
    for (auto& v : fc1_w_.value) v = static_cast<S>(rng.normal(0.0, s1));
    const double s2 = std::sqrt(2.0 / ch_);
    for (auto& v : fc2_w_.value) v = static_cast<S>(rng.normal(0.0, s2));
  }

  Shape out_shape(Shape in) const override { return in; }

  std::int64_t macs(Shape) const override {
    return static_cast<std::int64_t>(ch_) * sq_ * 2;
  }

  Tensor<S> forward(const Tensor<S>& x, bool) override {
    x_ = x;
    const int hw = x.h * x.w;
    z_.assign(static_cast<std::size_t>(x.n) * ch_, S(0));
    a_.assign(static_cast<std::size_t>(x.n) * sq_, S(0));
    pre_gate_.assign(static_cast<std::size_t>(x.n) * ch_, S(0));
    gate_.assign(static_cast<std::size_t>(x.n) * ch_, S(0));
    Tensor<S> y(x.n, x.shape());
    for (int n = 0; n < x.n; ++n) {
      S* z = z_.data() + static_cast<std::size_t>(n) * ch_;
      for (int c = 0; c < ch_; ++c) {
        const S* p = x.sample(n) + static_cast<std::size_t>(c) * hw;
        double acc = 0.0;
        for (int i = 0; i < hw; ++i) acc += p[i];
        z[c] = static_cast<S>(acc / hw);
      }
      S* a = a_.data() + static_cast<std::size_t>(n) * sq_;
      for (int s = 0; s < sq_; ++s) {
        double acc = fc1_b_.value[s];
        const S* w = fc1_w_.value.data() + static_cast<std::size_t>(s) * ch_;
        for (int c = 0; c < ch_; ++c) acc += static_cast<double>(w[c]) * z[c];
        a[s] = static_cast<S>(std::max(acc, 0.0));  // relu
      }
      S* pg = pre_gate_.data() + static_cast<std::size_t>(n) * ch_;
      S* g = gate_.data() + static_cast<std::size_t>(n) * ch_;
      for (int c = 0; c < ch_; ++c) {
        double acc = fc2_b_.value[c];
        const S* w = fc2_w_.value.data() + static_cast<std::size_t>(c) * sq_;
        for (int s = 0; s < sq_; ++s) acc += static_cast<double>(w[s]) * a[s];
        pg[c] = static_cast<S>(acc);
        g[c] = Activation<S>::eval(Act::hardsigmoid, pg[c]);
      }
      for (int c = 0; c < ch_; ++c) {
        const S* p = x.sample(n) + static_cast<std::size_t>(c) * hw;
        S* o = y.sample(n) + static_cast<std::size_t>(c) * hw;
        for (int i = 0; i < hw; ++i) o[i] = p[i] * g[c];
      }
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    const int hw = x_.h * x_.w;
    Tensor<S> dx(x_.n, x_.shape());
    for (int n = 0; n < x_.n; ++n) {
      const S* z = z_.data() + static_cast<std::size_t>(n) * ch_;
      const S* a = a_.data() + static_cast<std::size_t>(n) * sq_;
      const S* pg = pre_gate_.data() + static_cast<std::size_t>(n) * ch_;
      const S* g = gate_.data() + static_cast<std::size_t>(n) * ch_;
      // direct term and gate gradient
      std::vector<S> dgate(ch_, S(0));
      for (int c = 0; c < ch_; ++c) {
        const S* p = x_.sample(n) + static_cast<std::size_t>(c) * hw;
        const S* d = dy.sample(n) + static_cast<std::size_t>(c) * hw;
        S* o = dx.sample(n) + static_cast<std::size_t>(c) * hw;
        double acc = 0.0;
        for (int i = 0; i < hw; ++i) {
          o[i] = d[i] * g[c];
          acc += static_cast<double>(d[i]) * p[i];
        }
        dgate[c] = static_cast<S>(acc) *
                   Activation<S>::grad(Act::hardsigmoid, pg[c]);
      }
      // fc2
      std::vector<S> da(sq_, S(0));
      for (int c = 0; c < ch_; ++c) {
        fc2_b_.grad[c] += dgate[c];
        const S* w = fc2_w_.value.data() + static_cast<std::size_t>(c) * sq_;
        S* gw = fc2_w_.grad.data() + static_cast<std::size_t>(c) * sq_;
        for (int s = 0; s < sq_; ++s) {
          gw[s] += dgate[c] * a[s];
          da[s] += dgate[c] * w[s];
        }
      }
      // relu + fc1
      std::vector<S> dz(ch_, S(0));
      for (int s = 0; s < sq_; ++s) {
        if (a[s] <= S(0)) continue;  // relu gate (a stores post-relu)
        fc1_b_.grad[s] += da[s];
        const S* w = fc1_w_.value.data() + static_cast<std::size_t>(s) * ch_;
        S* gw = fc1_w_.grad.data() + static_cast<std::size_t>(s) * ch_;
        for (int c = 0; c < ch_; ++c) {
          gw[c] += da[s] * z[c];
          dz[c] += da[s] * w[c];
        }
      }
      // squeeze pool
      for (int c = 0; c < ch_; ++c) {
        S* o = dx.sample(n) + static_cast<std::size_t>(c) * hw;
        const S v = dz[c] / static_cast<S>(hw);
        for (int i = 0; i < hw; ++i) o[i] += v;
      }
    }
    return dx;
  }

  void collect(std::vector<Param<S>*>& out) override {
    out.push_back(&fc1_w_);
    out.push_back(&fc1_b_);
    out.push_back(&fc2_w_);
    out.push_back(&fc2_b_);
  }

 private:
  int ch_, sq_;
  Param<S> fc1_w_, fc1_b_, fc2_w_, fc2_b_;
  Tensor<S> x_;
  std::vector<S> z_, a_, pre_gate_, gate_;
};

// ---------------------------------------------------------------------------
// Global average pool to 1x1, fully connected, dropout, flatten, sequential.
// ---------------------------------------------------------------------------
template <class S>
class GlobalAvgPool : public Layer<S> {
 public:
  Shape out_shape(Shape in) const override { return {in.c, 1, 1}; }

  Tensor<S> forward(const Tensor<S>& x, bool) override {
    in_shape_ = x.shape();
    n_ = x.n;
    const int hw = x.h * x.w;
    Tensor<S> y(x.n, x.c, 1, 1);
    for (int n = 0; n < x.n; ++n)
      for (int c = 0; c < x.c; ++c) {
        const S* p = x.sample(n) + static_cast<std::size_t>(c) * hw;
        double acc = 0.0;
        for (int i = 0; i < hw; ++i) acc += p[i];
        y.sample(n)[c] = static_cast<S>(acc / hw);
      }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    const int hw = in_shape_.h * in_shape_.w;
    Tensor<S> dx(n_, in_shape_);
    for (int n = 0; n < n_; ++n)
      for (int c = 0; c < in_shape_.c; ++c) {
        const S v = dy.sample(n)[c] / static_cast<S>(hw);
        S* o = dx.sample(n) + static_cast<std::size_t>(c) * hw;
        for (int i = 0; i < hw; ++i) o[i] = v;
      }
    return dx;
  }

 private:
  Shape in_shape_;
  int n_ = 0;
};

template <class S>
class Linear : public Layer<S> {
 public:
  Linear(const std::string& name, int in_dim, int out_dim)
      : in_(in_dim), out_(out_dim) {
    weight_.name = name + ".weight";
    weight_.init_zero({out_dim, in_dim});
    bias_.name = name + ".bias";
    bias_.init_zero({out_dim});
  }

  void init(Rng& rng) {
    for (auto& v : weight_.value) v = static_cast<S>(rng.normal(0.0, 0.01));
    std::fill(bias_.value.begin(), bias_.value.end(), S(0));
  }

  Shape out_shape(Shape) const override { return {out_, 1, 1}; }

  std::int64_t macs(Shape) const override {
    return static_cast<std::int64_t>(in_) * out_;
  }

  Tensor<S> forward(const Tensor<S>& x, bool) override {
    x_ = x;
    Tensor<S> y(x.n, out_, 1, 1);
    CMapM<S> xm(x.data.data(), x.n, in_);
    CMapM<S> wm(weight_.value.data(), out_, in_);
    MapM<S> ym(y.data.data(), x.n, out_);
    ym.noalias() = xm * wm.transpose();
    for (int n = 0; n < x.n; ++n)
      for (int o = 0; o < out_; ++o) y.sample(n)[o] += bias_.value[o];
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    Tensor<S> dx(x_.n, in_, 1, 1);
    CMapM<S> dym(dy.data.data(), dy.n, out_);
    CMapM<S> xm(x_.data.data(), x_.n, in_);
    CMapM<S> wm(weight_.value.data(), out_, in_);
    MapM<S> dwm(weight_.grad.data(), out_, in_);
    dwm.noalias() += dym.transpose() * xm;
    for (int n = 0; n < dy.n; ++n)
      for (int o = 0; o < out_; ++o) bias_.grad[o] += dy.sample(n)[o];
    MapM<S> dxm(dx.data.data(), dx.n, in_);
    dxm.noalias() = dym * wm;
    return dx;
  }

  void collect(std::vector<Param<S>*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  int in_, out_;
  Param<S> weight_, bias_;
  Tensor<S> x_;
};

template <class S>
class Flatten : public Layer<S> {
 public:
  Shape out_shape(Shape in) const override {
    return {static_cast<int>(in.count()), 1, 1};
  }
  Tensor<S> forward(const Tensor<S>& x, bool) override {
    in_shape_ = x.shape();
    Tensor<S> y = x;
    y.c = static_cast<int>(x.shape().count());
    y.h = y.w = 1;
    return y;
  }
  Tensor<S> backward(const Tensor<S>& dy) override {
    Tensor<S> dx = dy;
    dx.c = in_shape_.c;
    dx.h = in_shape_.h;
    dx.w = in_shape_.w;
    return dx;
  }

 private:
  Shape in_shape_;
};

// Inverted-dropout with an owned stream; mask draws are sequential and
// single-threaded, so training traces replay exactly.
template <class S>
class Dropout : public Layer<S> {
 public:
  explicit Dropout(double p, std::uint64_t seed = 0)
      : p_(p), rng_(seed) {}

  Shape out_shape(Shape in) const override { return in; }

  void reseed(std::uint64_t seed) { rng_ = Rng(seed); }

  Tensor<S> forward(const Tensor<S>& x, bool train) override {
    if (!train || p_ <= 0.0) {
      active_ = false;
      return x;
    }
    active_ = true;
    mask_.resize(x.data.size());
    const S keep_inv = static_cast<S>(1.0 / (1.0 - p_));
    Tensor<S> y = x;
    for (std::size_t i = 0; i < y.data.size(); ++i) {
      const bool keep = rng_.next_double() >= p_;
      mask_[i] = keep ? keep_inv : S(0);
      y.data[i] *= mask_[i];
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    if (!active_) return dy;
    Tensor<S> dx = dy;
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= mask_[i];
    return dx;
  }

 private:
  double p_;
  Rng rng_;
  std::vector<S> mask_;
  bool active_ = false;
};

template <class S>
class Sequential : public Layer<S> {
 public:
  Sequential() = default;

  template <class L, class... Args>
  L* add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L* raw = layer.get();
    layers_.push_back(std::move(layer));
    return raw;
  }

  void add_layer(std::unique_ptr<Layer<S>> layer) {
    layers_.push_back(std::move(layer));
  }

  Shape out_shape(Shape in) const override {
    for (const auto& l : layers_) in = l->out_shape(in);
    return in;
  }

  std::int64_t macs(Shape in) const override {
    std::int64_t total = 0;
    for (const auto& l : layers_) {
      total += l->macs(in);
      in = l->out_shape(in);
    }
    return total;
  }

  Tensor<S> forward(const Tensor<S>& x, bool train) override {
    Tensor<S> cur = x;
    for (auto& l : layers_) cur = l->forward(cur, train);
    return cur;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    Tensor<S> cur = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
      cur = (*it)->backward(cur);
    return cur;
  }

  void collect(std::vector<Param<S>*>& out) override {
    for (auto& l : layers_) l->collect(out);
  }

  std::size_t size() const { return layers_.size(); }

 private:
  std::vector<std::unique_ptr<Layer<S>>> layers_;
};

// Residual wrapper: y = x + body(x) when shapes allow it.
template <class S>
class Residual : public Layer<S> {
 public:
  Residual(std::unique_ptr<Layer<S>> body, bool use_residual)
      : body_(std::move(body)), use_residual_(use_residual) {}

  Shape out_shape(Shape in) const override { return body_->out_shape(in); }
  std::int64_t macs(Shape in) const override { return body_->macs(in); }

  Tensor<S> forward(const Tensor<S>& x, bool train) override {
    Tensor<S> y = body_->forward(x, train);
    if (use_residual_)
      for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += x.data[i];
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    Tensor<S> dx = body_->backward(dy);
    if (use_residual_)
      for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dy.data[i];
    return dx;
  }

  void collect(std::vector<Param<S>*>& out) override { body_->collect(out); }

 private:
  std::unique_ptr<Layer<S>> body_;
  bool use_residual_;
};

}  // namespace leaffew::nn

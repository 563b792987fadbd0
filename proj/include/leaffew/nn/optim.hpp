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

#include <cmath>
#include <vector>

#include "leaffew/nn/tensor.hpp"

namespace leaffew::nn {

// Cross-entropy over logits (N x K), mean over the batch. Returns the loss
// and writes softmax probabilities; grad_logits = (softmax - onehot)/N.
template <class S>
double softmax_cross_entropy(const Tensor<S>& logits,
                             const std::vector<int>& labels,
                             Tensor<S>* grad_logits = nullptr,
                             Tensor<S>* probs_out = nullptr) {
  const int n = logits.n;
  const int k = logits.c;
  Tensor<S> probs(n, k, 1, 1);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const S* row = logits.sample(i);
    S mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
    const double log_denom = std::log(denom);
    for (int j = 0; j < k; ++j)
      probs.sample(i)[j] =
          static_cast<S>(std::exp(static_cast<double>(row[j] - mx) - log_denom));
    loss -= static_cast<double>(row[labels[i]] - mx) - log_denom;
  }
  loss /= n;
  if (grad_logits) {
    *grad_logits = Tensor<S>(n, k, 1, 1);
    for (int i = 0; i < n; ++i) {
      S* g = grad_logits->sample(i);
      const S* p = probs.sample(i);
      for (int j = 0; j < k; ++j) g[j] = p[j] / static_cast<S>(n);
      g[labels[i]] -= S(1) / static_cast<S>(n);
    }
  }
  if (probs_out) *probs_out = std::move(probs);
  return loss;
}

// SGD with classical momentum: v = mu*v + g; w -= lr*v.
template <class S>
class Sgd {
 public:
  Sgd(std::vector<Param<S>*> params, double lr, double momentum = 0.9,
      double weight_decay = 0.0)
      : params_(std::move(params)), lr_(lr), momentum_(momentum),
        weight_decay_(weight_decay) {
    for (auto* p : params_) velocity_.emplace_back(p->value.size(), S(0));
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step() {
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      Param<S>* p = params_[pi];
      if (!p->trainable) continue;
      auto& v = velocity_[pi];
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        S g = p->grad[i];
        if (weight_decay_ > 0.0)
          g += static_cast<S>(weight_decay_) * p->value[i];
        v[i] = static_cast<S>(momentum_) * v[i] + g;
        p->value[i] -= static_cast<S>(lr_) * v[i];
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

 private:
  std::vector<Param<S>*> params_;
  double lr_, momentum_, weight_decay_;
  std::vector<std::vector<S>> velocity_;
};

// Adam with bias correction.
template <class S>
class Adam {
 public:
  Adam(std::vector<Param<S>*> params, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2),
        eps_(eps) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.size(), S(0));
      v_.emplace_back(p->value.size(), S(0));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      Param<S>* p = params_[pi];
      if (!p->trainable) continue;
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        const double g = static_cast<double>(p->grad[i]);
        m[i] = static_cast<S>(beta1_ * m[i] + (1.0 - beta1_) * g);
        v[i] = static_cast<S>(beta2_ * v[i] + (1.0 - beta2_) * g * g);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p->value[i] -= static_cast<S>(lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

 private:
  std::vector<Param<S>*> params_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<S>> m_, v_;
};

inline double cosine_lr(double base_lr, int epoch, int total_epochs) {
  if (total_epochs <= 1) return base_lr;
  return base_lr * 0.5 *
         (1.0 + std::cos(M_PI * static_cast<double>(epoch) /
                         static_cast<double>(total_epochs)));
}

}  // namespace leaffew::nn

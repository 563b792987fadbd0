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

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace leaffew::nn {

struct Shape {
  int c = 0;
  int h = 0;
  int w = 0;
  std::int64_t count() const {
    return static_cast<std::int64_t>(c) * h * w;
  }
  bool operator==(const Shape&) const = default;
};

// NCHW activation tensor.
template <class S>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<S> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(n_) * c_ * h_ * w_, S(0)) {}
  Tensor(int n_, Shape s) : Tensor(n_, s.c, s.h, s.w) {}

  Shape shape() const { return {c, h, w}; }
  std::size_t sample_size() const {
    return static_cast<std::size_t>(c) * h * w;
  }
  S* sample(int i) { return data.data() + sample_size() * i; }
  const S* sample(int i) const { return data.data() + sample_size() * i; }

  S& at(int ni, int ci, int hi, int wi) {
    return data[((static_cast<std::size_t>(ni) * c + ci) * h + hi) * w + wi];
  }
  S at(int ni, int ci, int hi, int wi) const {
    return data[((static_cast<std::size_t>(ni) * c + ci) * h + hi) * w + wi];
  }
};

// Named parameter (or buffer) with its gradient accumulator.
template <class S>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<S> value;
  std::vector<S> grad;
  bool trainable = true;  // false marks buffers such as BN running stats

  std::size_t size() const { return value.size(); }
  void init_zero(std::vector<int> shp) {
    shape = std::move(shp);
    std::size_t total = 1;
    for (int d : shape) total *= static_cast<std::size_t>(d);
    value.assign(total, S(0));
    grad.assign(total, S(0));
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }
};

}  // namespace leaffew::nn

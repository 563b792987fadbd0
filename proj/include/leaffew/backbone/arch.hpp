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

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "leaffew/core/error.hpp"
#include "leaffew/core/rng.hpp"
#include "leaffew/nn/layers.hpp"

namespace leaffew::backbone {

enum class BackboneName { mnv2, mnv3_small, mnv3_large };

inline std::string to_string(BackboneName n) {
  switch (n) {
    case BackboneName::mnv2: return "mnv2";
    case BackboneName::mnv3_small: return "mnv3_small";
    default: return "mnv3_large";
  }
}

inline BackboneName backbone_from_string(const std::string& s) {
  if (s == "mnv2") return BackboneName::mnv2;
  if (s == "mnv3_small") return BackboneName::mnv3_small;
  if (s == "mnv3_large") return BackboneName::mnv3_large;
  throw ConfigError("unknown backbone '" + s + "'");
}

// Channel rounding used throughout the MobileNet family.
inline int make_divisible(double v, int divisor = 8) {
  int new_v = std::max(divisor,
                       static_cast<int>(v + divisor / 2.0) / divisor * divisor);
  if (new_v < 0.9 * v) new_v += divisor;
  return new_v;
}

/// A backbone network: trunk (conv features + global pool) and classifier.
/// The embedding tap is the globally pooled trunk output, in front of any
/// classifier layer, so stripping the head cannot change embeddings.
template <class S>
struct Network {
  BackboneName kind = BackboneName::mnv2;
  nn::Sequential<S> trunk;
  nn::Sequential<S> classifier;
  std::vector<nn::Dropout<S>*> dropouts;
  int embedding_dim = 0;
  int num_classes = 0;

  std::vector<nn::Param<S>*> params() {
    std::vector<nn::Param<S>*> out;
    trunk.collect(out);
    classifier.collect(out);
    return out;
  }

  std::int64_t param_count() {
    std::int64_t total = 0;
    for (auto* p : params())
      if (p->trainable) total += static_cast<std::int64_t>(p->size());
    return total;
  }

  std::int64_t trunk_param_count() {
    std::vector<nn::Param<S>*> out;
    trunk.collect(out);
    std::int64_t total = 0;
    for (auto* p : out)
      if (p->trainable) total += static_cast<std::int64_t>(p->size());
    return total;
  }

  // multiply-accumulates for one forward pass at the given input resolution
  std::int64_t macs(int resolution = 224) const {
    const nn::Shape in{3, resolution, resolution};
    return trunk.macs(in) + classifier.macs(trunk.out_shape(in));
  }

  nn::Tensor<S> embed(const nn::Tensor<S>& x, bool train = false) {
    return trunk.forward(x, train);
  }

  nn::Tensor<S> logits(const nn::Tensor<S>& x, bool train) {
    return classifier.forward(trunk.forward(x, train), train);
  }

  nn::Tensor<S> backward(const nn::Tensor<S>& dlogits) {
    return trunk.backward(classifier.backward(dlogits));
  }

  void reseed_dropout(std::uint64_t seed) {
    for (std::size_t i = 0; i < dropouts.size(); ++i)
      dropouts[i]->reseed(hash_combine(seed, i));
  }
};

namespace detail {

// conv + BN + optional activation, named like "prefix.0" / "prefix.1"
template <class S>
void add_conv_bn_act(nn::Sequential<S>& seq, Rng& rng, const std::string& prefix,
                     int in_ch, int out_ch, int k, int stride, int groups,
                     nn::Act act, double bn_eps, double bn_momentum) {
  auto* conv = seq.template add<nn::Conv2d<S>>(prefix + ".0", in_ch, out_ch, k,
                                               stride, groups, false);
  conv->init(rng);
  seq.template add<nn::BatchNorm2d<S>>(prefix + ".1", out_ch, bn_eps,
                                       bn_momentum);
  if (act != nn::Act::identity) seq.template add<nn::Activation<S>>(act);
}

struct V3BlockCfg {
  int kernel;
  int expand;
  int out;
  bool se;
  nn::Act act;
  int stride;
};

template <class S>
std::unique_ptr<nn::Layer<S>> make_v3_block(Rng& rng, const std::string& prefix,
                                            int in_ch, const V3BlockCfg& cfg,
                                            double bn_eps, double bn_momentum) {
  auto body = std::make_unique<nn::Sequential<S>>();
  int sub = 0;
  int ch = in_ch;
  if (cfg.expand != in_ch) {
    add_conv_bn_act(*body, rng, prefix + "." + std::to_string(sub++), ch,
                    cfg.expand, 1, 1, 1, cfg.act, bn_eps, bn_momentum);
    ch = cfg.expand;
  }
  add_conv_bn_act(*body, rng, prefix + "." + std::to_string(sub++), ch, ch,
                  cfg.kernel, cfg.stride, ch, cfg.act, bn_eps, bn_momentum);
  if (cfg.se) {
    const int squeeze = make_divisible(cfg.expand / 4.0);
    auto* se = body->template add<nn::SqueezeExcite<S>>(
        prefix + "." + std::to_string(sub++), ch, squeeze);
    se->init(rng);
  }
  add_conv_bn_act(*body, rng, prefix + "." + std::to_string(sub++), ch, cfg.out,
                  1, 1, 1, nn::Act::identity, bn_eps, bn_momentum);
  const bool residual = cfg.stride == 1 && in_ch == cfg.out;
  return std::make_unique<nn::Residual<S>>(std::move(body), residual);
}

template <class S>
std::unique_ptr<nn::Layer<S>> make_v2_block(Rng& rng, const std::string& prefix,
                                            int in_ch, int out_ch, int expand,
                                            int stride) {
  auto body = std::make_unique<nn::Sequential<S>>();
  constexpr double eps = 1e-5, mom = 0.1;
  int sub = 0;
  int ch = in_ch;
  if (expand != in_ch) {
    add_conv_bn_act(*body, rng, prefix + "." + std::to_string(sub++), ch, expand,
                    1, 1, 1, nn::Act::relu6, eps, mom);
    ch = expand;
  }
  add_conv_bn_act(*body, rng, prefix + "." + std::to_string(sub++), ch, ch, 3,
                  stride, ch, nn::Act::relu6, eps, mom);
  // linear projection: bare conv then BN (no activation), named flat
  auto* proj = body->template add<nn::Conv2d<S>>(
      prefix + "." + std::to_string(sub++), ch, out_ch, 1, 1, 1, false);
  proj->init(rng);
  body->template add<nn::BatchNorm2d<S>>(prefix + "." + std::to_string(sub++),
                                         out_ch, eps, mom);
  const bool residual = stride == 1 && in_ch == out_ch;
  return std::make_unique<nn::Residual<S>>(std::move(body), residual);
}

}  // namespace detail

// MobileNetV2 at width 1.0: penultimate pooled width 1280.
template <class S>
Network<S> build_mnv2(int num_classes = 1000, std::uint64_t seed = 0,
                      double dropout = 0.2) {
  Network<S> net;
  net.kind = BackboneName::mnv2;
  net.num_classes = num_classes;
  net.embedding_dim = 1280;
  Rng rng(mix64(seed ^ 0x6d6e7632ULL));
  constexpr double eps = 1e-5, mom = 0.1;

  detail::add_conv_bn_act(net.trunk, rng, "features.0", 3, 32, 3, 2, 1,
                          nn::Act::relu6, eps, mom);
  struct Group { int t, c, n, s; };
  const std::vector<Group> groups = {{1, 16, 1, 1},  {6, 24, 2, 2},
                                     {6, 32, 3, 2},  {6, 64, 4, 2},
                                     {6, 96, 3, 1},  {6, 160, 3, 2},
                                     {6, 320, 1, 1}};
  int in_ch = 32;
  int idx = 1;
  for (const auto& g : groups) {
    for (int i = 0; i < g.n; ++i) {
      const int stride = i == 0 ? g.s : 1;
      net.trunk.add_layer(detail::make_v2_block<S>(
          rng, "features." + std::to_string(idx) + ".conv", in_ch, g.c,
          in_ch * g.t, stride));
      in_ch = g.c;
      ++idx;
    }
  }
  detail::add_conv_bn_act(net.trunk, rng, "features." + std::to_string(idx),
                          320, 1280, 1, 1, 1, nn::Act::relu6, eps, mom);
  net.trunk.template add<nn::GlobalAvgPool<S>>();
  net.trunk.template add<nn::Flatten<S>>();

  net.dropouts.push_back(
      net.classifier.template add<nn::Dropout<S>>(dropout, seed));
  auto* fc = net.classifier.template add<nn::Linear<S>>("classifier.1", 1280,
                                                        num_classes);
  fc->init(rng);
  return net;
}

template <class S>
Network<S> build_mnv3(BackboneName which, int num_classes = 1000,
                      std::uint64_t seed = 0, double dropout = 0.2) {
  Network<S> net;
  net.kind = which;
  net.num_classes = num_classes;
  Rng rng(mix64(seed ^ (which == BackboneName::mnv3_small ? 0x763373ULL
                                                          : 0x76336cULL)));
  constexpr double eps = 1e-3, mom = 0.01;
  using detail::V3BlockCfg;
  using nn::Act;

  std::vector<V3BlockCfg> cfgs;
  int last_conv_in = 0, last_conv_out = 0, pre_logits = 0;
  if (which == BackboneName::mnv3_small) {
    cfgs = {{3, 16, 16, true, Act::relu, 2},
            {3, 72, 24, false, Act::relu, 2},
            {3, 88, 24, false, Act::relu, 1},
            {5, 96, 40, true, Act::hardswish, 2},
            {5, 240, 40, true, Act::hardswish, 1},
            {5, 240, 40, true, Act::hardswish, 1},
            {5, 120, 48, true, Act::hardswish, 1},
            {5, 144, 48, true, Act::hardswish, 1},
            {5, 288, 96, true, Act::hardswish, 2},
            {5, 576, 96, true, Act::hardswish, 1},
            {5, 576, 96, true, Act::hardswish, 1}};
    last_conv_in = 96;
    last_conv_out = 576;
    pre_logits = 1024;
  } else if (which == BackboneName::mnv3_large) {
    cfgs = {{3, 16, 16, false, Act::relu, 1},
            {3, 64, 24, false, Act::relu, 2},
            {3, 72, 24, false, Act::relu, 1},
            {5, 72, 40, true, Act::relu, 2},
            {5, 120, 40, true, Act::relu, 1},
            {5, 120, 40, true, Act::relu, 1},
            {3, 240, 80, false, Act::hardswish, 2},
            {3, 200, 80, false, Act::hardswish, 1},
            {3, 184, 80, false, Act::hardswish, 1},
            {3, 184, 80, false, Act::hardswish, 1},
            {3, 480, 112, true, Act::hardswish, 1},
            {3, 672, 112, true, Act::hardswish, 1},
            {5, 672, 160, true, Act::hardswish, 2},
            {5, 960, 160, true, Act::hardswish, 1},
            {5, 960, 160, true, Act::hardswish, 1}};
    last_conv_in = 160;
    last_conv_out = 960;
    pre_logits = 1280;
  } else {
    throw ConfigError("build_mnv3 expects a v3 variant");
  }
  net.embedding_dim = last_conv_out;

  detail::add_conv_bn_act(net.trunk, rng, "features.0", 3, 16, 3, 2, 1,
                          Act::hardswish, eps, mom);
  int in_ch = 16;
  int idx = 1;
  for (const auto& cfg : cfgs) {
    net.trunk.add_layer(detail::make_v3_block<S>(
        rng, "features." + std::to_string(idx) + ".block", in_ch, cfg, eps,
        mom));
    in_ch = cfg.out;
    ++idx;
  }
  detail::add_conv_bn_act(net.trunk, rng, "features." + std::to_string(idx),
                          last_conv_in, last_conv_out, 1, 1, 1, Act::hardswish,
                          eps, mom);
  net.trunk.template add<nn::GlobalAvgPool<S>>();
  net.trunk.template add<nn::Flatten<S>>();

  auto* fc0 = net.classifier.template add<nn::Linear<S>>("classifier.0",
                                                         last_conv_out,
                                                         pre_logits);
  fc0->init(rng);
  net.classifier.template add<nn::Activation<S>>(Act::hardswish);
  net.dropouts.push_back(
      net.classifier.template add<nn::Dropout<S>>(dropout, seed));
  auto* fc3 = net.classifier.template add<nn::Linear<S>>("classifier.3",
                                                         pre_logits,
                                                         num_classes);
  fc3->init(rng);
  return net;
}

template <class S>
Network<S> build_backbone(BackboneName name, int num_classes = 1000,
                          std::uint64_t seed = 0) {
  if (name == BackboneName::mnv2) return build_mnv2<S>(num_classes, seed);
  return build_mnv3<S>(name, num_classes, seed);
}

// Fresh network with the same architecture and copied weights. Layers cache
// activations for backward, so concurrent forwards need per-thread clones.
template <class S>
Network<S> clone_network(Network<S>& src) {
  Network<S> dst = build_backbone<S>(src.kind, src.num_classes);
  auto sp = src.params();
  auto dp = dst.params();
  for (std::size_t i = 0; i < sp.size(); ++i) dp[i]->value = sp[i]->value;
  return dst;
}

inline int embedding_dim_of(BackboneName name) {
  switch (name) {
    case BackboneName::mnv2: return 1280;
    case BackboneName::mnv3_small: return 576;
    default: return 960;
  }
}

}  // namespace leaffew::backbone

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

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "leaffew/backbone/extract.hpp"
#include "leaffew/backbone/weights.hpp"
#include "leaffew/core/rng.hpp"
#include "leaffew/nn/optim.hpp"

namespace leaffew::backbone {

// All layers train (full fine-tune). Defaults are explicit and overridable;
// they are surfaced in report headers because no canonical values exist.
struct AdaptationConfig {
  int expected_classes = 28;
  int epochs = 20;
  double learning_rate = 1e-3;  // cosine-decayed
  int batch_size = 64;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int train_resolution = 224;
  bool augment = true;  // horizontal flip + random crop
  double holdout_fraction = 0.1;
  int early_stop_patience = 5;
  std::uint64_t seed = 0;
  // optional starting point (imported published weights); empty = seeded init
  std::string base_weights;

  nlohmann::json to_json() const {
    return {{"expected_classes", expected_classes},
            {"epochs", epochs},
            {"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"momentum", momentum},
            {"weight_decay", weight_decay},
            {"train_resolution", train_resolution},
            {"augment", augment},
            {"holdout_fraction", holdout_fraction},
            {"early_stop_patience", early_stop_patience},
            {"seed", seed},
            {"base_weights", base_weights}};
  }
};

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double holdout_loss = 0.0;
  double holdout_accuracy = 0.0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  bool early_stopped = false;

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : epochs)
      arr.push_back({{"epoch", e.epoch},
                     {"lr", e.lr},
                     {"train_loss", e.train_loss},
                     {"train_accuracy", e.train_accuracy},
                     {"holdout_loss", e.holdout_loss},
                     {"holdout_accuracy", e.holdout_accuracy}});
    return {{"epochs", arr}, {"early_stopped", early_stopped}};
  }
};

namespace detail {

template <class S>
nn::Tensor<S> load_train_image(const data::ImageRecord& rec,
                               const PreprocessSpec& prep, int resolution,
                               bool augment, Rng& rng) {
  image::Image img = image::load_ppm(rec.path);
  // shorter side scaled by the same 256:224 margin the eval pipeline uses
  const int side = static_cast<int>(std::lround(
      resolution * static_cast<double>(prep.resize_side) / prep.crop));
  image::Image resized = image::resize_shorter_side(img, side);
  image::Image patch;
  if (augment) {
    const int max_x = resized.width - resolution;
    const int max_y = resized.height - resolution;
    const int x0 = max_x > 0 ? static_cast<int>(rng.next_below(max_x + 1)) : 0;
    const int y0 = max_y > 0 ? static_cast<int>(rng.next_below(max_y + 1)) : 0;
    patch = image::crop(resized, x0, y0, resolution, resolution);
    if (rng.next_double() < 0.5) patch = image::hflip(patch);
  } else {
    patch = image::center_crop(resized, resolution);
  }
  nn::Tensor<S> x(1, 3, resolution, resolution);
  x.data = image::normalize_chw<S>(patch, prep.mean, prep.stddev);
  return x;
}

template <class S>
std::pair<double, double> evaluate_split(
    Network<S>& net, const data::DatasetManifest& manifest,
    const std::vector<std::pair<std::string, int>>& items,
    const PreprocessSpec& prep, int resolution, int batch_size) {
  double loss_sum = 0.0;
  std::int64_t correct = 0;
  Rng unused(0);
  for (std::size_t start = 0; start < items.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(items.size(), start + static_cast<std::size_t>(batch_size));
    const int bn = static_cast<int>(end - start);
    nn::Tensor<S> batch(bn, 3, resolution, resolution);
    std::vector<int> labels(bn);
    for (int i = 0; i < bn; ++i) {
      const auto& rec = manifest.by_id(items[start + i].first);
      nn::Tensor<S> x =
          load_train_image<S>(rec, prep, resolution, /*augment=*/false, unused);
      std::copy(x.data.begin(), x.data.end(),
                batch.data.begin() + static_cast<std::size_t>(i) * x.data.size());
      labels[i] = items[start + i].second;
    }
    nn::Tensor<S> logits = net.logits(batch, /*train=*/false);
    nn::Tensor<S> probs;
    loss_sum += nn::softmax_cross_entropy<S>(logits, labels, nullptr, &probs) * bn;
    for (int i = 0; i < bn; ++i) {
      int arg = 0;
      const S* row = probs.sample(i);
      for (int j = 1; j < logits.c; ++j)
        if (row[j] > row[arg]) arg = j;
      if (arg == labels[i]) ++correct;
    }
  }
  return {loss_sum / static_cast<double>(items.size()),
          static_cast<double>(correct) / static_cast<double>(items.size())};
}

}  // namespace detail

// Fine-tunes one backbone on the meta-train classes and persists the
// artifact (weights + per-epoch log). Zero epochs is the identity on
// weights. The classification head stays in the artifact; extraction taps
// the pooled trunk and never sees it.
template <class S>
AdaptedBackbone finetune_backbone(BackboneName name,
                                  const data::DatasetManifest& train_set,
                                  const AdaptationConfig& config,
                                  const fs::path& artifact_dir,
                                  TrainLog* log_out = nullptr) {
  const int n_classes = static_cast<int>(train_set.classes.size());
  if (config.expected_classes > 0 && n_classes != config.expected_classes)
    throw ConfigError("adaptation expected " +
                      std::to_string(config.expected_classes) +
                      " classes, manifest has " + std::to_string(n_classes));

  Network<S> net = build_backbone<S>(name, n_classes, config.seed);
  if (!config.base_weights.empty()) {
    // published pretrained weights in interchange form; classifier shapes
    // differ, so only trunk tensors are pulled
    Network<S> base = build_backbone<S>(name, 1000, config.seed);
    load_network_weights(base, config.base_weights);
    std::vector<nn::Param<S>*> src, dst;
    base.trunk.collect(src);
    net.trunk.collect(dst);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
  }
  net.reseed_dropout(hash_combine(config.seed, 0x64726f70ULL));

  std::map<std::string, int> class_index;
  for (int i = 0; i < n_classes; ++i) class_index[train_set.classes[i]] = i;

  // stratified holdout for early stopping
  std::vector<std::pair<std::string, int>> train_items, holdout_items;
  for (const auto& cls : train_set.classes) {
    std::vector<std::string> ids = train_set.ids_of_class(cls);
    Rng rng(hash_str(hash_combine(config.seed, 0x686f6cULL), cls));
    rng.shuffle(ids);
    const auto hold_n = static_cast<std::size_t>(
        std::floor(config.holdout_fraction * static_cast<double>(ids.size())));
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto& bucket = i < hold_n ? holdout_items : train_items;
      bucket.emplace_back(ids[i], class_index[cls]);
    }
  }
  std::sort(train_items.begin(), train_items.end());
  std::sort(holdout_items.begin(), holdout_items.end());

  TrainLog log;
  const PreprocessSpec prep;
  auto params = net.params();
  nn::Sgd<S> opt(params, config.learning_rate, config.momentum,
                 config.weight_decay);

  double best_holdout = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    opt.set_lr(nn::cosine_lr(config.learning_rate, epoch, config.epochs));
    Rng order_rng(hash_combine(hash_combine(config.seed, 0x6f726453ULL),
                               static_cast<std::uint64_t>(epoch)));
    std::vector<std::pair<std::string, int>> order = train_items;
    order_rng.shuffle(order);
    Rng aug_rng(hash_combine(hash_combine(config.seed, 0x617567ULL),
                             static_cast<std::uint64_t>(epoch)));

    double loss_sum = 0.0;
    std::int64_t correct = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(
          order.size(), start + static_cast<std::size_t>(config.batch_size));
      const int bn = static_cast<int>(end - start);
      nn::Tensor<S> batch(bn, 3, config.train_resolution,
                          config.train_resolution);
      std::vector<int> labels(bn);
      for (int i = 0; i < bn; ++i) {
        const auto& rec = train_set.by_id(order[start + i].first);
        nn::Tensor<S> x = detail::load_train_image<S>(
            rec, prep, config.train_resolution, config.augment, aug_rng);
        std::copy(x.data.begin(), x.data.end(),
                  batch.data.begin() +
                      static_cast<std::size_t>(i) * x.data.size());
        labels[i] = order[start + i].second;
      }
      opt.zero_grad();
      nn::Tensor<S> logits = net.logits(batch, /*train=*/true);
      nn::Tensor<S> dlogits, probs;
      const double loss =
          nn::softmax_cross_entropy(logits, labels, &dlogits, &probs);
      if (!std::isfinite(loss))
        throw TrainingError("divergent loss at epoch " +
                            std::to_string(epoch));
      net.backward(dlogits);
      opt.step();
      loss_sum += loss * bn;
      for (int i = 0; i < bn; ++i) {
        int arg = 0;
        const S* row = probs.sample(i);
        for (int j = 1; j < logits.c; ++j)
          if (row[j] > row[arg]) arg = j;
        if (arg == labels[i]) ++correct;
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = opt.lr();
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    stats.train_accuracy =
        static_cast<double>(correct) / static_cast<double>(order.size());
    if (!holdout_items.empty()) {
      auto [hl, ha] = detail::evaluate_split(net, train_set, holdout_items,
                                             prep, config.train_resolution,
                                             config.batch_size);
      stats.holdout_loss = hl;
      stats.holdout_accuracy = ha;
      if (hl < best_holdout - 1e-5) {
        best_holdout = hl;
        since_best = 0;
      } else if (++since_best >= config.early_stop_patience) {
        log.epochs.push_back(stats);
        log.early_stopped = true;
        break;
      }
    }
    log.epochs.push_back(stats);
  }

  AdaptedBackbone artifact;
  artifact.name = name;
  artifact.adaptation_tag = AdaptationTag::domain_adapted;
  artifact.train_class_count = n_classes;
  artifact.weights_ref =
      artifact_dir / (to_string(name) + "_domain_adapted.lfw");
  fs::create_directories(artifact_dir);
  save_network_weights(net, artifact.weights_ref,
                       {{"adaptation_tag", "domain_adapted"},
                        {"train_class_count", n_classes},
                        {"dataset", train_set.name},
                        {"config", config.to_json()},
                        {"train_log", log.to_json()}});
  write_file_atomic(
      artifact_dir / (to_string(name) + "_train_log.json"),
      log.to_json().dump(2) + "\n");
  if (log_out) *log_out = log;
  return artifact;
}

// Pristine artifact: the extractor is the base model unmodified (imported
// published weights when given, otherwise the seeded initialization).
template <class S>
AdaptedBackbone make_base_artifact(BackboneName name, const fs::path& dir,
                                   std::uint64_t seed,
                                   const std::string& base_weights = "") {
  Network<S> net = build_backbone<S>(name, 1000, seed);
  if (!base_weights.empty()) load_network_weights(net, base_weights);
  AdaptedBackbone artifact;
  artifact.name = name;
  artifact.adaptation_tag = AdaptationTag::imagenet_only;
  artifact.train_class_count = 0;
  artifact.weights_ref = dir / (to_string(name) + "_imagenet_only.lfw");
  fs::create_directories(dir);
  save_network_weights(net, artifact.weights_ref,
                       {{"adaptation_tag", "imagenet_only"},
                        {"base_weights", base_weights},
                        {"seed", seed}});
  return artifact;
}

template <class S>
Network<S> load_backbone(const AdaptedBackbone& artifact) {
  const std::string text = read_file(artifact.weights_ref);
  nlohmann::json probe =
      nlohmann::json::parse(text.substr(0, text.find('\n')));
  const int n_classes = probe.value("num_classes", 1000);
  Network<S> net = build_backbone<S>(artifact.name, n_classes);
  load_network_weights(net, artifact.weights_ref);
  return net;
}

}  // namespace leaffew::backbone

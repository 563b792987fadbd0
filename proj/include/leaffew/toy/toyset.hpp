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
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "leaffew/core/rng.hpp"
#include "leaffew/data/manifest.hpp"
#include "leaffew/fusion/fusion.hpp"
#include "leaffew/image/ppm.hpp"

namespace leaffew::toy {

namespace detail {

inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0);
  const double c = v * s;
  const double x = c * (1.0 - std::abs(std::fmod(h / 60.0, 2.0) - 1.0));
  const double m = v - c;
  double r = 0, g = 0, b = 0;
  if (h < 60) { r = c; g = x; }
  else if (h < 120) { r = x; g = c; }
  else if (h < 180) { g = c; b = x; }
  else if (h < 240) { g = x; b = c; }
  else if (h < 300) { r = x; b = c; }
  else { r = c; b = x; }
  return {r + m, g + m, b + m};
}

inline std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(
      std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

// One synthetic leaf-like blob: elliptical patch of a given hue with a
// stripe texture, on a noisy (optionally cluttered) background.
inline void write_blob_image(const std::string& path, int size, double hue_deg,
                             double saturation, double value,
                             std::uint64_t seed, double stripe_freq = 3.0,
                             int clutter_patches = 0) {
  Rng rng(seed);
  image::Image img;
  img.width = size;
  img.height = size;
  img.rgb.resize(static_cast<std::size_t>(size) * size * 3);

  const double bg = rng.uniform(0.35, 0.55);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = detail::to_u8(bg + rng.uniform(-0.05, 0.05));

  for (int p = 0; p < clutter_patches; ++p) {
    const int pw = 2 + static_cast<int>(rng.next_below(size / 3));
    const int ph = 2 + static_cast<int>(rng.next_below(size / 3));
    const int px = static_cast<int>(rng.next_below(std::max(1, size - pw)));
    const int py = static_cast<int>(rng.next_below(std::max(1, size - ph)));
    const auto rgb = detail::hsv_to_rgb(rng.uniform(0.0, 360.0),
                                        rng.uniform(0.2, 0.7),
                                        rng.uniform(0.3, 0.8));
    for (int y = py; y < py + ph && y < size; ++y)
      for (int x = px; x < px + pw && x < size; ++x)
        for (int c = 0; c < 3; ++c)
          img.at(y, x, c) = detail::to_u8(rgb[c]);
  }

  const double cx = size * (0.5 + rng.uniform(-0.12, 0.12));
  const double cy = size * (0.5 + rng.uniform(-0.12, 0.12));
  const double ax = size * rng.uniform(0.22, 0.38);
  const double ay = size * rng.uniform(0.18, 0.34);
  const double angle = rng.uniform(0.0, M_PI);
  const double phase = rng.uniform(0.0, 2.0 * M_PI);
  const double ca = std::cos(angle), sa = std::sin(angle);

  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double u = (dx * ca + dy * sa) / ax;
      const double v = (-dx * sa + dy * ca) / ay;
      if (u * u + v * v <= 1.0) {
        const double stripe =
            0.12 * std::sin(stripe_freq * 2.0 * M_PI * u + phase);
        const auto rgb = detail::hsv_to_rgb(hue_deg, saturation,
                                            std::clamp(value + stripe, 0.05, 1.0));
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = detail::to_u8(rgb[c]);
      }
    }
  }
  image::save_ppm(img, path);
}

struct ToysetConfig {
  int n_classes = 10;
  int per_class = 60;
  int image_size = 64;
  std::uint64_t seed = 0;
  double hue_sigma = 14.0;       // within-class hue jitter, degrees
  double value_jitter = 0.18;    // brightness spread
  int clutter_patches = 3;       // background clutter (field style)
  // classes are split round-robin between two crops so crop-based splits
  // can carve out disjoint meta-train/meta-test sets
  std::string crop_a = "basecrop";
  std::string crop_b = "novelcrop";
  std::string name = "toyset";
};

// Writes PPM images plus a manifest file <dir>/<name>.manifest.
inline data::DatasetManifest generate_toyset(const fs::path& dir,
                                             const ToysetConfig& cfg) {
  fs::create_directories(dir);
  data::DatasetManifest m;
  m.name = cfg.name;
  for (int c = 0; c < cfg.n_classes; ++c) {
    const double hue = 360.0 * c / cfg.n_classes;
    const double stripe_freq = 2.0 + (c % 4);
    const std::string label =
        "toy_class_" + std::string(c < 10 ? "0" : "") + std::to_string(c);
    const std::string crop = (c % 2 == 0) ? cfg.crop_a : cfg.crop_b;
    for (int i = 0; i < cfg.per_class; ++i) {
      Rng rng(hash_combine(hash_str(cfg.seed, label),
                           static_cast<std::uint64_t>(i)));
      const std::string id = label + "_" + std::to_string(i);
      const fs::path img_path = dir / (id + ".ppm");
      write_blob_image(img_path.string(), cfg.image_size,
                       hue + rng.normal(0.0, cfg.hue_sigma),
                       rng.uniform(0.55, 0.95),
                       std::clamp(0.62 + rng.normal(0.0, cfg.value_jitter),
                                  0.25, 1.0),
                       rng.next_u64(), stripe_freq, cfg.clutter_patches);
      data::ImageRecord rec;
      rec.image_id = id;
      rec.path = img_path.string();
      rec.class_label = label;
      rec.crop = crop;
      rec.background = cfg.clutter_patches > 0 ? data::Background::field
                                               : data::Background::lab;
      m.records.push_back(std::move(rec));
    }
  }
  data::finalize_manifest(m, /*verify_images=*/true);
  data::save_manifest(m, dir / (cfg.name + ".manifest"));
  return m;
}

inline data::DatasetManifest generate_toyset(const fs::path& dir, int n_classes,
                                             int per_class, int image_size,
                                             std::uint64_t seed) {
  ToysetConfig cfg;
  cfg.n_classes = n_classes;
  cfg.per_class = per_class;
  cfg.image_size = image_size;
  cfg.seed = seed;
  return generate_toyset(dir, cfg);
}

// Synthetic fused features: unit-separated Gaussian class centroids with
// isotropic noise, shaped like a three-backbone fusion layout. The
// nearest-centroid rule is a perfect oracle at small sigma.
struct GaussianTask {
  std::vector<fusion::FusedFeature> features;
  std::vector<int> labels;                  // parallel to features
  std::vector<std::string> class_names;
  fusion::Layout layout;
};

inline GaussianTask make_gaussian_task(int n_classes, int per_class,
                                       const std::vector<int>& slice_dims,
                                       double sigma, std::uint64_t seed) {
  GaussianTask task;
  int dim = 0;
  int offset = 0;
  const char* names[] = {"mnv2", "mnv3_small", "mnv3_large"};
  for (std::size_t i = 0; i < slice_dims.size(); ++i) {
    fusion::LayoutSlice s;
    s.backbone_name = i < 3 ? names[i] : ("slice" + std::to_string(i));
    s.offset = offset;
    s.length = slice_dims[i];
    offset += s.length;
    dim += s.length;
    task.layout.push_back(std::move(s));
  }
  if (n_classes > dim)
    throw ConfigError("need dim >= n_classes for unit-separated centroids");
  Rng rng(seed);
  // centroid c = one-hot(c)/sqrt(2): pairwise distances are exactly 1
  const double scale = 1.0 / std::sqrt(2.0);
  for (int c = 0; c < n_classes; ++c) {
    task.class_names.push_back("g" + std::to_string(c));
    for (int i = 0; i < per_class; ++i) {
      fusion::FusedFeature f;
      f.layout = task.layout;
      f.vector.assign(dim, 0.0);
      f.vector[c] = scale;
      for (int d = 0; d < dim; ++d) f.vector[d] += rng.normal(0.0, sigma);
      task.features.push_back(std::move(f));
      task.labels.push_back(c);
    }
  }
  return task;
}

// Nearest-centroid oracle over a labeled support set.
inline int nearest_centroid_predict(
    const std::vector<const fusion::FusedFeature*>& support,
    const std::vector<int>& support_labels, int n_classes,
    const fusion::FusedFeature& query) {
  const int dim = query.dim();
  std::vector<std::vector<double>> centroids(
      n_classes, std::vector<double>(dim, 0.0));
  std::vector<int> counts(n_classes, 0);
  for (std::size_t i = 0; i < support.size(); ++i) {
    for (int d = 0; d < dim; ++d)
      centroids[support_labels[i]][d] += support[i]->vector[d];
    ++counts[support_labels[i]];
  }
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int c = 0; c < n_classes; ++c) {
    double dist = 0.0;
    for (int d = 0; d < dim; ++d) {
      const double diff = query.vector[d] - centroids[c][d] / counts[c];
      dist += diff * diff;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = c;
    }
  }
  return best;
}

}  // namespace leaffew::toy

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

#include <array>
#include <atomic>
#include <cmath>
#include <cstring>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "leaffew/backbone/arch.hpp"
#include "leaffew/core/io.hpp"
#include "leaffew/data/manifest.hpp"
#include "leaffew/image/ppm.hpp"

namespace leaffew::backbone {

enum class AdaptationTag { imagenet_only, domain_adapted };

inline std::string to_string(AdaptationTag t) {
  return t == AdaptationTag::imagenet_only ? "imagenet_only" : "domain_adapted";
}

inline AdaptationTag adaptation_from_string(const std::string& s) {
  if (s == "imagenet_only") return AdaptationTag::imagenet_only;
  if (s == "domain_adapted") return AdaptationTag::domain_adapted;
  throw ConfigError("unknown adaptation tag '" + s + "'");
}

/// A fine-tuned (or pristine) backbone artifact. The classification head is
/// kept in the weights file but extraction never runs it.
struct AdaptedBackbone {
  BackboneName name = BackboneName::mnv2;
  fs::path weights_ref;
  AdaptationTag adaptation_tag = AdaptationTag::imagenet_only;
  int train_class_count = 0;
};

// Input pipeline constants. Resize shorter side, center-crop, then the
// normalization of the pretraining recipe. Recorded in every cache header
// so a mismatch is detectable downstream.
struct PreprocessSpec {
  int resize_side = 256;
  int crop = 224;
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> stddev{0.229, 0.224, 0.225};

  nlohmann::json to_json() const {
    return {{"resize_side", resize_side},
            {"crop", crop},
            {"mean", mean},
            {"stddev", stddev}};
  }
};

template <class S>
nn::Tensor<S> preprocess_image(const image::Image& img,
                               const PreprocessSpec& prep) {
  image::Image resized = image::resize_shorter_side(img, prep.resize_side);
  image::Image cropped = image::center_crop(resized, prep.crop);
  nn::Tensor<S> x(1, 3, prep.crop, prep.crop);
  x.data = image::normalize_chw<S>(cropped, prep.mean, prep.stddev);
  return x;
}

// Deterministic in inference mode: eval batch-norm, no dropout, one image
// per forward pass.
template <class S>
std::vector<float> extract_embedding(Network<S>& net,
                                     const data::ImageRecord& record,
                                     const PreprocessSpec& prep) {
  image::Image img = image::load_ppm(record.path);
  nn::Tensor<S> x = preprocess_image<S>(img, prep);
  nn::Tensor<S> e = net.embed(x, /*train=*/false);
  std::vector<float> out(e.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(e.data[i]);
    if (!std::isfinite(out[i]))
      throw ExtractionError("non-finite activation for image " +
                            record.image_id);
  }
  return out;
}

/// Persisted per-backbone embeddings keyed by image id; the unit of reuse
/// across episode repetitions. File layout: one UTF-8 JSON header line, then
/// a little-endian float32 matrix in image_id-sorted row order. A sidecar
/// `.ids` file lists the row ids in order.
struct FeatureCache {
  std::string dataset_name;
  std::string backbone_name;
  AdaptationTag adaptation_tag = AdaptationTag::imagenet_only;
  int dim = 0;
  bool complete = false;
  std::vector<std::string> ids;              // sorted
  std::map<std::string, std::size_t> index;  // image_id -> row
  std::vector<float> matrix;                 // ids.size() x dim
  nlohmann::json header;

  const float* row(const std::string& image_id) const {
    auto it = index.find(image_id);
    if (it == index.end())
      throw ExtractionError("feature cache has no entry for " + image_id);
    return matrix.data() + it->second * static_cast<std::size_t>(dim);
  }

  std::vector<double> vector_of(const std::string& image_id) const {
    const float* r = row(image_id);
    return std::vector<double>(r, r + dim);
  }
};

inline fs::path cache_file_name(const fs::path& dir, const std::string& dataset,
                                const std::string& backbone,
                                AdaptationTag tag, int resolution) {
  return dir / ("features_" + dataset + "_" + backbone + "_" + to_string(tag) +
                "_" + std::to_string(resolution) + ".lfc");
}

inline void save_feature_cache(const FeatureCache& cache, const fs::path& path) {
  nlohmann::json header = cache.header;
  header["format"] = "leaffew-feature-cache-v1";
  header["dataset"] = cache.dataset_name;
  header["backbone"] = cache.backbone_name;
  header["adaptation_tag"] = to_string(cache.adaptation_tag);
  header["dim"] = cache.dim;
  header["count"] = cache.ids.size();
  header["conventions"] = {{"size_mb", "f32_parameter_bytes / 2^20"},
                           {"gflops", "multiply_accumulates x 1e-9"}};
  std::string out = header.dump();
  out += '\n';
  out.append(reinterpret_cast<const char*>(cache.matrix.data()),
             cache.matrix.size() * sizeof(float));
  // ids sidecar first, payload last; the .partial never becomes the cache
  // unless every byte landed
  std::string ids_text;
  for (const auto& id : cache.ids) ids_text += id + "\n";
  write_file_atomic(path.string() + ".ids", ids_text);
  const fs::path partial = path.string() + ".partial";
  {
    std::ofstream f(partial, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write cache " + partial.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short cache write " + partial.string());
  }
  fs::rename(partial, path);
}

inline FeatureCache load_feature_cache(const fs::path& path) {
  if (!fs::exists(path))
    throw IoError("feature cache not found: " + path.string());
  const std::string text = read_file(path);
  const std::size_t eol = text.find('\n');
  if (eol == std::string::npos)
    throw IoError("corrupt feature cache " + path.string());
  FeatureCache cache;
  cache.header = nlohmann::json::parse(text.substr(0, eol));
  if (cache.header.value("format", "") != "leaffew-feature-cache-v1")
    throw IoError("unrecognized cache format in " + path.string());
  cache.dataset_name = cache.header.value("dataset", "");
  cache.backbone_name = cache.header.value("backbone", "");
  cache.adaptation_tag =
      adaptation_from_string(cache.header.value("adaptation_tag", ""));
  cache.dim = cache.header.value("dim", 0);
  const std::size_t count = cache.header.value("count", std::size_t{0});
  const std::string ids_text = read_file(path.string() + ".ids");
  std::size_t pos = 0;
  while (pos < ids_text.size()) {
    std::size_t next = ids_text.find('\n', pos);
    if (next == std::string::npos) next = ids_text.size();
    if (next > pos) cache.ids.push_back(ids_text.substr(pos, next - pos));
    pos = next + 1;
  }
  if (cache.ids.size() != count)
    throw IoError("cache id sidecar disagrees with header count");
  const std::size_t expected = count * static_cast<std::size_t>(cache.dim);
  if (text.size() - eol - 1 != expected * sizeof(float))
    throw IoError("cache payload size mismatch in " + path.string());
  cache.matrix.resize(expected);
  std::memcpy(cache.matrix.data(), text.data() + eol + 1,
              expected * sizeof(float));
  for (std::size_t i = 0; i < cache.ids.size(); ++i)
    cache.index[cache.ids[i]] = i;
  cache.complete = true;
  for (float v : cache.matrix)
    if (!std::isfinite(v))
      throw IoError("non-finite value in cache " + path.string());
  return cache;
}

// One entry per manifest record, rows in image_id-sorted order. Rebuilding
// from identical inputs reproduces the payload byte for byte. Extraction
// runs in parallel over images; rows are written to disjoint slots.
template <class S>
FeatureCache build_feature_cache(Network<S>& net,
                                 const AdaptedBackbone& artifact,
                                 const data::DatasetManifest& manifest,
                                 const PreprocessSpec& prep,
                                 const fs::path& out_path, int n_threads = 0) {
  FeatureCache cache;
  cache.dataset_name = manifest.name;
  cache.backbone_name = to_string(artifact.name);
  cache.adaptation_tag = artifact.adaptation_tag;
  cache.dim = net.embedding_dim;
  cache.header["preprocessing"] = prep.to_json();
  cache.header["weights_ref"] = artifact.weights_ref.string();
  for (const auto& r : manifest.records) cache.ids.push_back(r.image_id);
  std::sort(cache.ids.begin(), cache.ids.end());
  cache.matrix.assign(cache.ids.size() * static_cast<std::size_t>(cache.dim),
                      0.0f);

  if (n_threads <= 0)
    n_threads = std::max(1u, std::thread::hardware_concurrency());
  std::atomic<std::size_t> cursor{0};
  std::vector<std::string> errors(cache.ids.size());
  // layers cache activations, so every worker forwards through its own clone
  auto worker = [&](Network<S>* worker_net) {
    while (true) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= cache.ids.size()) break;
      try {
        const auto& rec = manifest.by_id(cache.ids[i]);
        const std::vector<float> e = extract_embedding(*worker_net, rec, prep);
        std::memcpy(cache.matrix.data() + i * static_cast<std::size_t>(cache.dim),
                    e.data(), e.size() * sizeof(float));
      } catch (const std::exception& ex) {
        errors[i] = ex.what();
      }
    }
  };
  std::vector<Network<S>> clones;
  clones.reserve(n_threads - 1);
  for (int t = 1; t < n_threads; ++t) clones.push_back(clone_network(net));
  std::vector<std::thread> threads;
  for (int t = 1; t < n_threads; ++t)
    threads.emplace_back(worker, &clones[t - 1]);
  worker(&net);
  for (auto& t : threads) t.join();

  std::string failed;
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty()) failed += " " + cache.ids[i];
  if (!failed.empty())
    throw ExtractionError("extraction failed for image ids:" + failed);

  for (std::size_t i = 0; i < cache.ids.size(); ++i)
    cache.index[cache.ids[i]] = i;
  cache.complete = true;
  save_feature_cache(cache, out_path);
  return cache;
}

}  // namespace leaffew::backbone

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
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "leaffew/core/error.hpp"

namespace leaffew::fusion {

struct LayoutSlice {
  std::string backbone_name;
  int offset = 0;
  int length = 0;
};

using Layout = std::vector<LayoutSlice>;

/// Ordered concatenation of the per-backbone embeddings. Slicing by layout
/// recovers each constituent exactly; no value is modified.
struct FusedFeature {
  std::vector<double> vector;
  Layout layout;

  int dim() const { return static_cast<int>(vector.size()); }

  std::vector<double> slice(const std::string& backbone_name) const {
    for (const auto& s : layout) {
      if (s.backbone_name == backbone_name)
        return {vector.begin() + s.offset,
                vector.begin() + s.offset + s.length};
    }
    throw FusionError("no slice for backbone " + backbone_name);
  }
};

struct NamedEmbedding {
  std::string backbone_name;
  std::vector<double> values;
};

// Concatenation order is the caller's argument order and is recorded in the
// layout; the pipeline always passes (mnv2, mnv3_small, mnv3_large).
// Optional per-slice L2 normalization is off by default.
inline FusedFeature fuse(const std::vector<NamedEmbedding>& embeddings,
                         bool l2_normalize_slices = false) {
  if (embeddings.empty()) throw FusionError("nothing to fuse");
  FusedFeature f;
  int offset = 0;
  for (const auto& e : embeddings) {
    if (e.values.empty())
      throw FusionError("empty embedding from backbone " + e.backbone_name);
    LayoutSlice s;
    s.backbone_name = e.backbone_name;
    s.offset = offset;
    s.length = static_cast<int>(e.values.size());
    double norm = 1.0;
    if (l2_normalize_slices) {
      double ss = 0.0;
      for (double v : e.values) ss += v * v;
      norm = ss > 0.0 ? std::sqrt(ss) : 1.0;
    }
    for (double v : e.values) f.vector.push_back(v / norm);
    offset += s.length;
    f.layout.push_back(std::move(s));
  }
  return f;
}

// Dims must match the registered backbone widths before fusing.
inline void check_embedding_dims(
    const std::vector<NamedEmbedding>& embeddings,
    const std::vector<std::pair<std::string, int>>& expected) {
  if (embeddings.size() != expected.size())
    throw FusionError("expected " + std::to_string(expected.size()) +
                      " embeddings, got " + std::to_string(embeddings.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (embeddings[i].backbone_name != expected[i].first)
      throw FusionError("embedding order mismatch: expected " +
                        expected[i].first + ", got " +
                        embeddings[i].backbone_name);
    if (static_cast<int>(embeddings[i].values.size()) != expected[i].second)
      throw FusionError("dimension mismatch for backbone " +
                        expected[i].first + ": expected " +
                        std::to_string(expected[i].second) + ", got " +
                        std::to_string(embeddings[i].values.size()));
  }
}

// Checks an incoming fused vector against the layout the head was built for.
inline void check_layout(const FusedFeature& f, const Layout& expected) {
  if (f.layout.size() != expected.size())
    throw FusionError("fusion layout mismatch: slice count differs");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& a = f.layout[i];
    const auto& b = expected[i];
    if (a.backbone_name != b.backbone_name || a.offset != b.offset ||
        a.length != b.length)
      throw FusionError("fusion layout mismatch at slice " + b.backbone_name);
  }
}

enum class SequenceMode { per_backbone, chunked };

inline std::string to_string(SequenceMode m) {
  return m == SequenceMode::per_backbone ? "per_backbone" : "chunked";
}

inline SequenceMode sequence_mode_from_string(const std::string& s) {
  if (s == "per_backbone") return SequenceMode::per_backbone;
  if (s == "chunked") return SequenceMode::chunked;
  throw ConfigError("unknown sequence mode '" + s + "'");
}

/// Token-sequence form of a fused vector for the recurrent/attention heads.
/// per_backbone: one token per extractor via an affine projection (the
/// projection weights live in the head and are trained with it).
/// chunked: fixed-width chunks with zero padding on the last one.
struct SequenceView {
  int tokens = 0;
  int token_dim = 0;
  SequenceMode mode = SequenceMode::per_backbone;
  std::vector<double> data;  // tokens x token_dim, row-major

  double* row(int t) { return data.data() + static_cast<std::size_t>(t) * token_dim; }
  const double* row(int t) const {
    return data.data() + static_cast<std::size_t>(t) * token_dim;
  }
};

inline int chunk_count(int fused_dim, int d_tok) {
  return (fused_dim + d_tok - 1) / d_tok;
}

// Chunked tokenization. Pure reshape+pad; de_chunk inverts it on the
// unpadded prefix.
inline SequenceView to_sequence_chunked(const FusedFeature& f, int d_tok) {
  if (d_tok <= 0) throw FusionError("d_tok must be positive");
  SequenceView v;
  v.mode = SequenceMode::chunked;
  v.token_dim = d_tok;
  v.tokens = chunk_count(f.dim(), d_tok);
  v.data.assign(static_cast<std::size_t>(v.tokens) * d_tok, 0.0);
  std::copy(f.vector.begin(), f.vector.end(), v.data.begin());
  return v;
}

inline std::vector<double> de_chunk(const SequenceView& v, int fused_dim) {
  if (v.mode != SequenceMode::chunked)
    throw FusionError("de_chunk applies to chunked views only");
  if (fused_dim > v.tokens * v.token_dim)
    throw FusionError("fused_dim exceeds sequence capacity");
  return {v.data.begin(), v.data.begin() + fused_dim};
}

inline nlohmann::json layout_to_json(const Layout& layout) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : layout)
    arr.push_back({{"backbone", s.backbone_name},
                   {"offset", s.offset},
                   {"length", s.length}});
  return arr;
}

inline Layout layout_from_json(const nlohmann::json& j) {
  Layout out;
  for (const auto& e : j) {
    LayoutSlice s;
    s.backbone_name = e.at("backbone").get<std::string>();
    s.offset = e.at("offset").get<int>();
    s.length = e.at("length").get<int>();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace leaffew::fusion

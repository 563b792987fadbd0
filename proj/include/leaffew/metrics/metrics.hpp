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
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "leaffew/core/error.hpp"

namespace leaffew::metrics {

// Rows are true labels, columns are predicted labels.
struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<std::int64_t>> counts;

  std::int64_t total() const {
    std::int64_t t = 0;
    for (const auto& row : counts)
      for (auto c : row) t += c;
    return t;
  }

  std::int64_t trace() const {
    std::int64_t t = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
    return t;
  }

  std::int64_t row_sum(std::size_t r) const {
    std::int64_t t = 0;
    for (auto c : counts[r]) t += c;
    return t;
  }

  std::int64_t col_sum(std::size_t c) const {
    std::int64_t t = 0;
    for (const auto& row : counts) t += row[c];
    return t;
  }
};

struct ClassMetrics {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
  bool zero_division = false;  // set when precision or recall hit a 0/0
};

struct EpisodeResult {
  int rep_index = 0;
  double accuracy = 0.0;  // trace/total, the multiclass form of (TP+TN)/all
  ConfusionMatrix confusion;
  std::vector<ClassMetrics> per_class;
};

// One scored (truth, prediction) pair per query item, matched by id.
struct ScoredItem {
  std::string item_id;
  std::string truth;
  std::string predicted;
};

inline std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm) {
  const std::size_t n = cm.labels.size();
  std::vector<ClassMetrics> out(n);
  for (std::size_t c = 0; c < n; ++c) {
    ClassMetrics& m = out[c];
    m.label = cm.labels[c];
    const std::int64_t diag = cm.counts[c][c];
    const std::int64_t col = cm.col_sum(c);
    const std::int64_t row = cm.row_sum(c);
    m.support = row;
    if (col == 0) {
      m.precision = 0.0;
      m.zero_division = true;
    } else {
      m.precision = static_cast<double>(diag) / static_cast<double>(col);
    }
    if (row == 0) {
      m.recall = 0.0;
      m.zero_division = true;
    } else {
      m.recall = static_cast<double>(diag) / static_cast<double>(row);
    }
    const double pr = m.precision + m.recall;
    m.f1 = pr > 0.0 ? 2.0 * m.precision * m.recall / pr : 0.0;
  }
  return out;
}

inline EpisodeResult score_episode(const std::vector<ScoredItem>& items,
                                   const std::vector<std::string>& labels,
                                   int rep_index = 0) {
  if (items.empty()) throw ScoringError("no items to score");
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < labels.size(); ++i) index[labels[i]] = i;

  EpisodeResult r;
  r.rep_index = rep_index;
  r.confusion.labels = labels;
  r.confusion.counts.assign(labels.size(),
                            std::vector<std::int64_t>(labels.size(), 0));
  std::map<std::string, int> seen;
  for (const auto& it : items) {
    if (++seen[it.item_id] > 1)
      throw ScoringError("duplicate prediction for item " + it.item_id);
    auto t = index.find(it.truth);
    auto p = index.find(it.predicted);
    if (t == index.end()) throw ScoringError("unknown true label " + it.truth);
    if (p == index.end())
      throw ScoringError("unknown predicted label " + it.predicted);
    ++r.confusion.counts[t->second][p->second];
  }
  r.accuracy = static_cast<double>(r.confusion.trace()) /
               static_cast<double>(r.confusion.total());
  r.per_class = per_class_metrics(r.confusion);
  return r;
}

enum class CiKind { normal, student_t };

struct Aggregate {
  double mean_accuracy_pct = 0.0;  // percent
  double ci95_pct = 0.0;           // half-width, percentage points
  int n_reps = 0;
  bool degenerate_ci = false;  // single repetition
  CiKind ci_kind = CiKind::normal;
};

// Mean over repetitions with a 95% interval half-width. Default is the
// normal approximation 1.96*s/sqrt(n) with the n-1 sample deviation;
// Student-t is available behind the flag.
inline Aggregate aggregate(const std::vector<double>& accuracies,
                           CiKind kind = CiKind::normal) {
  if (accuracies.empty()) throw ScoringError("aggregate of empty result list");
  Aggregate a;
  a.n_reps = static_cast<int>(accuracies.size());
  a.ci_kind = kind;
  double sum = 0.0;
  for (double v : accuracies) sum += v;
  const double mean = sum / static_cast<double>(a.n_reps);
  a.mean_accuracy_pct = 100.0 * mean;
  if (a.n_reps < 2) {
    a.ci95_pct = 0.0;
    a.degenerate_ci = true;
    return a;
  }
  double ss = 0.0;
  for (double v : accuracies) ss += (v - mean) * (v - mean);
  const double s = std::sqrt(ss / static_cast<double>(a.n_reps - 1));
  double mult = 1.96;
  if (kind == CiKind::student_t) {
    boost::math::students_t dist(static_cast<double>(a.n_reps - 1));
    mult = boost::math::quantile(dist, 0.975);
  }
  a.ci95_pct = 100.0 * mult * s / std::sqrt(static_cast<double>(a.n_reps));
  return a;
}

}  // namespace leaffew::metrics

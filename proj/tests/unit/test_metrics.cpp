#include <catch2/catch_amalgamated.hpp>

#include "leaffew/core/rng.hpp"
#include "leaffew/metrics/metrics.hpp"

using namespace leaffew;
using namespace leaffew::metrics;

namespace {

// Independent oracle: per-item comparison, no confusion matrix involved.
double oracle_accuracy(const std::vector<ScoredItem>& items) {
  std::int64_t ok = 0;
  for (const auto& it : items)
    if (it.truth == it.predicted) ++ok;
  return static_cast<double>(ok) / static_cast<double>(items.size());
}

std::vector<ScoredItem> random_items(Rng& rng, int n_classes, int n_items) {
  std::vector<std::string> labels;
  for (int c = 0; c < n_classes; ++c) labels.push_back("c" + std::to_string(c));
  std::vector<ScoredItem> items;
  for (int i = 0; i < n_items; ++i) {
    ScoredItem it;
    it.item_id = "q" + std::to_string(i);
    it.truth = labels[rng.next_below(n_classes)];
    it.predicted = labels[rng.next_below(n_classes)];
    items.push_back(std::move(it));
  }
  return items;
}

}  // namespace

TEST_CASE("binary accuracy matches the TP/TN formula") {
  // TP=3, TN=5, FP=1, FN=1 -> 8/10
  std::vector<ScoredItem> items;
  auto add = [&](const std::string& t, const std::string& p, int n) {
    for (int i = 0; i < n; ++i)
      items.push_back({"i" + std::to_string(items.size()), t, p});
  };
  add("pos", "pos", 3);
  add("neg", "neg", 5);
  add("neg", "pos", 1);
  add("pos", "neg", 1);
  auto r = score_episode(items, {"neg", "pos"});
  REQUIRE(r.accuracy == Catch::Approx(0.8).margin(1e-15));
}

TEST_CASE("all-correct episode gives accuracy one and a diagonal confusion") {
  std::vector<ScoredItem> items;
  for (int i = 0; i < 500; ++i) {
    const std::string c = "c" + std::to_string(i % 10);
    items.push_back({"q" + std::to_string(i), c, c});
  }
  std::vector<std::string> labels;
  for (int i = 0; i < 10; ++i) labels.push_back("c" + std::to_string(i));
  std::sort(labels.begin(), labels.end());
  auto r = score_episode(items, labels);
  REQUIRE(r.accuracy == 1.0);
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = 0; j < labels.size(); ++j)
      if (i != j) REQUIRE(r.confusion.counts[i][j] == 0);
}

TEST_CASE("three-class case with one off-diagonal error") {
  std::vector<ScoredItem> items;
  int id = 0;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 10; ++i)
      items.push_back({"q" + std::to_string(id++), "c" + std::to_string(c),
                       "c" + std::to_string(c)});
  items.push_back({"q_extra", "c0", "c1"});
  auto r = score_episode(items, {"c0", "c1", "c2"});
  REQUIRE(r.accuracy == Catch::Approx(30.0 / 31.0).margin(1e-15));
}

TEST_CASE("duplicate prediction is a scoring error") {
  std::vector<ScoredItem> items{{"a", "c0", "c0"}, {"a", "c0", "c1"}};
  REQUIRE_THROWS_AS(score_episode(items, {"c0", "c1"}), ScoringError);
}

TEST_CASE("per-class metrics: perfect diagonal") {
  ConfusionMatrix cm;
  cm.labels = {"a", "b"};
  cm.counts = {{4, 0}, {0, 6}};
  auto pc = per_class_metrics(cm);
  for (const auto& m : pc) {
    REQUIRE(m.precision == 1.0);
    REQUIRE(m.recall == 1.0);
    REQUIRE(m.f1 == 1.0);
  }
  REQUIRE(pc[0].support == 4);
  REQUIRE(pc[1].support == 6);
}

TEST_CASE("per-class metrics: never-predicted class flags zero division") {
  ConfusionMatrix cm;
  cm.labels = {"a", "b"};
  cm.counts = {{0, 3}, {0, 7}};  // column a empty
  auto pc = per_class_metrics(cm);
  REQUIRE(pc[0].precision == 0.0);
  REQUIRE(pc[0].zero_division);
  REQUIRE(pc[0].recall == 0.0);  // 0/3
  REQUIRE(pc[1].recall == 1.0);
}

TEST_CASE("per-class metrics: hand-computed 2x2 case") {
  ConfusionMatrix cm;
  cm.labels = {"a", "b"};
  cm.counts = {{8, 2}, {1, 9}};
  auto pc = per_class_metrics(cm);
  REQUIRE(pc[0].precision == Catch::Approx(8.0 / 9.0).margin(1e-15));
  REQUIRE(pc[0].recall == Catch::Approx(0.8).margin(1e-15));
  const double f1 = 2.0 * (8.0 / 9.0 * 0.8) / (8.0 / 9.0 + 0.8);
  REQUIRE(pc[0].f1 == Catch::Approx(f1).margin(1e-15));
}

TEST_CASE("score_episode equals the per-item oracle on random instances") {
  Rng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    const int n_classes = 2 + static_cast<int>(rng.next_below(8));
    const int n_items = 10 + static_cast<int>(rng.next_below(200));
    auto items = random_items(rng, n_classes, n_items);
    std::vector<std::string> labels;
    for (int c = 0; c < n_classes; ++c)
      labels.push_back("c" + std::to_string(c));
    std::sort(labels.begin(), labels.end());
    auto r = score_episode(items, labels);
    REQUIRE(r.accuracy == oracle_accuracy(items));
    // support-weighted recall reproduces accuracy
    std::int64_t weighted = 0;
    for (std::size_t c = 0; c < labels.size(); ++c)
      weighted += r.confusion.counts[c][c];
    REQUIRE(r.accuracy ==
            static_cast<double>(weighted) / static_cast<double>(n_items));
  }
}

TEST_CASE("aggregate reproduces the documented mean and ci95") {
  auto a = aggregate({0.8, 0.9, 1.0});
  REQUIRE(a.mean_accuracy_pct == Catch::Approx(90.0).margin(1e-12));
  const double expected = 100.0 * 1.96 * 0.1 / std::sqrt(3.0);
  REQUIRE(a.ci95_pct == Catch::Approx(expected).margin(1e-9));
  REQUIRE_FALSE(a.degenerate_ci);
}

TEST_CASE("aggregate of identical accuracies has zero ci95") {
  auto a = aggregate({0.5, 0.5, 0.5, 0.5});
  REQUIRE(a.ci95_pct == 0.0);
}

TEST_CASE("single repetition is degenerate") {
  auto a = aggregate({0.7});
  REQUIRE(a.ci95_pct == 0.0);
  REQUIRE(a.degenerate_ci);
}

TEST_CASE("aggregate mean is permutation invariant") {
  std::vector<double> accs{0.1, 0.5, 0.9, 0.3, 0.7};
  auto a1 = aggregate(accs);
  std::reverse(accs.begin(), accs.end());
  auto a2 = aggregate(accs);
  REQUIRE(a1.mean_accuracy_pct == Catch::Approx(a2.mean_accuracy_pct).margin(1e-12));
  REQUIRE(a1.ci95_pct == Catch::Approx(a2.ci95_pct).margin(1e-12));
}

TEST_CASE("student-t interval is wider than normal for small n") {
  std::vector<double> accs{0.8, 0.85, 0.9, 0.95};
  auto n = aggregate(accs, CiKind::normal);
  auto t = aggregate(accs, CiKind::student_t);
  REQUIRE(t.ci95_pct > n.ci95_pct);
}

TEST_CASE("ci95 shrinks like one over sqrt n") {
  // i.i.d. synthetic accuracy draws; ratio of half-widths ~ sqrt(ratio of n)
  Rng rng(99);
  auto draw = [&](int n) {
    std::vector<double> accs;
    for (int i = 0; i < n; ++i) accs.push_back(0.8 + 0.05 * rng.normal());
    return aggregate(accs).ci95_pct;
  };
  const double c4 = draw(64);
  const double c64 = draw(6400);
  const double ratio = c4 / c64;
  REQUIRE(ratio > 5.0);  // ideal 10
  REQUIRE(ratio < 20.0);
}

#include <catch2/catch_amalgamated.hpp>

#include "leaffew/heads/head.hpp"
#include "leaffew/toy/toyset.hpp"

using namespace leaffew;
using namespace leaffew::heads;

namespace {

InputLayout tiny_layout(int d_tok = 6) {
  InputLayout layout;
  layout.fusion_layout = {{"mnv2", 0, 5}, {"mnv3_small", 5, 3},
                          {"mnv3_large", 8, 4}};
  layout.mode = fusion::SequenceMode::per_backbone;
  layout.d_tok = d_tok;
  return layout;
}

HeadConfig tiny_config(HeadKind kind, std::uint64_t seed, int d_tok = 6) {
  HeadConfig cfg;
  cfg.kind = kind;
  cfg.hidden_dim = 6;
  cfg.attn_heads = 2;
  cfg.dropout = 0.0;  // gradient checks need a deterministic loss
  cfg.epochs = 50;
  cfg.seed = seed;
  cfg.d_tok = d_tok;
  return cfg;
}

std::vector<fusion::FusedFeature> random_features(Rng& rng, int count,
                                                  const fusion::Layout& lay) {
  int dim = 0;
  for (const auto& s : lay) dim += s.length;
  std::vector<fusion::FusedFeature> out;
  for (int i = 0; i < count; ++i) {
    fusion::FusedFeature f;
    f.layout = lay;
    for (int d = 0; d < dim; ++d) f.vector.push_back(rng.normal());
    out.push_back(std::move(f));
  }
  return out;
}

// relative error with an absolute floor, per the gradient-check contract
double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

TEST_CASE("head gradients match central finite differences for every kind") {
  const HeadKind kinds[] = {HeadKind::dense,     HeadKind::lstm,
                            HeadKind::bilstm,    HeadKind::self_attn,
                            HeadKind::bilstm_self_attn, HeadKind::bilstm_mha};
  Rng rng(20260809);
  auto layout = tiny_layout();
  const int n_classes = 3;
  for (HeadKind kind : kinds) {
    for (int draw = 0; draw < 5; ++draw) {
      EpisodicHead head(tiny_config(kind, rng.next_u64()), n_classes, layout,
                        {"a", "b", "c"});
      auto feats = random_features(rng, 6, layout.fusion_layout);
      std::vector<const fusion::FusedFeature*> batch;
      for (auto& f : feats) batch.push_back(&f);
      std::vector<int> labels;
      for (int i = 0; i < 6; ++i)
        labels.push_back(static_cast<int>(rng.next_below(n_classes)));

      for (auto* p : head.params()) p->grad.setZero();
      Mat logits = head.forward(batch, /*train=*/true);
      Mat dlogits;
      EpisodicHead::softmax_ce(logits, labels, &dlogits);
      head.backward(dlogits);

      const double eps = 1e-5;
      for (auto* p : head.params()) {
        for (int trial = 0; trial < 4; ++trial) {
          const Eigen::Index r = rng.next_below(p->value.rows());
          const Eigen::Index c = rng.next_below(p->value.cols());
          const double keep = p->value(r, c);
          p->value(r, c) = keep + eps;
          const double lp = EpisodicHead::softmax_ce(
              head.forward(batch, true), labels, nullptr);
          p->value(r, c) = keep - eps;
          const double lm = EpisodicHead::softmax_ce(
              head.forward(batch, true), labels, nullptr);
          p->value(r, c) = keep;
          const double fd = (lp - lm) / (2 * eps);
          INFO(to_string(kind) << " param " << p->name << " (" << r << ","
                               << c << ")");
          REQUIRE(rel_err(p->grad(r, c), fd) <= 1e-4);
        }
      }
    }
  }
}

TEST_CASE("softmax outputs are normalized for every head kind") {
  Rng rng(5);
  auto layout = tiny_layout();
  for (HeadKind kind :
       {HeadKind::dense, HeadKind::lstm, HeadKind::bilstm, HeadKind::self_attn,
        HeadKind::bilstm_self_attn, HeadKind::bilstm_mha}) {
    auto cfg = tiny_config(kind, 77);
    cfg.epochs = 2;
    EpisodicHead head(cfg, 3, layout, {"a", "b", "c"});
    auto feats = random_features(rng, 9, layout.fusion_layout);
    std::vector<std::pair<const fusion::FusedFeature*, int>> support;
    for (int i = 0; i < 9; ++i) support.emplace_back(&feats[i], i % 3);
    head.train_episode(support);
    auto preds = head.predict({{&feats[0], "q0"}, {&feats[1], "q1"}});
    for (const auto& p : preds) {
      double sum = 0.0;
      for (double v : p.probs) {
        REQUIRE(v >= 0.0);
        sum += v;
      }
      REQUIRE(std::abs(sum - 1.0) < 1e-5);
    }
  }
}

TEST_CASE("training is deterministic given the seed") {
  Rng rng(6);
  auto layout = tiny_layout();
  auto feats = random_features(rng, 6, layout.fusion_layout);
  std::vector<std::pair<const fusion::FusedFeature*, int>> support;
  for (int i = 0; i < 6; ++i) support.emplace_back(&feats[i], i % 2);

  auto run = [&]() {
    auto cfg = tiny_config(HeadKind::bilstm_self_attn, 123);
    cfg.dropout = 0.2;
    cfg.epochs = 8;
    EpisodicHead head(cfg, 2, layout, {"a", "b"});
    head.train_episode(support);
    return std::make_pair(head.train_loss_log(),
                          head.predict({{&feats[0], "q"}})[0].probs);
  };
  auto [log1, probs1] = run();
  auto [log2, probs2] = run();
  REQUIRE(log1 == log2);
  REQUIRE(probs1 == probs2);
}

TEST_CASE("smoothed train log is monotone") {
  Rng rng(17);
  auto layout = tiny_layout();
  auto feats = random_features(rng, 8, layout.fusion_layout);
  std::vector<std::pair<const fusion::FusedFeature*, int>> support;
  for (int i = 0; i < 8; ++i) support.emplace_back(&feats[i], i % 2);
  auto cfg = tiny_config(HeadKind::lstm, 9);
  cfg.epochs = 12;
  EpisodicHead head(cfg, 2, layout, {"a", "b"});
  head.train_episode(support);
  const auto& sm = head.train_loss_smoothed();
  REQUIRE_FALSE(sm.empty());
  for (std::size_t i = 1; i < sm.size(); ++i) REQUIRE(sm[i] <= sm[i - 1]);
}

TEST_CASE("protocol violations are rejected") {
  auto layout = tiny_layout();
  auto cfg = tiny_config(HeadKind::dense, 1);
  EpisodicHead head(cfg, 3, layout, {"a", "b", "c"});
  Rng rng(8);
  auto feats = random_features(rng, 4, layout.fusion_layout);
  // class c missing from support
  std::vector<std::pair<const fusion::FusedFeature*, int>> support{
      {&feats[0], 0}, {&feats[1], 1}};
  REQUIRE_THROWS_AS(head.train_episode(support), ProtocolError);
  REQUIRE_THROWS_AS(head.train_episode({}), ProtocolError);
}

TEST_CASE("config invariants: epochs, dropout, divisibility") {
  auto layout = tiny_layout();
  auto cfg = tiny_config(HeadKind::dense, 1);
  cfg.epochs = 0;
  REQUIRE_THROWS_AS(EpisodicHead(cfg, 3, layout, {"a", "b", "c"}), ConfigError);
  cfg = tiny_config(HeadKind::dense, 1);
  cfg.dropout = 1.0;
  REQUIRE_THROWS_AS(EpisodicHead(cfg, 3, layout, {"a", "b", "c"}), ConfigError);

  // multi-head attention width: 2*hidden = 256; 3 does not divide it
  cfg = tiny_config(HeadKind::bilstm_mha, 1);
  cfg.hidden_dim = 128;
  cfg.attn_heads = 3;
  REQUIRE_THROWS_WITH(EpisodicHead(cfg, 3, layout, {"a", "b", "c"}),
                      Catch::Matchers::ContainsSubstring("256"));
  cfg.attn_heads = 4;
  REQUIRE_NOTHROW(EpisodicHead(cfg, 3, layout, {"a", "b", "c"}));
}

TEST_CASE("attention weights are a distribution over tokens") {
  auto layout = tiny_layout();
  Rng rng(10);
  for (HeadKind kind :
       {HeadKind::self_attn, HeadKind::bilstm_self_attn, HeadKind::bilstm_mha}) {
    auto cfg = tiny_config(kind, 3);
    cfg.epochs = 2;
    EpisodicHead head(cfg, 2, layout, {"a", "b"});
    auto feats = random_features(rng, 4, layout.fusion_layout);
    std::vector<std::pair<const fusion::FusedFeature*, int>> support{
        {&feats[0], 0}, {&feats[1], 1}, {&feats[2], 0}, {&feats[3], 1}};
    head.train_episode(support);
    auto w = head.attention_weights(feats[0]);
    REQUIRE(w.size() == 3);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      REQUIRE(w(i) >= 0.0);
      sum += w(i);
    }
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));
  }

  // zero tokens -> uniform weights by symmetry
  auto cfg = tiny_config(HeadKind::self_attn, 3);
  cfg.epochs = 1;
  EpisodicHead head(cfg, 2, layout, {"a", "b"});
  fusion::FusedFeature zero;
  zero.layout = layout.fusion_layout;
  zero.vector.assign(12, 0.0);
  Rng r2(11);
  auto feats = random_features(r2, 2, layout.fusion_layout);
  head.train_episode({{&feats[0], 0}, {&feats[1], 1}});
  auto w = head.attention_weights(zero);
  for (Eigen::Index i = 0; i < w.size(); ++i)
    REQUIRE(w(i) == Catch::Approx(1.0 / 3.0).margin(1e-12));

  // attention-free heads refuse
  auto dense_cfg = tiny_config(HeadKind::dense, 4);
  dense_cfg.epochs = 1;
  EpisodicHead dense_head(dense_cfg, 2, layout, {"a", "b"});
  REQUIRE_THROWS_AS(dense_head.attention_weights(zero), UnsupportedError);
}

TEST_CASE("argmax ties break toward the lowest class index") {
  // symmetric support: identical features for both classes makes the
  // posterior symmetric; the tie must resolve to class index 0
  auto layout = tiny_layout();
  auto cfg = tiny_config(HeadKind::dense, 5);
  cfg.epochs = 1;
  cfg.learning_rate = 0.0;  // keep the initial (symmetric-enough) state
  EpisodicHead head(cfg, 2, layout, {"first", "second"});
  fusion::FusedFeature f;
  f.layout = layout.fusion_layout;
  f.vector.assign(12, 0.0);
  head.train_episode({{&f, 0}, {&f, 1}});
  auto preds = head.predict({{&f, "q"}});
  // zero input, zero bias: logits identical -> lowest index wins
  REQUIRE(preds[0].argmax_label == "first");
}

TEST_CASE("layout mismatch is an inference error") {
  auto layout = tiny_layout();
  auto cfg = tiny_config(HeadKind::dense, 6);
  cfg.epochs = 1;
  EpisodicHead head(cfg, 2, layout, {"a", "b"});
  Rng rng(12);
  auto feats = random_features(rng, 2, layout.fusion_layout);
  head.train_episode({{&feats[0], 0}, {&feats[1], 1}});
  fusion::FusedFeature wrong;
  wrong.layout = {{"mnv2", 0, 4}, {"mnv3_small", 4, 3}, {"mnv3_large", 7, 4}};
  wrong.vector.assign(11, 0.0);
  REQUIRE_THROWS_AS(head.predict({{&wrong, "q"}}), FusionError);
}

TEST_CASE("chunked sequence mode trains and predicts") {
  InputLayout layout;
  layout.fusion_layout = {{"mnv2", 0, 5}, {"mnv3_small", 5, 3},
                          {"mnv3_large", 8, 4}};
  layout.mode = fusion::SequenceMode::chunked;
  layout.d_tok = 5;
  auto cfg = tiny_config(HeadKind::bilstm, 13, 5);
  cfg.seq_mode = fusion::SequenceMode::chunked;
  cfg.epochs = 5;
  EpisodicHead head(cfg, 2, layout, {"a", "b"});
  Rng rng(14);
  auto feats = random_features(rng, 6, layout.fusion_layout);
  std::vector<std::pair<const fusion::FusedFeature*, int>> support;
  for (int i = 0; i < 6; ++i) support.emplace_back(&feats[i], i % 2);
  head.train_episode(support);
  auto preds = head.predict({{&feats[0], "q"}});
  REQUIRE(preds[0].probs.size() == 2);
}

TEST_CASE("every head kind separates well-spaced gaussian classes") {
  // 10 unit-separated centroids at sigma 0.01; nearest centroid is perfect
  auto task = toy::make_gaussian_task(10, 6, {16, 8, 12}, 0.01, 321);
  InputLayout layout;
  layout.fusion_layout = task.layout;
  layout.d_tok = 16;

  // build support (1 per class) and a query block
  std::vector<std::pair<const fusion::FusedFeature*, int>> support;
  std::vector<std::pair<const fusion::FusedFeature*, std::string>> queries;
  std::vector<int> truth;
  for (int c = 0; c < 10; ++c) {
    for (int i = 0; i < 6; ++i) {
      const auto& f = task.features[c * 6 + i];
      if (i == 0) {
        support.emplace_back(&f, c);
      } else {
        queries.emplace_back(&f, "q" + std::to_string(c) + "_" +
                                     std::to_string(i));
        truth.push_back(c);
      }
    }
  }

  for (HeadKind kind : {HeadKind::dense, HeadKind::bilstm}) {
    auto cfg = tiny_config(kind, 55, 16);
    cfg.hidden_dim = 32;
    cfg.epochs = 120;
    cfg.learning_rate = 5e-3;
    EpisodicHead head(cfg, 10, layout, task.class_names);
    head.train_episode(support);
    auto preds = head.predict(queries);
    int correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
      if (preds[i].argmax_label == task.class_names[truth[i]]) ++correct;
    INFO(to_string(kind));
    REQUIRE(correct >= static_cast<int>(0.98 * preds.size()));
  }
}

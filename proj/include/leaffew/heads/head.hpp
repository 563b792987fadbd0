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

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "leaffew/core/error.hpp"
#include "leaffew/core/rng.hpp"
#include "leaffew/fusion/fusion.hpp"

namespace leaffew::heads {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

enum class HeadKind {
  dense,
  lstm,
  bilstm,
  self_attn,
  bilstm_self_attn,
  bilstm_mha
};

inline std::string to_string(HeadKind k) {
  switch (k) {
    case HeadKind::dense: return "dense";
    case HeadKind::lstm: return "lstm";
    case HeadKind::bilstm: return "bilstm";
    case HeadKind::self_attn: return "self_attn";
    case HeadKind::bilstm_self_attn: return "bilstm_self_attn";
    default: return "bilstm_mha";
  }
}

inline HeadKind head_kind_from_string(const std::string& s) {
  if (s == "dense") return HeadKind::dense;
  if (s == "lstm") return HeadKind::lstm;
  if (s == "bilstm") return HeadKind::bilstm;
  if (s == "self_attn") return HeadKind::self_attn;
  if (s == "bilstm_self_attn") return HeadKind::bilstm_self_attn;
  if (s == "bilstm_mha") return HeadKind::bilstm_mha;
  throw ConfigError("unknown head kind '" + s + "'");
}

inline bool has_attention(HeadKind k) {
  return k == HeadKind::self_attn || k == HeadKind::bilstm_self_attn ||
         k == HeadKind::bilstm_mha;
}

inline bool has_lstm(HeadKind k) {
  return k == HeadKind::lstm || k == HeadKind::bilstm ||
         k == HeadKind::bilstm_self_attn || k == HeadKind::bilstm_mha;
}

struct HeadConfig {
  HeadKind kind = HeadKind::bilstm;
  int hidden_dim = 256;
  int attn_heads = 4;  // multi-head attention only
  double dropout = 0.1;
  int epochs = 50;
  double learning_rate = 1e-3;
  int batch_size = 64;  // full support when the support fits
  std::uint64_t seed = 0;
  int early_stop_patience = 10;
  fusion::SequenceMode seq_mode = fusion::SequenceMode::per_backbone;
  int d_tok = 256;

  // attention width of the built head: token width for plain
  // self-attention, both directions' state for the recurrent heads
  int attention_width() const {
    return kind == HeadKind::self_attn ? hidden_dim : 2 * hidden_dim;
  }

  void validate() const {
    if (epochs < 1) throw ConfigError("head epochs must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0))
      throw ConfigError("head dropout must lie in [0,1)");
    if (hidden_dim <= 0) throw ConfigError("hidden_dim must be positive");
    if (d_tok <= 0) throw ConfigError("d_tok must be positive");
    if (kind == HeadKind::bilstm_mha) {
      if (attn_heads < 1) throw ConfigError("attn_heads must be >= 1");
      if (attention_width() % attn_heads != 0)
        throw ConfigError("attn_heads (" + std::to_string(attn_heads) +
                          ") must divide the attention width (" +
                          std::to_string(attention_width()) + ")");
    }
  }

  nlohmann::json to_json() const {
    return {{"kind", to_string(kind)},          {"hidden_dim", hidden_dim},
            {"attn_heads", attn_heads},         {"dropout", dropout},
            {"epochs", epochs},                 {"learning_rate", learning_rate},
            {"batch_size", batch_size},         {"seed", seed},
            {"early_stop_patience", early_stop_patience},
            {"seq_mode", fusion::to_string(seq_mode)},
            {"d_tok", d_tok}};
  }
};

struct InputLayout {
  fusion::Layout fusion_layout;
  fusion::SequenceMode mode = fusion::SequenceMode::per_backbone;
  int d_tok = 256;

  int fused_dim() const {
    int d = 0;
    for (const auto& s : fusion_layout) d += s.length;
    return d;
  }
  int token_count() const {
    if (mode == fusion::SequenceMode::per_backbone)
      return static_cast<int>(fusion_layout.size());
    return fusion::chunk_count(fused_dim(), d_tok);
  }
  int token_dim() const {
    return mode == fusion::SequenceMode::per_backbone ? d_tok : d_tok;
  }
};

struct HParam {
  std::string name;
  Mat value;
  Mat grad;
};

struct Prediction {
  std::string image_id;
  std::vector<double> probs;
  std::string argmax_label;
};

namespace detail {

inline void glorot(Mat& m, Rng& rng) {
  const double limit = std::sqrt(6.0 / (m.rows() + m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = rng.uniform(-limit, limit);
}

inline Mat sigmoid(const Mat& x) {
  return x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

// One direction of an LSTM over T tokens, batch-major (B x dt per step).
// Gate order inside the stacked weight is (i, f, g, o).
struct LstmDir {
  HParam wx;  // 4H x dt
  HParam wh;  // 4H x H
  HParam b;   // 4H x 1

  int hidden = 0;

  struct Cache {
    std::vector<Mat> x, i, f, g, o, c, tanh_c, h;  // per step, B x *
  };

  void init(const std::string& prefix, int dt, int h, Rng& rng) {
    hidden = h;
    wx.name = prefix + ".weight_ih";
    wx.value.resize(4 * h, dt);
    glorot(wx.value, rng);
    wh.name = prefix + ".weight_hh";
    wh.value.resize(4 * h, h);
    glorot(wh.value, rng);
    b.name = prefix + ".bias";
    b.value = Mat::Zero(4 * h, 1);
    b.value.block(h, 0, h, 1).setOnes();  // forget-gate bias 1
    wx.grad = Mat::Zero(wx.value.rows(), wx.value.cols());
    wh.grad = Mat::Zero(wh.value.rows(), wh.value.cols());
    b.grad = Mat::Zero(b.value.rows(), b.value.cols());
  }

  void collect(std::vector<HParam*>& out) {
    out.push_back(&wx);
    out.push_back(&wh);
    out.push_back(&b);
  }

  // tokens: per-step B x dt inputs in processing order
  std::vector<Mat> forward(const std::vector<Mat>& tokens, Cache& cc) const {
    const int T = static_cast<int>(tokens.size());
    const auto B = tokens[0].rows();
    const int H = hidden;
    Mat h_prev = Mat::Zero(B, H);
    Mat c_prev = Mat::Zero(B, H);
    cc = Cache{};
    std::vector<Mat> hs;
    for (int t = 0; t < T; ++t) {
      Mat a = tokens[t] * wx.value.transpose() + h_prev * wh.value.transpose();
      a.rowwise() += b.value.col(0).transpose();
      Mat i = sigmoid(a.leftCols(H));
      Mat f = sigmoid(a.middleCols(H, H));
      Mat g = a.middleCols(2 * H, H).array().tanh().matrix();
      Mat o = sigmoid(a.rightCols(H));
      Mat c = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
      Mat tc = c.array().tanh().matrix();
      Mat h = o.cwiseProduct(tc);
      cc.x.push_back(tokens[t]);
      cc.i.push_back(i);
      cc.f.push_back(f);
      cc.g.push_back(g);
      cc.o.push_back(o);
      cc.c.push_back(c);
      cc.tanh_c.push_back(tc);
      cc.h.push_back(h);
      h_prev = h;
      c_prev = c;
      hs.push_back(h);
    }
    return hs;
  }

  // dhs: upstream gradient on every step's hidden state (may be zero mats);
  // returns per-step gradients on the inputs.
  std::vector<Mat> backward(const std::vector<Mat>& dhs, const Cache& cc) {
    const int T = static_cast<int>(cc.h.size());
    const auto B = cc.h[0].rows();
    const int H = hidden;
    std::vector<Mat> dx(T);
    Mat dh_next = Mat::Zero(B, H);
    Mat dc_next = Mat::Zero(B, H);
    for (int t = T - 1; t >= 0; --t) {
      Mat dh = dhs[t] + dh_next;
      const Mat& i = cc.i[t];
      const Mat& f = cc.f[t];
      const Mat& g = cc.g[t];
      const Mat& o = cc.o[t];
      const Mat& tc = cc.tanh_c[t];
      Mat do_ = dh.cwiseProduct(tc);
      Mat dc = dh.cwiseProduct(o).cwiseProduct(
                   (1.0 - tc.array().square()).matrix()) +
               dc_next;
      Mat di = dc.cwiseProduct(g);
      Mat dg = dc.cwiseProduct(i);
      Mat df = t > 0 ? Mat(dc.cwiseProduct(cc.c[t - 1]))
                     : Mat(Mat::Zero(B, H));  // c_{-1} = 0
      Mat da(B, 4 * H);
      da.leftCols(H) = di.cwiseProduct(i).cwiseProduct((1.0 - i.array()).matrix());
      da.middleCols(H, H) =
          df.cwiseProduct(f).cwiseProduct((1.0 - f.array()).matrix());
      da.middleCols(2 * H, H) =
          dg.cwiseProduct((1.0 - g.array().square()).matrix());
      da.rightCols(H) =
          do_.cwiseProduct(o).cwiseProduct((1.0 - o.array()).matrix());

      wx.grad.noalias() += da.transpose() * cc.x[t];
      if (t > 0) wh.grad.noalias() += da.transpose() * cc.h[t - 1];
      b.grad.col(0) += da.colwise().sum().transpose();

      dx[t] = da * wx.value;
      dh_next.noalias() = da * wh.value;
      dc_next = dc.cwiseProduct(f);
    }
    return dx;
  }
};

// Scaled dot-product attention over one sample's T x in_width token matrix;
// queries/keys/values live in an attn_width space.
struct Attention {
  HParam wq, wk, wv, wo;  // wo only for the multi-head variant
  int in_width = 0;
  int attn_width = 0;
  int heads = 1;
  bool use_wo = false;

  struct Cache {
    Mat m;                    // T x in_width input
    std::vector<Mat> q, k, v, a, z;  // per head
    Mat z_cat;                // T x attn_width
  };

  void init(const std::string& prefix, int in_w, int attn_w, int h,
            bool output_proj, Rng& rng) {
    in_width = in_w;
    attn_width = attn_w;
    heads = h;
    use_wo = output_proj;
    wq.name = prefix + ".wq";
    wq.value.resize(attn_w, in_w);
    glorot(wq.value, rng);
    wk.name = prefix + ".wk";
    wk.value.resize(attn_w, in_w);
    glorot(wk.value, rng);
    wv.name = prefix + ".wv";
    wv.value.resize(attn_w, in_w);
    glorot(wv.value, rng);
    wq.grad = Mat::Zero(attn_w, in_w);
    wk.grad = Mat::Zero(attn_w, in_w);
    wv.grad = Mat::Zero(attn_w, in_w);
    if (use_wo) {
      wo.name = prefix + ".wo";
      wo.value.resize(attn_w, attn_w);
      glorot(wo.value, rng);
      wo.grad = Mat::Zero(attn_w, attn_w);
    }
  }

  void collect(std::vector<HParam*>& out) {
    out.push_back(&wq);
    out.push_back(&wk);
    out.push_back(&wv);
    if (use_wo) out.push_back(&wo);
  }

  // returns T x attn_width attended tokens
  Mat forward(const Mat& m, Cache& cc) const {
    const int dh = attn_width / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    cc = Cache{};
    cc.m = m;
    Mat q_all = m * wq.value.transpose();
    Mat k_all = m * wk.value.transpose();
    Mat v_all = m * wv.value.transpose();
    cc.z_cat.resize(m.rows(), attn_width);
    for (int h = 0; h < heads; ++h) {
      Mat q = q_all.middleCols(h * dh, dh);
      Mat k = k_all.middleCols(h * dh, dh);
      Mat v = v_all.middleCols(h * dh, dh);
      Mat s = q * k.transpose() * scale;
      Mat a(s.rows(), s.cols());
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double mx = s.row(r).maxCoeff();
        Vec e = (s.row(r).array() - mx).exp();
        a.row(r) = e.transpose() / e.sum();
      }
      Mat z = a * v;
      cc.z_cat.middleCols(h * dh, dh) = z;
      cc.q.push_back(std::move(q));
      cc.k.push_back(std::move(k));
      cc.v.push_back(std::move(v));
      cc.a.push_back(std::move(a));
      cc.z.push_back(std::move(z));
    }
    return use_wo ? Mat(cc.z_cat * wo.value.transpose()) : cc.z_cat;
  }

  // per-token weight each token receives, averaged over query rows (and
  // heads): nonnegative, sums to one
  Vec token_weights(const Cache& cc) const {
    Vec w = Vec::Zero(cc.a[0].cols());
    for (const auto& a : cc.a)
      w += a.colwise().mean().transpose();
    return w / static_cast<double>(cc.a.size());
  }

  Mat backward(const Mat& dout, Cache& cc) {
    const int dh = attn_width / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Mat dz_cat;
    if (use_wo) {
      wo.grad.noalias() += dout.transpose() * cc.z_cat;
      dz_cat = dout * wo.value;
    } else {
      dz_cat = dout;
    }
    Mat dq_all(cc.m.rows(), attn_width), dk_all(cc.m.rows(), attn_width),
        dv_all(cc.m.rows(), attn_width);
    for (int h = 0; h < heads; ++h) {
      Mat dz = dz_cat.middleCols(h * dh, dh);
      Mat da = dz * cc.v[h].transpose();
      Mat dv = cc.a[h].transpose() * dz;
      // softmax rows: ds = a .* (da - rowsum(da .* a))
      Mat ds(da.rows(), da.cols());
      for (Eigen::Index r = 0; r < da.rows(); ++r) {
        const double dot = da.row(r).dot(cc.a[h].row(r));
        ds.row(r) = cc.a[h].row(r).cwiseProduct(
            (da.row(r).array() - dot).matrix());
      }
      Mat dq = ds * cc.k[h] * scale;
      Mat dk = ds.transpose() * cc.q[h] * scale;
      dq_all.middleCols(h * dh, dh) = dq;
      dk_all.middleCols(h * dh, dh) = dk;
      dv_all.middleCols(h * dh, dh) = dv;
    }
    wq.grad.noalias() += dq_all.transpose() * cc.m;
    wk.grad.noalias() += dk_all.transpose() * cc.m;
    wv.grad.noalias() += dv_all.transpose() * cc.m;
    return dq_all * wq.value + dk_all * wk.value + dv_all * wv.value;
  }
};

}  // namespace detail

/// One classifier head over fused features: built per episode, trained on
/// the support set only, then applied to queries. Double precision
/// throughout; inference never draws randomness.
class EpisodicHead {
 public:
  EpisodicHead(const HeadConfig& config, int n_classes,
               const InputLayout& layout,
               std::vector<std::string> class_labels)
      : config_(config), n_classes_(n_classes), layout_(layout),
        class_labels_(std::move(class_labels)) {
    config_.validate();
    if (n_classes_ < 2) throw ConfigError("need at least 2 classes");
    if (static_cast<int>(class_labels_.size()) != n_classes_)
      throw ConfigError("class label list does not match n_classes");
    layout_.d_tok = config_.d_tok;
    layout_.mode = config_.seq_mode;
    build_params();
  }

  const HeadConfig& config() const { return config_; }
  const InputLayout& layout() const { return layout_; }
  int n_classes() const { return n_classes_; }
  const std::vector<std::string>& class_labels() const { return class_labels_; }
  const std::vector<double>& train_loss_log() const { return loss_log_; }
  const std::vector<double>& train_loss_smoothed() const {
    return loss_smoothed_;
  }
  bool trained() const { return trained_; }

  std::vector<HParam*> params() {
    std::vector<HParam*> out;
    for (auto& p : proj_w_) out.push_back(&p);
    for (auto& p : proj_b_) out.push_back(&p);
    if (config_.kind == HeadKind::dense) {
      out.push_back(&dense_w_);
      out.push_back(&dense_b_);
    }
    if (has_lstm(config_.kind)) {
      fwd_.collect(out);
      if (config_.kind != HeadKind::lstm) bwd_.collect(out);
    }
    if (has_attention(config_.kind)) attn_.collect(out);
    out.push_back(&out_w_);
    out.push_back(&out_b_);
    return out;
  }

  // Forward over a batch of fused features; rows of the result are logits.
  Mat forward(const std::vector<const fusion::FusedFeature*>& batch,
              bool train) {
    const int B = static_cast<int>(batch.size());
    if (B == 0) throw InferenceError("empty batch");
    for (const auto* f : batch) fusion::check_layout(*f, layout_.fusion_layout);

    Mat rep;  // B x rep_dim
    if (config_.kind == HeadKind::dense) {
      Mat x(B, layout_.fused_dim());
      for (int b = 0; b < B; ++b)
        x.row(b) = Eigen::Map<const Vec>(batch[b]->vector.data(),
                                         batch[b]->vector.size());
      cache_.dense_in = x;
      Mat pre = x * dense_w_.value.transpose();
      pre.rowwise() += dense_b_.value.col(0).transpose();
      cache_.dense_pre = pre;
      rep = pre.cwiseMax(0.0);
    } else {
      std::vector<Mat> tokens = make_tokens(batch);
      cache_.tokens = tokens;
      if (has_lstm(config_.kind)) {
        std::vector<Mat> hf = fwd_.forward(tokens, cache_.fwd);
        if (config_.kind == HeadKind::lstm) {
          rep = hf.back();
        } else {
          std::vector<Mat> rev(tokens.rbegin(), tokens.rend());
          std::vector<Mat> hb = bwd_.forward(rev, cache_.bwd);
          const int T = static_cast<int>(tokens.size());
          // per-step bidirectional outputs; hb[k] saw tokens T-1..T-1-k
          cache_.bi_out.assign(T, Mat());
          for (int t = 0; t < T; ++t) {
            Mat o(B, 2 * config_.hidden_dim);
            o.leftCols(config_.hidden_dim) = hf[t];
            o.rightCols(config_.hidden_dim) = hb[T - 1 - t];
            cache_.bi_out[t] = std::move(o);
          }
          if (config_.kind == HeadKind::bilstm) {
            Mat r(B, 2 * config_.hidden_dim);
            r.leftCols(config_.hidden_dim) = hf.back();   // forward final
            r.rightCols(config_.hidden_dim) = hb.back();  // backward final
            rep = r;
          } else {
            rep = attend(cache_.bi_out, B);
          }
        }
      } else {
        // plain self-attention over projected tokens
        rep = attend(tokens, B);
      }
    }

    // dropout on the pooled representation
    if (train && config_.dropout > 0.0) {
      cache_.drop_mask = Mat::Zero(rep.rows(), rep.cols());
      const double keep_inv = 1.0 / (1.0 - config_.dropout);
      for (Eigen::Index i = 0; i < rep.rows(); ++i)
        for (Eigen::Index j = 0; j < rep.cols(); ++j)
          cache_.drop_mask(i, j) =
              train_rng_.next_double() >= config_.dropout ? keep_inv : 0.0;
      rep = rep.cwiseProduct(cache_.drop_mask);
      cache_.drop_active = true;
    } else {
      cache_.drop_active = false;
    }
    cache_.rep = rep;

    Mat logits = rep * out_w_.value.transpose();
    logits.rowwise() += out_b_.value.col(0).transpose();
    return logits;
  }

  void backward(const Mat& dlogits) {
    out_w_.grad.noalias() += dlogits.transpose() * cache_.rep;
    out_b_.grad.col(0) += dlogits.colwise().sum().transpose();
    Mat drep = dlogits * out_w_.value;
    if (cache_.drop_active) drep = drep.cwiseProduct(cache_.drop_mask);

    if (config_.kind == HeadKind::dense) {
      Mat dpre = drep.cwiseProduct(
          (cache_.dense_pre.array() > 0.0).cast<double>().matrix());
      dense_w_.grad.noalias() += dpre.transpose() * cache_.dense_in;
      dense_b_.grad.col(0) += dpre.colwise().sum().transpose();
      return;  // input gradients not needed
    }

    const int B = static_cast<int>(cache_.tokens[0].rows());
    const int T = static_cast<int>(cache_.tokens.size());
    std::vector<Mat> dtokens(T, Mat::Zero(B, layout_.token_dim()));

    if (config_.kind == HeadKind::self_attn) {
      std::vector<Mat> dtok = attend_backward(drep, cache_.tokens, B);
      for (int t = 0; t < T; ++t) dtokens[t] = dtok[t];
    } else {
      const int H = config_.hidden_dim;
      std::vector<Mat> dhf(T, Mat::Zero(B, H));
      std::vector<Mat> dhb_rev(T, Mat::Zero(B, H));
      if (config_.kind == HeadKind::lstm) {
        dhf[T - 1] = drep;
      } else if (config_.kind == HeadKind::bilstm) {
        dhf[T - 1] = drep.leftCols(H);
        dhb_rev[T - 1] = drep.rightCols(H);
      } else {
        std::vector<Mat> dbi = attend_backward(drep, cache_.bi_out, B);
        for (int t = 0; t < T; ++t) {
          dhf[t] += dbi[t].leftCols(H);
          dhb_rev[T - 1 - t] += dbi[t].rightCols(H);
        }
      }
      std::vector<Mat> dx_f = fwd_.backward(dhf, cache_.fwd);
      for (int t = 0; t < T; ++t) dtokens[t] += dx_f[t];
      if (config_.kind != HeadKind::lstm) {
        std::vector<Mat> dx_b = bwd_.backward(dhb_rev, cache_.bwd);
        for (int t = 0; t < T; ++t) dtokens[t] += dx_b[T - 1 - t];
      }
    }

    // through the token projections (chunked tokens carry no parameters)
    if (layout_.mode == fusion::SequenceMode::per_backbone) {
      for (int t = 0; t < T; ++t) {
        proj_w_[t].grad.noalias() += dtokens[t].transpose() * cache_.slices[t];
        proj_b_[t].grad.col(0) += dtokens[t].colwise().sum().transpose();
      }
    }
  }

  double loss_and_grad(const std::vector<const fusion::FusedFeature*>& batch,
                       const std::vector<int>& labels, bool train) {
    Mat logits = forward(batch, train);
    Mat dlogits;
    const double loss = softmax_ce(logits, labels, &dlogits);
    backward(dlogits);
    return loss;
  }

  // Trains on the support set only (episode isolation is structural: query
  // items never reach this function). Deterministic given config.seed.
  void train_episode(
      const std::vector<std::pair<const fusion::FusedFeature*, int>>& support) {
    if (support.empty()) throw ProtocolError("empty support set");
    std::vector<bool> seen(n_classes_, false);
    for (const auto& [f, y] : support) {
      if (y < 0 || y >= n_classes_)
        throw ProtocolError("support label out of range");
      seen[y] = true;
    }
    for (int c = 0; c < n_classes_; ++c)
      if (!seen[c])
        throw ProtocolError("class " + class_labels_[c] +
                            " missing from support set");

    train_rng_ = Rng(hash_combine(config_.seed, 0x74726eULL));
    Rng shuffle_rng(hash_combine(config_.seed, 0x73687566ULL));
    auto ps = params();
    AdamState adam(ps, config_.learning_rate);

    loss_log_.clear();
    loss_smoothed_.clear();
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;
    std::vector<std::size_t> order(support.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < config_.epochs; ++epoch) {
      double epoch_loss = 0.0;
      if (static_cast<int>(support.size()) <= config_.batch_size) {
        std::vector<const fusion::FusedFeature*> batch;
        std::vector<int> labels;
        for (const auto& [f, y] : support) {
          batch.push_back(f);
          labels.push_back(y);
        }
        adam.zero_grad();
        epoch_loss = loss_and_grad(batch, labels, /*train=*/true);
        adam.step();
      } else {
        shuffle_rng.shuffle(order);
        double total = 0.0;
        std::size_t done = 0;
        while (done < order.size()) {
          const std::size_t take = std::min<std::size_t>(
              config_.batch_size, order.size() - done);
          std::vector<const fusion::FusedFeature*> batch;
          std::vector<int> labels;
          for (std::size_t i = 0; i < take; ++i) {
            batch.push_back(support[order[done + i]].first);
            labels.push_back(support[order[done + i]].second);
          }
          adam.zero_grad();
          total += loss_and_grad(batch, labels, /*train=*/true) *
                   static_cast<double>(take);
          adam.step();
          done += take;
        }
        epoch_loss = total / static_cast<double>(order.size());
      }
      if (!std::isfinite(epoch_loss))
        throw TrainingError("non-finite loss at epoch " +
                            std::to_string(epoch));
      loss_log_.push_back(epoch_loss);
      loss_smoothed_.push_back(
          loss_smoothed_.empty()
              ? epoch_loss
              : std::min(loss_smoothed_.back(), epoch_loss));
      if (epoch_loss < best - 1e-6) {
        best = epoch_loss;
        since_best = 0;
      } else if (++since_best >= config_.early_stop_patience) {
        break;
      }
    }
    trained_ = true;
  }

  std::vector<Prediction> predict(
      const std::vector<std::pair<const fusion::FusedFeature*, std::string>>&
          queries) {
    if (!trained_) throw InferenceError("head has not been trained");
    std::vector<const fusion::FusedFeature*> batch;
    for (const auto& [f, id] : queries) batch.push_back(f);
    Mat logits = forward(batch, /*train=*/false);
    std::vector<Prediction> out;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Prediction p;
      p.image_id = queries[i].second;
      const Eigen::Index k = logits.cols();
      const double mx = logits.row(i).maxCoeff();
      double denom = 0.0;
      for (Eigen::Index j = 0; j < k; ++j)
        denom += std::exp(logits(i, j) - mx);
      int arg = 0;
      p.probs.resize(k);
      for (Eigen::Index j = 0; j < k; ++j) {
        p.probs[j] = std::exp(logits(i, j) - mx) / denom;
        if (p.probs[j] > p.probs[arg]) arg = static_cast<int>(j);  // ties: low index
      }
      p.argmax_label = class_labels_[arg];
      out.push_back(std::move(p));
    }
    return out;
  }

  // Per-token attention weights for one query; requires an attention head.
  Vec attention_weights(const fusion::FusedFeature& query) {
    if (!has_attention(config_.kind))
      throw UnsupportedError("head kind " + to_string(config_.kind) +
                             " has no attention weights");
    std::vector<const fusion::FusedFeature*> batch{&query};
    forward(batch, /*train=*/false);
    return attn_.token_weights(cache_.attn);
  }

  static double softmax_ce(const Mat& logits, const std::vector<int>& labels,
                           Mat* dlogits) {
    const auto B = logits.rows();
    double loss = 0.0;
    if (dlogits) dlogits->resize(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < B; ++i) {
      const double mx = logits.row(i).maxCoeff();
      Vec e = (logits.row(i).array() - mx).exp();
      const double denom = e.sum();
      loss -= logits(i, labels[i]) - mx - std::log(denom);
      if (dlogits) {
        dlogits->row(i) = (e / denom).transpose() / static_cast<double>(B);
        (*dlogits)(i, labels[i]) -= 1.0 / static_cast<double>(B);
      }
    }
    return loss / static_cast<double>(B);
  }

  nlohmann::json to_json_meta() const {
    return {{"config", config_.to_json()},
            {"n_classes", n_classes_},
            {"fusion_layout", fusion::layout_to_json(layout_.fusion_layout)},
            {"seq_mode", fusion::to_string(layout_.mode)},
            {"d_tok", layout_.d_tok}};
  }

 private:
  struct AdamState {
    std::vector<HParam*> ps;
    std::vector<Mat> m, v;
    double lr;
    long t = 0;

    AdamState(std::vector<HParam*> params, double lr_) : ps(std::move(params)), lr(lr_) {
      for (auto* p : ps) {
        m.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
        v.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
      }
    }
    void zero_grad() {
      for (auto* p : ps) p->grad.setZero();
    }
    void step() {
      ++t;
      const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      const double bc1 = 1.0 - std::pow(b1, t);
      const double bc2 = 1.0 - std::pow(b2, t);
      for (std::size_t i = 0; i < ps.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * ps[i]->grad;
        v[i] = (b2 * v[i].array() +
                (1.0 - b2) * ps[i]->grad.array().square())
                   .matrix();
        ps[i]->value.array() -=
            lr * (m[i].array() / bc1) /
            ((v[i].array() / bc2).sqrt() + eps);
      }
    }
  };

  struct Cache {
    std::vector<Mat> slices;  // per token source, B x slice_dim
    std::vector<Mat> tokens;  // per token, B x d_tok
    detail::LstmDir::Cache fwd, bwd;
    std::vector<Mat> bi_out;
    detail::Attention::Cache attn;       // single-sample path
    std::vector<detail::Attention::Cache> attn_batch;
    Mat dense_in, dense_pre, rep, drop_mask;
    bool drop_active = false;
  };

  void build_params() {
    Rng rng(hash_combine(config_.seed, 0x696e6974ULL));
    const int D = layout_.fused_dim();
    const int dt = layout_.token_dim();
    if (config_.kind == HeadKind::dense) {
      dense_w_.name = "dense.w1";
      dense_w_.value.resize(config_.hidden_dim, D);
      detail::glorot(dense_w_.value, rng);
      dense_w_.grad = Mat::Zero(config_.hidden_dim, D);
      dense_b_.name = "dense.b1";
      dense_b_.value = Mat::Zero(config_.hidden_dim, 1);
      dense_b_.grad = dense_b_.value;
      rep_dim_ = config_.hidden_dim;
    } else {
      if (layout_.mode == fusion::SequenceMode::per_backbone) {
        for (std::size_t t = 0; t < layout_.fusion_layout.size(); ++t) {
          HParam w, b;
          w.name = "proj." + std::to_string(t) + ".weight";
          w.value.resize(dt, layout_.fusion_layout[t].length);
          detail::glorot(w.value, rng);
          w.grad = Mat::Zero(w.value.rows(), w.value.cols());
          b.name = "proj." + std::to_string(t) + ".bias";
          b.value = Mat::Zero(dt, 1);
          b.grad = b.value;
          proj_w_.push_back(std::move(w));
          proj_b_.push_back(std::move(b));
        }
      }
      if (has_lstm(config_.kind)) {
        fwd_.init("lstm_fwd", dt, config_.hidden_dim, rng);
        if (config_.kind != HeadKind::lstm)
          bwd_.init("lstm_bwd", dt, config_.hidden_dim, rng);
      }
      if (has_attention(config_.kind)) {
        const int in_w = config_.kind == HeadKind::self_attn
                             ? dt
                             : 2 * config_.hidden_dim;
        const int attn_w = config_.attention_width();
        const int heads =
            config_.kind == HeadKind::bilstm_mha ? config_.attn_heads : 1;
        attn_.init("attn", in_w, attn_w, heads,
                   config_.kind == HeadKind::bilstm_mha, rng);
      }
      switch (config_.kind) {
        case HeadKind::lstm: rep_dim_ = config_.hidden_dim; break;
        case HeadKind::self_attn: rep_dim_ = config_.hidden_dim; break;
        default: rep_dim_ = 2 * config_.hidden_dim; break;
      }
    }
    out_w_.name = "out.weight";
    out_w_.value.resize(n_classes_, rep_dim_);
    detail::glorot(out_w_.value, rng);
    out_w_.grad = Mat::Zero(n_classes_, rep_dim_);
    out_b_.name = "out.bias";
    out_b_.value = Mat::Zero(n_classes_, 1);
    out_b_.grad = out_b_.value;
  }

  // Token formation. per_backbone: affine projection of each layout slice
  // (these weights train with the head). chunked: parameter-free reshape.
  std::vector<Mat> make_tokens(
      const std::vector<const fusion::FusedFeature*>& batch) {
    const int B = static_cast<int>(batch.size());
    const int T = layout_.token_count();
    std::vector<Mat> tokens(T);
    if (layout_.mode == fusion::SequenceMode::per_backbone) {
      cache_.slices.assign(T, Mat());
      for (int t = 0; t < T; ++t) {
        const auto& s = layout_.fusion_layout[t];
        Mat x(B, s.length);
        for (int b = 0; b < B; ++b)
          x.row(b) = Eigen::Map<const Vec>(batch[b]->vector.data() + s.offset,
                                           s.length);
        tokens[t] = x * proj_w_[t].value.transpose();
        tokens[t].rowwise() += proj_b_[t].value.col(0).transpose();
        cache_.slices[t] = std::move(x);
      }
    } else {
      const int D = layout_.fused_dim();
      for (int t = 0; t < T; ++t) {
        Mat x = Mat::Zero(B, layout_.d_tok);
        for (int b = 0; b < B; ++b) {
          const int lo = t * layout_.d_tok;
          const int len = std::min(layout_.d_tok, D - lo);
          if (len > 0)
            x.row(b).head(len) =
                Eigen::Map<const Vec>(batch[b]->vector.data() + lo, len);
        }
        tokens[t] = std::move(x);
      }
    }
    return tokens;
  }

  // Attention pooling over per-sample token matrices: attended tokens are
  // mean-pooled into the representation.
  Mat attend(const std::vector<Mat>& seq, int B) {
    const int T = static_cast<int>(seq.size());
    const int width = static_cast<int>(seq[0].cols());
    Mat rep(B, attn_.attn_width);
    cache_.attn_batch.assign(B, detail::Attention::Cache{});
    for (int b = 0; b < B; ++b) {
      Mat m(T, width);
      for (int t = 0; t < T; ++t) m.row(t) = seq[t].row(b);
      Mat z = attn_.forward(m, cache_.attn_batch[b]);
      rep.row(b) = z.colwise().mean();
    }
    if (B == 1) cache_.attn = cache_.attn_batch[0];
    return rep;
  }

  std::vector<Mat> attend_backward(const Mat& drep,
                                   const std::vector<Mat>& seq, int B) {
    const int T = static_cast<int>(seq.size());
    const int width = static_cast<int>(seq[0].cols());
    std::vector<Mat> dseq(T, Mat::Zero(B, width));
    for (int b = 0; b < B; ++b) {
      // mean pool spreads the gradient uniformly over attended tokens
      Mat dz = Mat::Zero(T, width);
      for (int t = 0; t < T; ++t)
        dz.row(t) = drep.row(b) / static_cast<double>(T);
      Mat dm = attn_.backward(dz, cache_.attn_batch[b]);
      for (int t = 0; t < T; ++t) dseq[t].row(b) = dm.row(t);
    }
    return dseq;
  }

  HeadConfig config_;
  int n_classes_;
  InputLayout layout_;
  std::vector<std::string> class_labels_;
  int rep_dim_ = 0;

  std::vector<HParam> proj_w_, proj_b_;
  HParam dense_w_, dense_b_;
  detail::LstmDir fwd_, bwd_;
  detail::Attention attn_;
  HParam out_w_, out_b_;

  Cache cache_;
  Rng train_rng_{0};
  std::vector<double> loss_log_, loss_smoothed_;
  bool trained_ = false;
};

// Spec-shaped convenience wrappers.
inline std::unique_ptr<EpisodicHead> build_head(
    const HeadConfig& config, int n_classes, const InputLayout& layout,
    const std::vector<std::string>& class_labels) {
  return std::make_unique<EpisodicHead>(config, n_classes, layout,
                                        class_labels);
}

}  // namespace leaffew::heads

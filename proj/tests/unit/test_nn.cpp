#include <catch2/catch_amalgamated.hpp>

#include "leaffew/core/rng.hpp"
#include "leaffew/nn/layers.hpp"
#include "leaffew/nn/optim.hpp"

using namespace leaffew;
using namespace leaffew::nn;

namespace {

// Central finite differences against the analytic gradient for a scalar
// loss L = sum(y * coeffs). Checks both input and parameter gradients.
template <class LayerT>
void check_layer_gradients(LayerT& layer, Tensor<double> x, double tol = 1e-6,
                           bool train = true) {
  Rng rng(7);
  Tensor<double> y = layer.forward(x, train);
  Tensor<double> coeff = y;
  for (auto& v : coeff.data) v = rng.normal();

  std::vector<Param<double>*> params;
  layer.collect(params);
  for (auto* p : params) p->zero_grad();
  Tensor<double> dx = layer.backward(coeff);

  auto loss_at = [&](Tensor<double>& input) {
    Tensor<double> out = layer.forward(input, train);
    double l = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i)
      l += out.data[i] * coeff.data[i];
    return l;
  };

  const double eps = 1e-5;
  // input gradient, random subset of coordinates
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t i = rng.next_below(x.data.size());
    const double keep = x.data[i];
    x.data[i] = keep + eps;
    const double lp = loss_at(x);
    x.data[i] = keep - eps;
    const double lm = loss_at(x);
    x.data[i] = keep;
    const double fd = (lp - lm) / (2 * eps);
    REQUIRE(dx.data[i] == Catch::Approx(fd).margin(tol).epsilon(tol));
  }
  // parameter gradients
  for (auto* p : params) {
    if (!p->trainable) continue;
    for (int trial = 0; trial < 8; ++trial) {
      const std::size_t i = rng.next_below(p->size());
      const double keep = p->value[i];
      p->value[i] = keep + eps;
      const double lp = loss_at(x);
      p->value[i] = keep - eps;
      const double lm = loss_at(x);
      p->value[i] = keep;
      const double fd = (lp - lm) / (2 * eps);
      REQUIRE(p->grad[i] == Catch::Approx(fd).margin(tol).epsilon(tol));
    }
  }
}

Tensor<double> random_tensor(Rng& rng, int n, int c, int h, int w) {
  Tensor<double> t(n, c, h, w);
  for (auto& v : t.data) v = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(1);
  Conv2d<double> conv("c", 3, 4, 3, 1, 1, false);
  conv.init(rng);
  check_layer_gradients(conv, random_tensor(rng, 2, 3, 6, 6));
}

TEST_CASE("strided grouped conv gradients match finite differences") {
  Rng rng(2);
  Conv2d<double> conv("c", 4, 6, 3, 2, 2, true);
  conv.init(rng);
  check_layer_gradients(conv, random_tensor(rng, 2, 4, 7, 7));
}

TEST_CASE("depthwise conv gradients match finite differences") {
  Rng rng(3);
  Conv2d<double> conv("c", 5, 5, 3, 2, 5, false);
  conv.init(rng);
  check_layer_gradients(conv, random_tensor(rng, 2, 5, 9, 9));
}

TEST_CASE("conv output shape follows the same-padding arithmetic") {
  Conv2d<float> conv("c", 3, 8, 3, 2, 1, false);
  REQUIRE(conv.out_shape({3, 224, 224}) == Shape{8, 112, 112});
  Conv2d<float> c5("c", 8, 8, 5, 1, 8, false);
  REQUIRE(c5.out_shape({8, 14, 14}) == Shape{8, 14, 14});
}

TEST_CASE("batchnorm gradients match finite differences in train mode") {
  Rng rng(4);
  BatchNorm2d<double> bn("bn", 3, 1e-5, 0.1);
  // shift gamma/beta off their init so the test is not at a special point
  std::vector<Param<double>*> ps;
  bn.collect(ps);
  for (auto& v : ps[0]->value) v = 1.0 + 0.3 * rng.normal();
  for (auto& v : ps[1]->value) v = 0.2 * rng.normal();
  check_layer_gradients(bn, random_tensor(rng, 3, 3, 4, 4), 1e-5);
}

TEST_CASE("batchnorm eval uses running stats and is deterministic") {
  Rng rng(5);
  BatchNorm2d<double> bn("bn", 2, 1e-5, 0.5);
  auto x = random_tensor(rng, 4, 2, 3, 3);
  bn.forward(x, true);  // update running stats
  auto y1 = bn.forward(x, false);
  auto y2 = bn.forward(x, false);
  REQUIRE(y1.data == y2.data);
}

TEST_CASE("activation gradients match finite differences") {
  Rng rng(6);
  for (Act a : {Act::relu, Act::relu6, Act::hardswish, Act::hardsigmoid}) {
    Activation<double> act(a);
    check_layer_gradients(act, random_tensor(rng, 2, 3, 4, 4));
  }
}

TEST_CASE("squeeze-excite gradients match finite differences") {
  Rng rng(7);
  SqueezeExcite<double> se("se", 6, 3);
  se.init(rng);
  check_layer_gradients(se, random_tensor(rng, 2, 6, 5, 5), 1e-5);
}

TEST_CASE("linear and pool gradients match finite differences") {
  Rng rng(8);
  Linear<double> fc("fc", 10, 4);
  fc.init(rng);
  // linear init stddev is small; bump weights to exercise the path
  std::vector<Param<double>*> ps;
  fc.collect(ps);
  for (auto& v : ps[0]->value) v = rng.normal();
  check_layer_gradients(fc, random_tensor(rng, 3, 10, 1, 1));

  GlobalAvgPool<double> pool;
  check_layer_gradients(pool, random_tensor(rng, 2, 3, 4, 4));
}

TEST_CASE("residual sequential block gradients match finite differences") {
  Rng rng(9);
  auto body = std::make_unique<Sequential<double>>();
  auto* c1 = body->add<Conv2d<double>>("c1", 4, 8, 1, 1, 1, false);
  c1->init(rng);
  body->add<BatchNorm2d<double>>("bn1", 8, 1e-5, 0.1);
  body->add<Activation<double>>(Act::relu6);
  auto* c2 = body->add<Conv2d<double>>("c2", 8, 4, 1, 1, 1, false);
  c2->init(rng);
  body->add<BatchNorm2d<double>>("bn2", 4, 1e-5, 0.1);
  Residual<double> block(std::move(body), true);
  check_layer_gradients(block, random_tensor(rng, 2, 4, 4, 4), 1e-5);
}

TEST_CASE("softmax cross entropy gradient matches finite differences") {
  Rng rng(10);
  Tensor<double> logits = random_tensor(rng, 4, 5, 1, 1);
  std::vector<int> labels{0, 2, 4, 1};
  Tensor<double> grad;
  const double loss = softmax_cross_entropy(logits, labels, &grad);
  REQUIRE(std::isfinite(loss));
  const double eps = 1e-6;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t i = rng.next_below(logits.data.size());
    const double keep = logits.data[i];
    logits.data[i] = keep + eps;
    const double lp = softmax_cross_entropy(logits, labels);
    logits.data[i] = keep - eps;
    const double lm = softmax_cross_entropy(logits, labels);
    logits.data[i] = keep;
    REQUIRE(grad.data[i] ==
            Catch::Approx((lp - lm) / (2 * eps)).margin(1e-7));
  }
}

TEST_CASE("sgd with momentum and adam reduce a quadratic") {
  Param<double> p;
  p.name = "w";
  p.init_zero({2});
  p.value = {5.0, -3.0};

  Sgd<double> sgd({&p}, 0.1, 0.9);
  for (int i = 0; i < 200; ++i) {
    p.zero_grad();
    p.grad[0] = 2 * p.value[0];
    p.grad[1] = 2 * p.value[1];
    sgd.step();
  }
  REQUIRE(std::abs(p.value[0]) < 1e-3);
  REQUIRE(std::abs(p.value[1]) < 1e-3);

  p.value = {5.0, -3.0};
  Adam<double> adam({&p}, 0.3);
  for (int i = 0; i < 300; ++i) {
    p.zero_grad();
    p.grad[0] = 2 * p.value[0];
    p.grad[1] = 2 * p.value[1];
    adam.step();
  }
  REQUIRE(std::abs(p.value[0]) < 1e-2);
  REQUIRE(std::abs(p.value[1]) < 1e-2);
}

TEST_CASE("dropout masks scale by keep probability and replay exactly") {
  Dropout<double> drop(0.5, 123);
  Tensor<double> x(1, 1, 10, 10);
  for (auto& v : x.data) v = 1.0;
  auto y = drop.forward(x, true);
  int zeros = 0;
  for (double v : y.data) {
    REQUIRE((v == 0.0 || v == Catch::Approx(2.0)));
    if (v == 0.0) ++zeros;
  }
  REQUIRE(zeros > 20);
  REQUIRE(zeros < 80);
  drop.reseed(123);
  auto y2 = drop.forward(x, true);
  REQUIRE(y.data == y2.data);
  auto eval = drop.forward(x, false);
  REQUIRE(eval.data == x.data);
}

TEST_CASE("cosine schedule decays from base toward zero") {
  REQUIRE(cosine_lr(1.0, 0, 10) == Catch::Approx(1.0));
  REQUIRE(cosine_lr(1.0, 5, 10) == Catch::Approx(0.5));
  REQUIRE(cosine_lr(1.0, 9, 10) < 0.05);
}

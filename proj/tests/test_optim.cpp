#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mct/optim.hpp"

using namespace mct;

TEST_CASE("zero gradients and zero weight decay leave params unchanged") {
  ParamStore<double> store;
  auto w = store.add_param("w", Tensor<double>({3}, {1.0, -2.0, 0.5}));
  const Tensor<double> before = w->value;
  adam_step(store, AdamConfig{1e-3, 0.9, 0.999, 1e-8, 0.0}, 1);
  CHECK(bit_equal(w->value, before));
}

TEST_CASE("first step with unit gradient moves by about -lr") {
  ParamStore<double> store;
  auto w = store.add_param("w", Tensor<double>({1}, {0.7}));
  w->grad[0] = 1.0;
  adam_step(store, AdamConfig{1e-3, 0.9, 0.999, 1e-8, 0.0}, 1);
  CHECK(w->value[0] == doctest::Approx(0.7 - 1e-3).epsilon(1e-7));
}

TEST_CASE("two steps reproduce a hand-rolled scalar oracle to 1e-12") {
  const double g1 = 0.37, g2 = -1.21, lr = 5e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double p = 2.0, m = 0.0, v = 0.0;
  const double grads[2] = {g1, g2};
  for (int t = 1; t <= 2; ++t) {
    const double g = grads[t - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    p -= lr * mhat / (std::sqrt(vhat) + eps);
  }

  ParamStore<double> store;
  auto w = store.add_param("w", Tensor<double>({1}, {2.0}));
  Adam<double> opt(AdamConfig{lr, b1, b2, eps, 0.0});
  w->grad[0] = g1;
  opt.step(store);
  w->zero_grad();
  w->grad[0] = g2;
  opt.step(store);
  CHECK(std::abs(w->value[0] - p) < 1e-12);
  CHECK(opt.steps_taken() == 2);
}

TEST_CASE("weight decay is decoupled from the gradient path") {
  ParamStore<double> store;
  auto w = store.add_param("w", Tensor<double>({1}, {4.0}));
  const double lr = 1e-2, wd = 0.1;
  adam_step(store, AdamConfig{lr, 0.9, 0.999, 1e-8, wd}, 1);
  // zero gradient: the only movement is lr * wd * value
  CHECK(w->value[0] == doctest::Approx(4.0 * (1.0 - lr * wd)).epsilon(1e-12));
}

TEST_CASE("cosine schedule decays from base toward zero") {
  const double base = 1e-3;
  CHECK(cosine_lr(base, 0, 100) == doctest::Approx(base));
  CHECK(cosine_lr(base, 99, 100) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(cosine_lr(base, 50, 100) < base);
  CHECK(cosine_lr(base, 50, 100) > 0.0);
}

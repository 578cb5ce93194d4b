#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mct/autograd.hpp"
#include "support/grad_check.hpp"

using namespace mct;
using mct::testing::check_gradients;
using mct::testing::GradCheckResult;

namespace {

Tensor<double> randn(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.next_normal() * scale;
  return t;
}

// keep relu probes away from the kink
Tensor<double> randn_offset(Shape shape, Rng& rng) {
  Tensor<double> t = randn(std::move(shape), rng);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] += t[i] >= 0 ? 0.5 : -0.5;
  return t;
}

}  // namespace

TEST_CASE("polynomial: d(x^2)/dx at 3 is 6") {
  Tape<double> tape;
  auto x = make_leaf<double>(Tensor<double>({1, 1}, {3.0}), true);
  auto y = ops::matmul(&tape, x, x);
  auto loss = ops::sum_all(&tape, y);
  tape.backward(loss);
  CHECK(x->grad[0] == doctest::Approx(6.0));
}

TEST_CASE("sum(relu(x)) at [-1,2] gives grad [0,1]") {
  Tape<double> tape;
  auto x = make_leaf<double>(Tensor<double>({2}, {-1.0, 2.0}), true);
  auto loss = ops::sum_all(&tape, ops::relu(&tape, x));
  tape.backward(loss);
  CHECK(x->grad[0] == 0.0);
  CHECK(x->grad[1] == 1.0);
}

TEST_CASE("backward demands a scalar loss") {
  Tape<double> tape;
  auto x = make_leaf<double>(Tensor<double>({2}, {1.0, 2.0}), true);
  auto y = ops::relu(&tape, x);
  CHECK_THROWS_AS(tape.backward(y), Error);
}

TEST_CASE("params not on the loss path keep zero grads") {
  Tape<double> tape;
  auto used = make_leaf<double>(Tensor<double>({2}, {1.0, 2.0}), true);
  auto unused = make_leaf<double>(Tensor<double>({3}, {1.0, 1.0, 1.0}), true);
  auto loss = ops::sum_all(&tape, ops::gelu(&tape, used));
  tape.backward(loss);
  for (int64_t i = 0; i < 3; ++i) CHECK(unused->grad[i] == 0.0);
  CHECK(used->grad[0] != 0.0);
}

TEST_CASE("repeated backward without zeroing accumulates leaf grads") {
  Tape<double> tape;
  auto x = make_leaf<double>(Tensor<double>({1, 1}, {3.0}), true);
  auto loss = ops::sum_all(&tape, ops::matmul(&tape, x, x));
  tape.backward(loss);
  const double once = x->grad[0];
  tape.backward(loss);
  CHECK(x->grad[0] == doctest::Approx(2.0 * once));
  x->zero_grad();
  tape.backward(loss);
  CHECK(x->grad[0] == doctest::Approx(once));
}

TEST_CASE("fd: matmul") {
  Rng rng(31);
  auto a = make_leaf<double>(randn({4, 3}, rng));
  auto b = make_leaf<double>(randn({3, 5}, rng));
  const Tensor<double> r = randn({4, 5}, rng);
  auto res = check_gradients(
      [&](Tape<double>* t) { return ops::weighted_sum(t, ops::matmul(t, a, b), r); }, {a, b});
  CHECK_MESSAGE(res.ok, res.worst);
}

TEST_CASE("fd: bmm with leading dims") {
  Rng rng(32);
  auto a = make_leaf<double>(randn({2, 2, 3, 4}, rng));
  auto b = make_leaf<double>(randn({2, 2, 4, 2}, rng));
  const Tensor<double> r = randn({2, 2, 3, 2}, rng);
  auto res = check_gradients(
      [&](Tape<double>* t) { return ops::weighted_sum(t, ops::bmm(t, a, b), r); }, {a, b});
  CHECK_MESSAGE(res.ok, res.worst);
}

TEST_CASE("fd: linear over broadcast leading axes") {
  Rng rng(33);
  auto x = make_leaf<double>(randn({2, 3, 4}, rng));
  auto w = make_leaf<double>(randn({4, 5}, rng));
  auto b = make_leaf<double>(randn({5}, rng));
  const Tensor<double> r = randn({2, 3, 5}, rng);
  auto res = check_gradients(
      [&](Tape<double>* t) { return ops::weighted_sum(t, ops::linear(t, x, w, b), r); },
      {x, w, b});
  CHECK_MESSAGE(res.ok, res.worst);
}

TEST_CASE("fd: grouped strided conv3d") {
  Rng rng(34);
  auto x = make_leaf<double>(randn({2, 4, 5, 4, 4}, rng));
  auto w = make_leaf<double>(randn({4, 2, 3, 2, 2}, rng));
  auto b = make_leaf<double>(randn({4}, rng));
  Tensor<double> r;
  auto res = check_gradients(
      [&](Tape<double>* t) {
        auto y = ops::conv3d_grouped(t, x, w, b, 2, {2, 1, 1});
        if (r.numel() == 0) {
          Rng rr(35);
          r = randn(y->value.shape(), rr);
        }
        return ops::weighted_sum(t, y, r);
      },
      {x, w, b});
  CHECK_MESSAGE(res.ok, res.worst);
}

TEST_CASE("fd: batchnorm3d train mode") {
  Rng rng(36);
  auto x = make_leaf<double>(randn({2, 2, 2, 3, 3}, rng));
  auto gamma = make_leaf<double>(randn({2}, rng));
  auto beta = make_leaf<double>(randn({2}, rng));
  Tensor<double> rm({2}), rv = Tensor<double>::full({2}, 1.0), seen({1});
  const Tensor<double> r = randn({2, 2, 2, 3, 3}, rng);
  auto res = check_gradients(
      [&](Tape<double>* t) {
        auto y = ops::batchnorm3d(t, x, gamma, beta, 1e-5, 0.1, true, rm, rv, seen);
        return ops::weighted_sum(t, y, r);
      },
      {x, gamma, beta});
  CHECK_MESSAGE(res.ok, res.worst);
}

TEST_CASE("fd: batchnorm3d eval mode") {
  Rng rng(37);
  auto x = make_leaf<double>(randn({1, 2, 2, 2, 2}, rng));
  auto gamma = make_leaf<double>(randn({2}, rng));
  auto beta = make_leaf<double>(randn({2}, rng));
  Tensor<double> rm = randn({2}, rng);
  Tensor<double> rv = Tensor<double>::full({2}, 1.3);
  Tensor<double> seen = Tensor<double>::full({1}, 5.0);
  const Tensor<double> r = randn({1, 2, 2, 2, 2}, rng);
  auto res = check_gradients(
      [&](Tape<double>* t) {
        auto y = ops::batchnorm3d(t, x, gamma, beta, 1e-5, 0.1, false, rm, rv, seen);
        return ops::weighted_sum(t, y, r);
      },
      {x, gamma, beta});
  CHECK_MESSAGE(res.ok, res.worst);
}

TEST_CASE("batchnorm3d eval before any stats is an error") {
  Tape<double> tape;
  auto x = make_leaf<double>(Tensor<double>({1, 1, 1, 1, 2}), true);
  auto gamma = make_leaf<double>(Tensor<double>::full({1}, 1.0), true);
  auto beta = make_leaf<double>(Tensor<double>({1}), true);
  Tensor<double> rm({1}), rv({1}), seen({1});
  CHECK_THROWS_AS(ops::batchnorm3d(&tape, x, gamma, beta, 1e-5, 0.1, false, rm, rv, seen), Error);
}

TEST_CASE("fd: softmax, layernorm, activations") {
  Rng rng(38);
  auto x = make_leaf<double>(randn({3, 5}, rng));
  const Tensor<double> r = randn({3, 5}, rng);
  auto res = check_gradients(
      [&](Tape<double>* t) { return ops::weighted_sum(t, ops::softmax(t, x), r); }, {x});
  CHECK_MESSAGE(res.ok, res.worst);

  auto gamma = make_leaf<double>(randn({5}, rng));
  auto beta = make_leaf<double>(randn({5}, rng));
  res = check_gradients(
      [&](Tape<double>* t) {
        return ops::weighted_sum(t, ops::layernorm(t, x, gamma, beta, 1e-5), r);
      },
      {x, gamma, beta});
  CHECK_MESSAGE(res.ok, res.worst);

  auto xr = make_leaf<double>(randn_offset({4, 4}, rng));
  const Tensor<double> rr = randn({4, 4}, rng);
  res = check_gradients(
      [&](Tape<double>* t) { return ops::weighted_sum(t, ops::relu(t, xr), rr); }, {xr});
  CHECK_MESSAGE(res.ok, res.worst);

  res = check_gradients(
      [&](Tape<double>* t) { return ops::weighted_sum(t, ops::gelu(t, x), r); }, {x});
  CHECK_MESSAGE(res.ok, res.worst);
}

TEST_CASE("fd: mean_tokens, losses, data movement") {
  Rng rng(39);
  auto x = make_leaf<double>(randn({2, 4, 3}, rng));
  const Tensor<double> r = randn({2, 3}, rng);
  auto res = check_gradients(
      [&](Tape<double>* t) { return ops::weighted_sum(t, ops::mean_tokens(t, x), r); }, {x});
  CHECK_MESSAGE(res.ok, res.worst);

  auto pred = make_leaf<double>(randn({3, 4}, rng));
  const Tensor<double> target = randn({3, 4}, rng);
  res = check_gradients([&](Tape<double>* t) { return ops::mse(t, pred, target); }, {pred});
  CHECK_MESSAGE(res.ok, res.worst);

  auto logits = make_leaf<double>(randn({3, 4}, rng));
  const std::vector<int> labels{2, 0, 3};
  res = check_gradients([&](Tape<double>* t) { return ops::cross_entropy(t, logits, labels); },
                        {logits});
  CHECK_MESSAGE(res.ok, res.worst);

  auto a = make_leaf<double>(randn({2, 3}, rng));
  auto b = make_leaf<double>(randn({2, 3}, rng));
  const Tensor<double> r2 = randn({2, 3}, rng);
  res = check_gradients(
      [&](Tape<double>* t) {
        auto s = ops::add(t, a, ops::scale(t, b, 0.75));
        return ops::weighted_sum(t, s, r2);
      },
      {a, b});
  CHECK_MESSAGE(res.ok, res.worst);

  auto m = make_leaf<double>(randn({3, 4}, rng));
  const Tensor<double> rt = randn({4, 3}, rng);
  res = check_gradients(
      [&](Tape<double>* t) { return ops::weighted_sum(t, ops::transpose2d(t, m), rt); }, {m});
  CHECK_MESSAGE(res.ok, res.worst);

  auto p = make_leaf<double>(randn({2, 3, 4}, rng));
  const Tensor<double> rp = randn({4, 2, 3}, rng);
  res = check_gradients(
      [&](Tape<double>* t) {
        return ops::weighted_sum(t, ops::permute(t, p, {2, 0, 1}), rp);
      },
      {p});
  CHECK_MESSAGE(res.ok, res.worst);

  auto q = make_leaf<double>(randn({2, 6}, rng));
  const Tensor<double> rq = randn({3, 4}, rng);
  res = check_gradients(
      [&](Tape<double>* t) { return ops::weighted_sum(t, ops::reshape(t, q, {3, 4}), rq); }, {q});
  CHECK_MESSAGE(res.ok, res.worst);

  auto tokens = make_leaf<double>(randn({2, 5, 3}, rng));
  auto vec = make_leaf<double>(randn({3}, rng));
  const Tensor<double> rv = randn({2, 5, 3}, rng);
  res = check_gradients(
      [&](Tape<double>* t) {
        return ops::weighted_sum(t, ops::replace_token(t, tokens, 2, vec), rv);
      },
      {tokens, vec});
  CHECK_MESSAGE(res.ok, res.worst);

  const Tensor<double> rs = randn({2, 3}, rng);
  res = check_gradients(
      [&](Tape<double>* t) {
        return ops::weighted_sum(t, ops::select_token(t, tokens, 1), rs);
      },
      {tokens});
  CHECK_MESSAGE(res.ok, res.worst);
}

TEST_CASE("fd: random elementwise shapes up to rank 6, extents <= 5") {
  Rng rng(40);
  for (int trial = 0; trial < 5; ++trial) {
    const int rank = 1 + static_cast<int>(rng.next_below(6));
    Shape shape;
    for (int i = 0; i < rank; ++i) shape.push_back(1 + static_cast<int64_t>(rng.next_below(5)));
    auto x = make_leaf<double>(randn(shape, rng));
    Rng rr(100 + trial);
    const Tensor<double> r = randn(shape, rr);
    auto res = check_gradients(
        [&](Tape<double>* t) { return ops::weighted_sum(t, ops::gelu(t, x), r); }, {x});
    CHECK_MESSAGE(res.ok, res.worst);
    auto res2 = check_gradients(
        [&](Tape<double>* t) { return ops::weighted_sum(t, ops::softmax(t, x), r); }, {x});
    CHECK_MESSAGE(res2.ok, res2.worst);
  }
}

TEST_CASE("dropout mask is deterministic in its key and scales kept values") {
  auto x = make_leaf<double>(Tensor<double>::full({1000}, 1.0), true);
  Tape<double> tape;
  auto y1 = ops::dropout(&tape, x, 0.25, 7, 3, 1);
  auto y2 = ops::dropout<double>(nullptr, x, 0.25, 7, 3, 1);
  CHECK(bit_equal(y1->value, y2->value));
  int64_t kept = 0;
  for (int64_t i = 0; i < 1000; ++i) {
    if (y1->value[i] != 0.0) {
      CHECK(y1->value[i] == doctest::Approx(1.0 / 0.75));
      ++kept;
    }
  }
  CHECK(kept > 650);
  CHECK(kept < 850);
  auto y3 = ops::dropout<double>(nullptr, x, 0.25, 7, 4, 1);
  CHECK_FALSE(bit_equal(y1->value, y3->value));
}

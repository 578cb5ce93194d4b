#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mct/autograd.hpp"
#include "mct/kernels.hpp"
#include "mct/rng.hpp"

using namespace mct;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.next_normal() * scale;
  return t;
}

// index-triple-loop reference, independent of the mm_* cores
Tensor<double> matmul_oracle(const Tensor<double>& a, const Tensor<double>& b) {
  const int64_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor<double> c({m, n});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t l = 0; l < k; ++l) acc += a[i * k + l] * b[l * n + j];
      c[i * n + j] = acc;
    }
  }
  return c;
}

// plain (ungrouped) valid conv3d over one group slice, same reduction order
// as the production kernel but indexed independently
Tensor<double> conv3d_plain_oracle(const Tensor<double>& x, const Tensor<double>& w,
                                   const Tensor<double>& b, std::array<int64_t, 3> stride) {
  const int64_t n = x.extent(0), cin = x.extent(1), d = x.extent(2), h = x.extent(3),
                ww = x.extent(4);
  const int64_t cout = w.extent(0), kd = w.extent(2), kh = w.extent(3), kw = w.extent(4);
  const int64_t od = (d - kd) / stride[0] + 1;
  const int64_t oh = (h - kh) / stride[1] + 1;
  const int64_t ow = (ww - kw) / stride[2] + 1;
  Tensor<double> y({n, cout, od, oh, ow});
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t zd = 0; zd < od; ++zd)
        for (int64_t zh = 0; zh < oh; ++zh)
          for (int64_t zw = 0; zw < ow; ++zw) {
            double acc = b[co];
            for (int64_t ci = 0; ci < cin; ++ci)
              for (int64_t a = 0; a < kd; ++a)
                for (int64_t bb = 0; bb < kh; ++bb)
                  for (int64_t c = 0; c < kw; ++c) {
                    acc += x.at({ni, ci, zd * stride[0] + a, zh * stride[1] + bb,
                                 zw * stride[2] + c}) *
                           w.at({co, ci, a, bb, c});
                  }
            y.at({ni, co, zd, zh, zw}) = acc;
          }
  return y;
}

Tensor<double> conv3d_plain_oracle_grouped(const Tensor<double>& x, const Tensor<double>& w,
                                           const Tensor<double>& b, int64_t groups,
                                           std::array<int64_t, 3> stride) {
  const int64_t n = x.extent(0), cin = x.extent(1);
  const int64_t cout = w.extent(0), cpg = w.extent(1);
  const int64_t cin_pg = cin / groups, cout_pg = cout / groups;
  REQUIRE(cpg == cin_pg);
  const int64_t in_sp = x.extent(2) * x.extent(3) * x.extent(4);
  Tensor<double> y;
  for (int64_t g = 0; g < groups; ++g) {
    Tensor<double> xg({n, cin_pg, x.extent(2), x.extent(3), x.extent(4)});
    Tensor<double> wg({cout_pg, cpg, w.extent(2), w.extent(3), w.extent(4)});
    Tensor<double> bg({cout_pg});
    for (int64_t ni = 0; ni < n; ++ni)
      for (int64_t c = 0; c < cin_pg; ++c)
        for (int64_t s = 0; s < in_sp; ++s)
          xg[(ni * cin_pg + c) * in_sp + s] = x[(ni * cin + g * cin_pg + c) * in_sp + s];
    for (int64_t c = 0; c < cout_pg; ++c) {
      bg[c] = b[g * cout_pg + c];
      const int64_t ker = cpg * w.extent(2) * w.extent(3) * w.extent(4);
      for (int64_t i = 0; i < ker; ++i) wg[c * ker + i] = w[(g * cout_pg + c) * ker + i];
    }
    const Tensor<double> yg = conv3d_plain_oracle(xg, wg, bg, stride);
    if (y.empty()) {
      y = Tensor<double>({n, cout, yg.extent(2), yg.extent(3), yg.extent(4)});
    }
    const int64_t out_sp = yg.numel() / (n * cout_pg);
    for (int64_t ni = 0; ni < n; ++ni)
      for (int64_t c = 0; c < cout_pg; ++c)
        for (int64_t s = 0; s < out_sp; ++s)
          y[(ni * cout + g * cout_pg + c) * out_sp + s] = yg[(ni * cout_pg + c) * out_sp + s];
  }
  return y;
}

}  // namespace

TEST_CASE("matmul identity and hand expansion") {
  Tensor<double> eye({2, 2}, {1, 0, 0, 1});
  Tensor<double> a({2, 2}, {1, 2, 3, 4});
  CHECK(bit_equal(kernels::matmul(eye, a), a));

  Tensor<double> row({1, 2}, {1, 2});
  Tensor<double> col({2, 1}, {3, 4});
  CHECK(kernels::matmul(row, col)[0] == doctest::Approx(11.0));
}

TEST_CASE("matmul matches the triple-loop oracle") {
  Rng rng(11);
  const Tensor<double> a = random_tensor({4, 5}, rng);
  const Tensor<double> b = random_tensor({5, 3}, rng);
  CHECK(max_abs_diff(kernels::matmul(a, b), matmul_oracle(a, b)) < 1e-12);
}

TEST_CASE("matmul reports both shapes on mismatch") {
  Tensor<double> a({2, 3});
  Tensor<double> b({4, 2});
  try {
    kernels::matmul(a, b);
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::shape);
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("bmm equals per-slice matmul") {
  Rng rng(12);
  const Tensor<double> a = random_tensor({2, 3, 4, 5}, rng);
  const Tensor<double> b = random_tensor({2, 3, 5, 2}, rng);
  const Tensor<double> c = kernels::bmm(a, b);
  for (int64_t p = 0; p < 6; ++p) {
    Tensor<double> as({4, 5});
    Tensor<double> bs({5, 2});
    for (int64_t i = 0; i < 20; ++i) as[i] = a[p * 20 + i];
    for (int64_t i = 0; i < 10; ++i) bs[i] = b[p * 10 + i];
    const Tensor<double> cs = matmul_oracle(as, bs);
    for (int64_t i = 0; i < 8; ++i) {
      CHECK(c[p * 8 + i] == doctest::Approx(cs[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("linear identity, hand case, and matmul+add oracle") {
  Tensor<double> x({2, 2}, {1, 2, 3, 4});
  Tensor<double> eye({2, 2}, {1, 0, 0, 1});
  Tensor<double> zero_b({2});
  CHECK(bit_equal(kernels::linear(x, eye, zero_b), x));

  Tensor<double> v({1, 2}, {1, 2});
  Tensor<double> w({2, 1}, {1, 1});
  Tensor<double> b({1}, {0.5});
  CHECK(kernels::linear(v, w, b)[0] == doctest::Approx(3.5));

  Rng rng(13);
  const Tensor<double> xr = random_tensor({3, 4, 5}, rng);
  const Tensor<double> wr = random_tensor({5, 6}, rng);
  const Tensor<double> br = random_tensor({6}, rng);
  const Tensor<double> y = kernels::linear(xr, wr, br);
  const Tensor<double> flat = xr.reshaped({12, 5});
  const Tensor<double> mm = matmul_oracle(flat, wr);
  for (int64_t r = 0; r < 12; ++r) {
    for (int64_t j = 0; j < 6; ++j) {
      CHECK(y[r * 6 + j] == doctest::Approx(mm[r * 6 + j] + br[j]).epsilon(1e-12));
    }
  }

  Tensor<double> bad({3, 4});
  CHECK_THROWS_AS(kernels::linear(bad, wr, br), Error);
}

TEST_CASE("conv3d 1x1x1 identity kernel") {
  Rng rng(14);
  const Tensor<double> x = random_tensor({1, 1, 3, 4, 4}, rng);
  Tensor<double> w({1, 1, 1, 1, 1}, {1.0});
  Tensor<double> b({1});
  const Tensor<double> y = kernels::conv3d_grouped(x, w, b, 1, {1, 1, 1});
  CHECK(bit_equal(y.reshaped(x.shape()), x));
}

TEST_CASE("conv3d all-ones counting case") {
  const Tensor<double> x = Tensor<double>::full({1, 1, 5, 5, 5}, 1.0);
  const Tensor<double> w = Tensor<double>::full({1, 1, 3, 3, 3}, 1.0);
  Tensor<double> b({1});
  const Tensor<double> y = kernels::conv3d_grouped(x, w, b, 1, {1, 1, 1});
  CHECK(y.shape() == Shape{1, 1, 3, 3, 3});
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(27.0));
}

TEST_CASE("conv3d group independence") {
  Rng rng(15);
  Tensor<double> x = random_tensor({2, 2, 4, 4, 4}, rng);
  const Tensor<double> w = random_tensor({4, 1, 2, 2, 2}, rng);
  const Tensor<double> b = random_tensor({4}, rng);
  const Tensor<double> y0 = kernels::conv3d_grouped(x, w, b, 2, {1, 1, 1});
  // perturb only group-2 input channels (channel 1); group-1 outputs (co 0,1)
  // must be bit-identical
  for (int64_t n = 0; n < 2; ++n) {
    for (int64_t i = 0; i < 64; ++i) x[(n * 2 + 1) * 64 + i] += 3.25;
  }
  const Tensor<double> y1 = kernels::conv3d_grouped(x, w, b, 2, {1, 1, 1});
  const int64_t spatial = y0.numel() / (2 * 4);
  bool group2_changed = false;
  for (int64_t n = 0; n < 2; ++n) {
    for (int64_t co = 0; co < 4; ++co) {
      for (int64_t s = 0; s < spatial; ++s) {
        const int64_t idx = (n * 4 + co) * spatial + s;
        if (co < 2) {
          CHECK(y0[idx] == y1[idx]);
        } else if (y0[idx] != y1[idx]) {
          group2_changed = true;
        }
      }
    }
  }
  CHECK(group2_changed);
}

TEST_CASE("grouped conv equals independent per-group convs, bit-identical") {
  Rng rng(16);
  const int64_t g = 3, cpg_in = 2, cpg_out = 2;
  const Tensor<double> x = random_tensor({2, g * cpg_in, 5, 4, 4}, rng);
  const Tensor<double> w = random_tensor({g * cpg_out, cpg_in, 3, 2, 2}, rng);
  const Tensor<double> b = random_tensor({g * cpg_out}, rng);
  const std::array<int64_t, 3> stride{2, 1, 1};
  const Tensor<double> y = kernels::conv3d_grouped(x, w, b, g, stride);

  for (int64_t gi = 0; gi < g; ++gi) {
    Tensor<double> xg({2, cpg_in, 5, 4, 4});
    Tensor<double> wg({cpg_out, cpg_in, 3, 2, 2});
    Tensor<double> bg({cpg_out});
    const int64_t in_sp = 5 * 4 * 4;
    for (int64_t n = 0; n < 2; ++n)
      for (int64_t c = 0; c < cpg_in; ++c)
        for (int64_t s = 0; s < in_sp; ++s)
          xg[(n * cpg_in + c) * in_sp + s] = x[(n * g * cpg_in + gi * cpg_in + c) * in_sp + s];
    for (int64_t c = 0; c < cpg_out; ++c) {
      bg[c] = b[gi * cpg_out + c];
      for (int64_t i = 0; i < cpg_in * 3 * 2 * 2; ++i) {
        wg[c * cpg_in * 12 + i] = w[(gi * cpg_out + c) * cpg_in * 12 + i];
      }
    }
    const Tensor<double> yg = kernels::conv3d_grouped(xg, wg, bg, 1, stride);
    const int64_t out_sp = yg.numel() / (2 * cpg_out);
    for (int64_t n = 0; n < 2; ++n)
      for (int64_t c = 0; c < cpg_out; ++c)
        for (int64_t s = 0; s < out_sp; ++s) {
          CHECK(yg[(n * cpg_out + c) * out_sp + s] ==
                y[(n * g * cpg_out + gi * cpg_out + c) * out_sp + s]);
        }
  }
}

TEST_CASE("conv3d matches an independent naive oracle") {
  Rng rng(17);
  const Tensor<double> x = random_tensor({2, 3, 5, 4, 4}, rng);
  const Tensor<double> w = random_tensor({2, 3, 2, 3, 3}, rng);
  const Tensor<double> b = random_tensor({2}, rng);
  const Tensor<double> y = kernels::conv3d_grouped(x, w, b, 1, {2, 1, 1});
  const Tensor<double> o = conv3d_plain_oracle(x, w, b, {2, 1, 1});
  CHECK(y.shape() == o.shape());
  CHECK(max_abs_diff(y, o) < 1e-12);
}

TEST_CASE("single-sample rank-4 conv equals the batched form") {
  Rng rng(45);
  const Tensor<double> x4 = random_tensor({3, 4, 5, 5}, rng);
  const Tensor<double> w = random_tensor({6, 1, 2, 3, 3}, rng);
  const Tensor<double> b = random_tensor({6}, rng);
  const Tensor<double> y4 = kernels::conv3d_grouped(x4, w, b, 3, {1, 1, 1});
  CHECK(y4.rank() == 4);
  CHECK(y4.shape() == Shape{6, 3, 3, 3});
  const Tensor<double> y5 = kernels::conv3d_grouped(x4.reshaped({1, 3, 4, 5, 5}), w, b, 3, {1, 1, 1});
  CHECK(bit_equal(y4, y5.reshaped(y4.shape())));

  // backward through the rank-4 form matches finite differences via autograd
  Tape<double> tape;
  auto xv = make_leaf<double>(x4, true);
  auto wv = make_leaf<double>(w, true);
  auto bv = make_leaf<double>(b, true);
  auto y = ops::conv3d_grouped(&tape, xv, wv, bv, 3, {1, 1, 1});
  auto loss = ops::sum_all(&tape, y);
  tape.backward(loss);
  double norm = 0.0;
  for (int64_t i = 0; i < xv->grad.numel(); ++i) norm += std::abs(xv->grad[i]);
  CHECK(norm > 0.0);
}

TEST_CASE("conv3d shape and group errors") {
  Tensor<double> x({1, 2, 3, 3, 3});
  Tensor<double> w_big({2, 2, 4, 3, 3});
  Tensor<double> b({2});
  CHECK_THROWS_AS(kernels::conv3d_grouped(x, w_big, b, 1, {1, 1, 1}), Error);
  Tensor<double> w_ok({2, 1, 2, 2, 2});
  CHECK_THROWS_AS(kernels::conv3d_grouped(x, w_ok, b, 3, {1, 1, 1}), Error);  // Cin % G != 0
}

TEST_CASE("batchnorm3d zero-variance channel collapses to beta") {
  Tensor<double> x = Tensor<double>::full({2, 1, 2, 2, 2}, 7.0);
  Tensor<double> gamma({1}, {1.5});
  Tensor<double> beta({1}, {-0.25});
  Tensor<double> rm({1}), rv = Tensor<double>::full({1}, 1.0);
  kernels::BatchNormSaved<double> saved;
  const Tensor<double> y = kernels::batchnorm3d_train(x, gamma, beta, 1e-5, 0.1, rm, rv, saved);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(-0.25).epsilon(1e-9));
}

TEST_CASE("batchnorm3d hand case {0,2} -> {-1,+1}") {
  Tensor<double> x({2, 1, 1, 1, 1}, {0.0, 2.0});
  Tensor<double> gamma({1}, {1.0});
  Tensor<double> beta({1});
  Tensor<double> rm({1}), rv = Tensor<double>::full({1}, 1.0);
  kernels::BatchNormSaved<double> saved;
  const Tensor<double> y = kernels::batchnorm3d_train(x, gamma, beta, 1e-12, 0.1, rm, rv, saved);
  CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-6));
  // momentum update: 0.9*0 + 0.1*1 = 0.1 mean, 0.9*1 + 0.1*1
  CHECK(rm[0] == doctest::Approx(0.1));
  CHECK(rv[0] == doctest::Approx(1.0));
}

TEST_CASE("batchnorm3d eval with identity stats is gamma*x+beta") {
  Rng rng(18);
  const Tensor<double> x = random_tensor({1, 2, 2, 2, 2}, rng);
  Tensor<double> gamma({2}, {2.0, 0.5});
  Tensor<double> beta({2}, {1.0, -1.0});
  Tensor<double> rm({2});
  Tensor<double> rv = Tensor<double>::full({2}, 1.0);
  const Tensor<double> y = kernels::batchnorm3d_eval(x, gamma, beta, 0.0, rm, rv);
  for (int64_t c = 0; c < 2; ++c) {
    for (int64_t s = 0; s < 8; ++s) {
      CHECK(y[c * 8 + s] == doctest::Approx(gamma[c] * x[c * 8 + s] + beta[c]).epsilon(1e-12));
    }
  }
}

TEST_CASE("batchnorm3d train requires at least two values per channel") {
  Tensor<double> x({1, 1, 1, 1, 1});
  Tensor<double> gamma({1}), beta({1}), rm({1}), rv({1});
  kernels::BatchNormSaved<double> saved;
  CHECK_THROWS_AS(kernels::batchnorm3d_train(x, gamma, beta, 1e-5, 0.1, rm, rv, saved), Error);
}

TEST_CASE("softmax spec cases") {
  const Tensor<double> u = kernels::softmax(Tensor<double>({3}, {1, 1, 1}));
  for (int i = 0; i < 3; ++i) CHECK(u[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  const Tensor<double> two = kernels::softmax(Tensor<double>({2}, {0.0, std::log(2.0)}));
  CHECK(two[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(two[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  const Tensor<double> big = kernels::softmax(Tensor<double>({2}, {1000.0, 0.0}));
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(big[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and shift invariance holds") {
  Rng rng(19);
  const Tensor<double> x = random_tensor({4, 6}, rng, 3.0);
  const Tensor<double> y = kernels::softmax(x);
  for (int64_t r = 0; r < 4; ++r) {
    double sum = 0.0;
    for (int64_t j = 0; j < 6; ++j) sum += y[r * 6 + j];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  Tensor<double> shifted = x;
  for (int64_t r = 0; r < 4; ++r) {
    for (int64_t j = 0; j < 6; ++j) shifted[r * 6 + j] += 17.5;
  }
  CHECK(max_abs_diff(kernels::softmax(shifted), y) < 1e-6);
}

TEST_CASE("softmax is monotone in its inputs") {
  Tensor<double> x({3}, {0.2, -0.7, 1.1});
  const Tensor<double> before = kernels::softmax(x);
  x[1] += 0.5;
  const Tensor<double> after = kernels::softmax(x);
  CHECK(after[1] > before[1]);
  CHECK(after[0] < before[0]);
}

TEST_CASE("layernorm spec cases") {
  kernels::LayerNormSaved<double> saved;
  Tensor<double> gamma = Tensor<double>::full({3}, 1.0);
  Tensor<double> beta({3});
  const Tensor<double> c = kernels::layernorm(Tensor<double>::full({3}, 4.2), gamma, beta, 1e-5, saved);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(c[i]) < 1e-9);

  Tensor<double> g2 = Tensor<double>::full({2}, 1.0);
  Tensor<double> b2({2});
  const Tensor<double> pm = kernels::layernorm(Tensor<double>({2}, {-1, 1}), g2, b2, 1e-12, saved);
  CHECK(pm[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(pm[1] == doctest::Approx(1.0).epsilon(1e-6));

  Tensor<double> zero_gamma({2});
  Tensor<double> some_beta({2}, {0.5, -2.0});
  const Tensor<double> bb =
      kernels::layernorm(Tensor<double>({2}, {3.0, 9.0}), zero_gamma, some_beta, 1e-5, saved);
  CHECK(bb[0] == doctest::Approx(0.5));
  CHECK(bb[1] == doctest::Approx(-2.0));
}

TEST_CASE("activation spec cases") {
  const Tensor<double> r = kernels::relu(Tensor<double>({2}, {-2.0, 3.0}));
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 3.0);

  const Tensor<double> g = kernels::gelu(Tensor<double>({2}, {0.0, 1.0}));
  CHECK(g[0] == 0.0);
  CHECK(g[1] == doctest::Approx(0.8412).epsilon(2e-4));
}

TEST_CASE("mean over tokens") {
  const Tensor<double> one = kernels::mean_tokens(Tensor<double>({1, 3}, {1, 2, 3}));
  CHECK(one[0] == 1.0);
  CHECK(one[2] == 3.0);

  const Tensor<double> two = kernels::mean_tokens(Tensor<double>({2, 2}, {0, 2, 2, 0}));
  CHECK(two[0] == doctest::Approx(1.0));
  CHECK(two[1] == doctest::Approx(1.0));

  Rng rng(20);
  Tensor<double> x = random_tensor({5, 3}, rng);
  const Tensor<double> base = kernels::mean_tokens(x);
  Tensor<double> perm({5, 3});
  const int order[5] = {3, 0, 4, 2, 1};
  for (int64_t t = 0; t < 5; ++t) {
    for (int64_t j = 0; j < 3; ++j) perm[t * 3 + j] = x[order[t] * 3 + j];
  }
  CHECK(max_abs_diff(kernels::mean_tokens(perm), base) < 1e-12);
}

TEST_CASE("loss spec cases") {
  const Tensor<double> v({3}, {1.0, -2.0, 0.5});
  CHECK(kernels::mse(v, v) == 0.0);
  CHECK(kernels::mse(Tensor<double>({2}, {0, 0}), Tensor<double>({2}, {1, 1})) ==
        doctest::Approx(1.0));

  Tensor<double> sm;
  const Tensor<double> logits = Tensor<double>::full({1, 4}, 0.37);
  for (int label = 0; label < 4; ++label) {
    CHECK(kernels::cross_entropy(logits, {label}, sm) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
}

TEST_CASE("large kernels agree with oracles across the parallel threshold") {
  // shapes here push total work past the point where worker threads engage,
  // so this exercises the chunked code path, not just the serial fallback
  Rng rng(46);
  const Tensor<double> a = random_tensor({120, 96}, rng);
  const Tensor<double> b = random_tensor({96, 110}, rng);
  CHECK(max_abs_diff(kernels::matmul(a, b), matmul_oracle(a, b)) < 1e-10);

  const Tensor<double> x = random_tensor({4, 2, 12, 12, 12}, rng);
  const Tensor<double> w = random_tensor({6, 1, 3, 3, 3}, rng);
  const Tensor<double> bias = random_tensor({6}, rng);
  const Tensor<double> y = kernels::conv3d_grouped(x, w, bias, 2, {1, 1, 1});
  const Tensor<double> o = conv3d_plain_oracle_grouped(x, w, bias, 2, {1, 1, 1});
  CHECK(max_abs_diff(y, o) < 1e-10);
}

TEST_CASE("permute round trip and transpose") {
  Rng rng(21);
  const Tensor<double> x = random_tensor({2, 3, 4}, rng);
  const std::vector<int> perm{2, 0, 1};
  const Tensor<double> p = kernels::permute(x, perm);
  CHECK(p.shape() == Shape{4, 2, 3});
  CHECK(bit_equal(kernels::permute(p, kernels::inverse_permutation(perm)), x));
  CHECK(p.at({3, 1, 2}) == x.at({1, 2, 3}));

  const Tensor<double> m = random_tensor({3, 5}, rng);
  const Tensor<double> t = kernels::transpose2d(m);
  CHECK(t.at({4, 2}) == m.at({2, 4}));
}

TEST_CASE("replace and select token") {
  Rng rng(22);
  const Tensor<double> x = random_tensor({2, 5, 3}, rng);
  const Tensor<double> v({3}, {9, 8, 7});
  const Tensor<double> y = kernels::replace_token(x, 2, v);
  for (int64_t n = 0; n < 2; ++n) {
    for (int64_t t = 0; t < 5; ++t) {
      for (int64_t j = 0; j < 3; ++j) {
        const double expect = t == 2 ? v[j] : x[(n * 5 + t) * 3 + j];
        CHECK(y[(n * 5 + t) * 3 + j] == expect);
      }
    }
  }
  const Tensor<double> s = kernels::select_token(y, 2);
  CHECK(s.shape() == Shape{2, 3});
  for (int64_t n = 0; n < 2; ++n) {
    for (int64_t j = 0; j < 3; ++j) CHECK(s[n * 3 + j] == v[j]);
  }
}

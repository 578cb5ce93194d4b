#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mct/mce.hpp"
#include "support/grad_check.hpp"
#include "support/synthetic.hpp"

using namespace mct;

namespace {

Patch ramp_patch(int64_t w, int64_t bands) {
  Patch p;
  p.size = w;
  p.bands = bands;
  p.values.resize(static_cast<size_t>(w * w * bands));
  for (int64_t r = 0; r < w; ++r)
    for (int64_t c = 0; c < w; ++c)
      for (int64_t b = 0; b < bands; ++b) {
        p.values[static_cast<size_t>((r * w + c) * bands + b)] =
            static_cast<float>(b + 1000 * r + 100 * c);
      }
  return p;
}

MceConfig toy_config() {
  MceConfig cfg;
  cfg.groups = 2;
  cfg.k_spectral = 3;
  cfg.stride_spectral = 1;
  cfg.c1 = 2;
  cfg.c2 = 2;
  cfg.d_model = 16;
  cfg.patch = 9;
  cfg.bands = 12;
  return cfg;
}

Tensor<float> random_patches(int64_t n, const MceConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t({n, cfg.patch, cfg.patch, cfg.bands});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.next_normal());
  return t;
}

}  // namespace

TEST_CASE("spectral partition: 204 bands in 4 slabs of 51") {
  const auto bounds = spectral_partition_bounds(204, 4);
  REQUIRE(bounds.size() == 4);
  CHECK(bounds[0] == std::pair<int64_t, int64_t>{0, 51});
  CHECK(bounds[1] == std::pair<int64_t, int64_t>{51, 102});
  CHECK(bounds[2] == std::pair<int64_t, int64_t>{102, 153});
  CHECK(bounds[3] == std::pair<int64_t, int64_t>{153, 204});

  const Patch p = ramp_patch(3, 204);
  const auto slabs = spectral_partition(p, 4);
  REQUIRE(slabs.size() == 4);
  for (int g = 0; g < 4; ++g) {
    CHECK(slabs[static_cast<size_t>(g)].shape() == Shape{3, 3, 51});
  }
  CHECK(slabs[2].at({1, 2, 0}) == p.at(1, 2, 102));
}

TEST_CASE("spectral partition: G=1 identity and concat round trip") {
  const Patch p = ramp_patch(3, 6);
  const auto one = spectral_partition(p, 1);
  REQUIRE(one.size() == 1);
  for (int64_t i = 0; i < one[0].numel(); ++i) CHECK(one[0][i] == p.values[static_cast<size_t>(i)]);

  const auto slabs = spectral_partition(p, 3);
  for (int64_t r = 0; r < 3; ++r)
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t b = 0; b < 6; ++b) {
        CHECK(slabs[static_cast<size_t>(b / 2)].at({r, c, b % 2}) == p.at(r, c, b));
      }
}

TEST_CASE("indivisible band count is rejected") {
  CHECK_THROWS_AS(spectral_partition_bounds(10, 4), Error);
  MceConfig cfg = toy_config();
  cfg.bands = 13;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("config shape law: spectral lengths and grid") {
  MceConfig cfg;
  cfg.groups = 4;
  cfg.k_spectral = 7;
  cfg.stride_spectral = 2;
  cfg.bands = 204;
  cfg.patch = 9;
  cfg.c1 = 8;
  cfg.c2 = 16;
  cfg.d_model = 64;
  cfg.validate();
  CHECK(cfg.bands_per_group() == 51);
  CHECK(cfg.spectral_len(1) == 23);
  CHECK(cfg.spectral_len(2) == 9);
  CHECK(cfg.grid_side() == 5);
  CHECK(cfg.token_count() == 25);
  CHECK(cfg.center_index() == 12);
  CHECK(cfg.site_feature_len() == 4 * 16 * 9);
}

TEST_CASE("config rejects spectral kernel larger than the subband") {
  MceConfig cfg = toy_config();
  cfg.k_spectral = 7;  // bands per group is 6
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.k_spectral = 3;
  cfg.stride_spectral = 2;  // 6 -> 2 -> too short for the second conv
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.patch = 5;
  cfg.stride_spectral = 1;
  CHECK_NOTHROW(cfg.validate());  // 1x1 grid is legal
  cfg.patch = 3;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("mce forward: token grid, center index, and shapes") {
  const MceConfig cfg = toy_config();
  ParamStore<float> store;
  const auto mce = MceModule<float>::build(store, cfg, 3);
  const Tensor<float> patches = random_patches(2, cfg, 17);
  Tape<float> tape;
  const TokenSequence<float> seq = mce.forward(&tape, patches, /*train_mode=*/true);
  CHECK(seq.tokens->value.shape() == Shape{2, 25, 16});
  CHECK(seq.grid_h == 5);
  CHECK(seq.grid_w == 5);
  CHECK(seq.center_index == 12);
}

TEST_CASE("iie input crops the central window in token order") {
  const MceConfig cfg = toy_config();
  ParamStore<float> store;
  const auto mce = MceModule<float>::build(store, cfg, 3);
  Tensor<float> patches({1, 9, 9, 12});
  Rng rng(23);
  for (int64_t i = 0; i < patches.numel(); ++i) patches[i] = static_cast<float>(rng.next_normal());
  const Tensor<float> crop = mce.iie_input(patches);
  CHECK(crop.shape() == Shape{1, 25, 12});
  // token (i,j) carries the spectrum of patch pixel (i+2, j+2)
  for (int64_t i = 0; i < 5; ++i)
    for (int64_t j = 0; j < 5; ++j)
      for (int64_t b = 0; b < 12; ++b) {
        CHECK(crop[(i * 5 + j) * 12 + b] == patches[(((i + 2) * 9) + (j + 2)) * 12 + b]);
      }
  // center token of the crop is the patch center pixel
  for (int64_t b = 0; b < 12; ++b) {
    CHECK(crop[(12 * 12) + b] == patches[((4 * 9) + 4) * 12 + b]);
  }
}

TEST_CASE("pixels with identical spectra share identical iie embeddings") {
  const MceConfig cfg = toy_config();
  ParamStore<float> store;
  const auto mce = MceModule<float>::build(store, cfg, 3);
  Tensor<float> patches({1, 9, 9, 12});
  Rng rng(29);
  for (int64_t i = 0; i < patches.numel(); ++i) patches[i] = static_cast<float>(rng.next_normal());
  // force pixels (3,3) and (5,6) to the same spectrum
  for (int64_t b = 0; b < 12; ++b) {
    patches[((5 * 9) + 6) * 12 + b] = patches[((3 * 9) + 3) * 12 + b];
  }
  const VarPtr<float> emb = mce.iie_forward(nullptr, patches);
  // tokens (1,1) and (3,4) in the 5x5 grid
  const int64_t t1 = 1 * 5 + 1, t2 = 3 * 5 + 4;
  for (int64_t d = 0; d < 16; ++d) {
    CHECK(emb->value[t1 * 16 + d] == emb->value[t2 * 16 + d]);
  }
}

TEST_CASE("fusion additivity: zero IIE weights equal the disabled branch") {
  MceConfig cfg = toy_config();
  ParamStore<float> store_on;
  const auto mce_on = MceModule<float>::build(store_on, cfg, 3);
  mce_on.iie.weight->value.fill(0.0f);
  mce_on.iie.bias->value.fill(0.0f);

  MceConfig cfg_off = cfg;
  cfg_off.iie_enabled = false;
  ParamStore<float> store_off;
  const auto mce_off = MceModule<float>::build(store_off, cfg_off, 3);

  const Tensor<float> patches = random_patches(2, cfg, 31);
  const auto on = mce_on.forward(nullptr, patches, true);
  const auto off = mce_off.forward(nullptr, patches, true);
  CHECK(bit_equal(on.tokens->value, off.tokens->value));

  // disabled branch means tokens equal the projected conv branch exactly
  ParamStore<float> store_spce;
  const auto mce_spce = MceModule<float>::build(store_spce, cfg_off, 3);
  const auto spce_only = mce_spce.spce_forward(nullptr, patches, true);
  CHECK(bit_equal(off.tokens->value, spce_only->value));
}

TEST_CASE("every mce parameter receives gradient on random input") {
  const MceConfig cfg = toy_config();
  ParamStore<float> store;
  const auto mce = MceModule<float>::build(store, cfg, 3);
  const Tensor<float> patches = random_patches(3, cfg, 37);
  Tape<float> tape;
  const auto seq = mce.forward(&tape, patches, true);
  Rng rng(41);
  Tensor<float> r(seq.tokens->value.shape());
  for (int64_t i = 0; i < r.numel(); ++i) r[i] = static_cast<float>(rng.next_normal());
  auto loss = ops::weighted_sum(&tape, seq.tokens, r);
  store.zero_grad();
  tape.backward(loss);
  for (size_t i = 0; i < store.param_count(); ++i) {
    const auto& p = store.param(i);
    double norm = 0.0;
    for (int64_t j = 0; j < p.var->grad.numel(); ++j) {
      norm += std::abs(static_cast<double>(p.var->grad[j]));
    }
    CHECK_MESSAGE(norm > 0.0, p.name);
  }
}

TEST_CASE("group isolation: other-group perturbations leave conv weight grads untouched") {
  Rng rng(43);
  const int64_t g = 2;
  Tensor<double> x({1, 2, 4, 4, 4});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.next_normal();
  Tensor<double> w({4, 1, 2, 2, 2});
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.next_normal();
  Tensor<double> r({1, 4, 3, 3, 3});
  for (int64_t i = 0; i < r.numel(); ++i) r[i] = rng.next_normal();

  auto grads_for = [&](const Tensor<double>& input) {
    Tape<double> tape;
    auto xv = make_leaf<double>(input);
    auto wv = make_leaf<double>(w, true);
    auto bv = make_leaf<double>(Tensor<double>({4}), true);
    auto y = ops::conv3d_grouped(&tape, xv, wv, bv, g, {1, 1, 1});
    auto loss = ops::weighted_sum(&tape, y, r);
    tape.backward(loss);
    return wv->grad;
  };

  const Tensor<double> g0 = grads_for(x);
  Tensor<double> x2 = x;
  for (int64_t i = 0; i < 64; ++i) x2[64 + i] += 2.5;  // group-2 channel only
  const Tensor<double> g1 = grads_for(x2);
  // group-1 output channels are co 0,1 -> their weight slices are untouched
  for (int64_t i = 0; i < 2 * 8; ++i) CHECK(g0[i] == g1[i]);
  bool changed = false;
  for (int64_t i = 2 * 8; i < g0.numel(); ++i) {
    if (g0[i] != g1[i]) changed = true;
  }
  CHECK(changed);
}

TEST_CASE("fd: full mce forward against finite differences") {
  MceConfig cfg = toy_config();
  cfg.patch = 5;  // 1x1 grid keeps this check fast
  ParamStore<double> store;
  const auto mce = MceModule<double>::build(store, cfg, 3);
  Rng rng(47);
  Tensor<double> patches({2, 5, 5, 12});
  for (int64_t i = 0; i < patches.numel(); ++i) patches[i] = rng.next_normal();
  Tensor<double> r({2, 1, 16});
  for (int64_t i = 0; i < r.numel(); ++i) r[i] = rng.next_normal();

  std::vector<VarPtr<double>> leaves;
  for (size_t i = 0; i < store.param_count(); ++i) leaves.push_back(store.param(i).var);
  auto res = mct::testing::check_gradients(
      [&](Tape<double>* t) {
        const auto seq = mce.forward(t, patches, /*train_mode=*/true);
        return ops::weighted_sum(t, seq.tokens, r);
      },
      leaves);
  CHECK_MESSAGE(res.ok, res.worst);
  CHECK(res.max_rel_err < 1e-3);
}

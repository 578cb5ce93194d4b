#pragma once

// Multiscale convolutional embedding: a grouped 3D-conv branch over equal
// spectral subbands fused by addition with a shared per-pixel linear
// embedding. Valid (no-pad) 3x3 spatial kernels applied twice shrink the
// token grid to (w-4) x (w-4).

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mct/autograd.hpp"
#include "mct/hsi.hpp"
#include "mct/params.hpp"

namespace mct {

struct MceConfig {
  int groups = 4;
  int k_spatial = 3;        // fixed spatial kernel side
  int k_spectral = 7;       // spectral kernel extent
  int stride_spectral = 2;  // spectral stride; spatial stride is 1
  int c1 = 8;               // stage-1 channels per group
  int c2 = 16;              // stage-2 channels per group
  int d_model = 64;
  int patch = 9;  // odd window side w
  int bands = 0;
  bool iie_enabled = true;
  // Pretraining ablation switch: blank the raw center pixel before any
  // embedding, closing the conv receptive-field path into the target.
  bool zero_center_input = false;

  int64_t grid_side() const { return patch - 2 * (k_spatial - 1); }
  int64_t token_count() const { return grid_side() * grid_side(); }
  int64_t center_index() const { return (token_count() - 1) / 2; }
  int64_t bands_per_group() const { return bands / groups; }

  int64_t spectral_len(int stage) const {
    int64_t len = bands_per_group();
    for (int s = 0; s < stage; ++s) {
      len = (len - k_spectral) / stride_spectral + 1;
    }
    return len;
  }
  // flattened per-site feature length before the fusion projection
  int64_t site_feature_len() const { return static_cast<int64_t>(groups) * c2 * spectral_len(2); }

  void validate() const {
    if (bands < 1) throw Error::config("mce: bands must be set");
    if (groups < 1) throw Error::config("mce: groups must be >= 1");
    if (bands % groups != 0) {
      throw Error::config("mce: bands " + std::to_string(bands) +
                          " not divisible by groups " + std::to_string(groups) +
                          "; crop trailing bands first");
    }
    if (patch % 2 == 0) throw Error::config("mce: patch size must be odd");
    if (k_spatial != 3) throw Error::config("mce: spatial kernel is fixed at 3");
    if (grid_side() < 1) {
      throw Error::config("mce: patch " + std::to_string(patch) +
                          " too small for two valid 3x3 convolutions");
    }
    if (k_spectral < 1 || stride_spectral < 1) {
      throw Error::config("mce: spectral kernel/stride must be >= 1");
    }
    int64_t len = bands_per_group();
    for (int stage = 1; stage <= 2; ++stage) {
      if (len < k_spectral) {
        throw Error::config("mce: spectral length " + std::to_string(len) +
                            " shorter than kernel " + std::to_string(k_spectral) +
                            " at conv stage " + std::to_string(stage));
      }
      len = (len - k_spectral) / stride_spectral + 1;
    }
    if (c1 < 1 || c2 < 1 || d_model < 1) throw Error::config("mce: channel widths must be >= 1");
  }
};

// Embedded sample: tokens[N, L, d_model] over an h' x w' grid, row-major,
// with the index of the grid-center token.
template <typename T>
struct TokenSequence {
  VarPtr<T> tokens;
  int64_t grid_h = 0;
  int64_t grid_w = 0;
  int64_t center_index = 0;
};

// Contiguous equal spectral slabs; concatenating them restores the patch.
inline std::vector<std::pair<int64_t, int64_t>> spectral_partition_bounds(int64_t bands,
                                                                          int64_t groups) {
  if (groups < 1 || bands % groups != 0) {
    throw Error::config("spectral partition: bands " + std::to_string(bands) +
                        " not divisible by groups " + std::to_string(groups));
  }
  std::vector<std::pair<int64_t, int64_t>> bounds;
  const int64_t len = bands / groups;
  for (int64_t g = 0; g < groups; ++g) bounds.emplace_back(g * len, (g + 1) * len);
  return bounds;
}

inline std::vector<Tensor<float>> spectral_partition(const Patch& patch, int64_t groups) {
  const auto bounds = spectral_partition_bounds(patch.bands, groups);
  std::vector<Tensor<float>> slabs;
  slabs.reserve(bounds.size());
  for (const auto& [lo, hi] : bounds) {
    Tensor<float> s({patch.size, patch.size, hi - lo});
    for (int64_t r = 0; r < patch.size; ++r) {
      for (int64_t c = 0; c < patch.size; ++c) {
        for (int64_t b = lo; b < hi; ++b) {
          s[(r * patch.size + c) * (hi - lo) + (b - lo)] = patch.at(r, c, b);
        }
      }
    }
    slabs.push_back(std::move(s));
  }
  return slabs;
}

template <typename T>
struct BatchNormLayer {
  VarPtr<T> gamma, beta;
  Tensor<T>* running_mean = nullptr;
  Tensor<T>* running_var = nullptr;
  Tensor<T>* batches_seen = nullptr;
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNormLayer build(ParamStore<T>& store, const std::string& prefix, int64_t channels) {
    BatchNormLayer bn;
    bn.gamma = store.add_param(prefix + ".gamma", Tensor<T>::full({channels}, T(1)));
    bn.beta = store.add_param(prefix + ".beta", Tensor<T>({channels}));
    bn.running_mean = &store.add_buffer(prefix + ".running_mean", Tensor<T>({channels}));
    bn.running_var = &store.add_buffer(prefix + ".running_var", Tensor<T>::full({channels}, T(1)));
    bn.batches_seen = &store.add_buffer(prefix + ".batches_seen", Tensor<T>({1}));
    return bn;
  }

  VarPtr<T> forward(Tape<T>* tape, const VarPtr<T>& x, bool train_mode) const {
    return ops::batchnorm3d(tape, x, gamma, beta, eps, momentum, train_mode, *running_mean,
                            *running_var, *batches_seen);
  }
};

template <typename T>
struct LinearLayer {
  VarPtr<T> weight, bias;

  static LinearLayer build(ParamStore<T>& store, const std::string& prefix, int64_t din,
                           int64_t dout, uint64_t seed) {
    LinearLayer l;
    const double stddev = std::sqrt(2.0 / static_cast<double>(din + dout));
    l.weight = store.add_param(prefix + ".weight",
                               normal_init<T>({din, dout}, seed, prefix + ".weight", stddev));
    l.bias = store.add_param(prefix + ".bias", Tensor<T>({dout}));
    return l;
  }

  VarPtr<T> forward(Tape<T>* tape, const VarPtr<T>& x) const {
    return ops::linear(tape, x, weight, bias);
  }
};

template <typename T>
struct Conv3dLayer {
  VarPtr<T> weight, bias;
  int64_t groups = 1;
  std::array<int64_t, 3> stride{1, 1, 1};

  static Conv3dLayer build(ParamStore<T>& store, const std::string& prefix, int64_t cout,
                           int64_t cin_per_group, std::array<int64_t, 3> kernel, int64_t groups,
                           std::array<int64_t, 3> stride, uint64_t seed) {
    Conv3dLayer c;
    c.groups = groups;
    c.stride = stride;
    const int64_t fan_in = cin_per_group * kernel[0] * kernel[1] * kernel[2];
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    c.weight = store.add_param(
        prefix + ".weight",
        normal_init<T>({cout, cin_per_group, kernel[0], kernel[1], kernel[2]}, seed,
                       prefix + ".weight", stddev));
    c.bias = store.add_param(prefix + ".bias", Tensor<T>({cout}));
    return c;
  }

  VarPtr<T> forward(Tape<T>* tape, const VarPtr<T>& x) const {
    return ops::conv3d_grouped(tape, x, weight, bias, groups, stride);
  }
};

template <typename T>
class MceModule {
 public:
  MceConfig cfg;
  Conv3dLayer<T> conv1, conv2;
  BatchNormLayer<T> bn1, bn2;
  LinearLayer<T> proj;  // fusion/compression of the flattened conv site features
  LinearLayer<T> iie;   // shared per-pixel spectral embedding

  static MceModule build(ParamStore<T>& store, const MceConfig& cfg, uint64_t seed) {
    cfg.validate();
    MceModule m;
    m.cfg = cfg;
    const int64_t g = cfg.groups;
    const std::array<int64_t, 3> kernel{cfg.k_spectral, cfg.k_spatial, cfg.k_spatial};
    const std::array<int64_t, 3> stride{cfg.stride_spectral, 1, 1};
    m.conv1 = Conv3dLayer<T>::build(store, "mce.spce.conv1", g * cfg.c1, 1, kernel, g, stride, seed);
    m.bn1 = BatchNormLayer<T>::build(store, "mce.spce.bn1", g * cfg.c1);
    m.conv2 =
        Conv3dLayer<T>::build(store, "mce.spce.conv2", g * cfg.c2, cfg.c1, kernel, g, stride, seed);
    m.bn2 = BatchNormLayer<T>::build(store, "mce.spce.bn2", g * cfg.c2);
    m.proj = LinearLayer<T>::build(store, "mce.spce.proj", cfg.site_feature_len(), cfg.d_model, seed);
    if (cfg.iie_enabled) {
      m.iie = LinearLayer<T>::build(store, "mce.iie", cfg.bands, cfg.d_model, seed);
    }
    return m;
  }

  // patches: [N, w, w, B] raw (already band-normalized) input samples.
  // Regroups bands into [N, G, B/G, w, w] so subband g is channel g.
  Tensor<T> conv_input(const Tensor<T>& patches) const {
    const int64_t n = patches.extent(0), w = cfg.patch, b = cfg.bands;
    const int64_t bpg = cfg.bands_per_group();
    Tensor<T> x({n, cfg.groups, bpg, w, w});
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t r = 0; r < w; ++r) {
        for (int64_t c = 0; c < w; ++c) {
          const T* src = patches.data() + ((i * w + r) * w + c) * b;
          for (int64_t band = 0; band < b; ++band) {
            const int64_t g = band / bpg, d = band % bpg;
            x[(((i * cfg.groups + g) * bpg + d) * w + r) * w + c] = src[band];
          }
        }
      }
    }
    return x;
  }

  // Central (w-4)x(w-4) pixel spectra in token order: [N, L, B].
  Tensor<T> iie_input(const Tensor<T>& patches) const {
    const int64_t n = patches.extent(0), w = cfg.patch, b = cfg.bands;
    const int64_t side = cfg.grid_side();
    const int64_t off = (w - side) / 2;
    Tensor<T> x({n, side * side, b});
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t r = 0; r < side; ++r) {
        for (int64_t c = 0; c < side; ++c) {
          const T* src = patches.data() + ((i * w + (r + off)) * w + (c + off)) * b;
          T* dst = x.data() + ((i * side * side) + r * side + c) * b;
          for (int64_t band = 0; band < b; ++band) dst[band] = src[band];
        }
      }
    }
    return x;
  }

  // 3DSPCE branch: two (conv -> bn -> relu) stages, flatten per site, project.
  VarPtr<T> spce_forward(Tape<T>* tape, const Tensor<T>& patches, bool train_mode) const {
    auto x = make_leaf<T>(conv_input(patches));
    auto h = conv1.forward(tape, x);
    h = bn1.forward(tape, h, train_mode);
    h = ops::relu(tape, h);
    h = conv2.forward(tape, h);
    h = bn2.forward(tape, h, train_mode);
    h = ops::relu(tape, h);
    // [N, C, D, H, W] -> [N, H, W, C, D] -> [N, L, C*D]
    h = ops::permute(tape, h, {0, 3, 4, 1, 2});
    const int64_t n = patches.extent(0);
    h = ops::reshape(tape, h, {n, cfg.token_count(), cfg.site_feature_len()});
    return proj.forward(tape, h);
  }

  VarPtr<T> iie_forward(Tape<T>* tape, const Tensor<T>& patches) const {
    auto x = make_leaf<T>(iie_input(patches));
    return iie.forward(tape, x);
  }

  TokenSequence<T> forward(Tape<T>* tape, const Tensor<T>& patches, bool train_mode) const {
    if (patches.rank() != 4 || patches.extent(1) != cfg.patch || patches.extent(2) != cfg.patch ||
        patches.extent(3) != cfg.bands) {
      throw Error::shape("mce: expected patches [N," + std::to_string(cfg.patch) + "," +
                         std::to_string(cfg.patch) + "," + std::to_string(cfg.bands) + "], got " +
                         shape_str(patches.shape()));
    }
    const Tensor<T>* input = &patches;
    Tensor<T> blanked;
    if (cfg.zero_center_input) {
      blanked = patches;
      const int64_t n = patches.extent(0), w = cfg.patch, b = cfg.bands;
      const int64_t ctr = (w - 1) / 2;
      for (int64_t i = 0; i < n; ++i) {
        T* px = blanked.data() + ((i * w + ctr) * w + ctr) * b;
        for (int64_t band = 0; band < b; ++band) px[band] = T(0);
      }
      input = &blanked;
    }
    VarPtr<T> tokens = spce_forward(tape, *input, train_mode);
    if (cfg.iie_enabled) {
      tokens = ops::add(tape, tokens, iie_forward(tape, *input));
    }
    TokenSequence<T> seq;
    seq.tokens = tokens;
    seq.grid_h = cfg.grid_side();
    seq.grid_w = cfg.grid_side();
    seq.center_index = cfg.center_index();
    return seq;
  }
};

}  // namespace mct

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mct/common.hpp"
#include "mct/rng.hpp"
#include "mct/tensor.hpp"

namespace mct {

// Scene cube, values[h][w][b] row-major. Stored as f32, matching the .hsic
// container; statistics are computed in double.
struct HsiCube {
  int64_t height = 0;
  int64_t width = 0;
  int64_t bands = 0;
  std::vector<float> values;
  std::string name;

  float at(int64_t r, int64_t c, int64_t b) const {
    return values[static_cast<size_t>((r * width + c) * bands + b)];
  }
  float& at(int64_t r, int64_t c, int64_t b) {
    return values[static_cast<size_t>((r * width + c) * bands + b)];
  }
  int64_t pixels() const { return height * width; }
};

// Label 0 means unlabeled; classes are 1..classes.
struct GroundTruth {
  int64_t height = 0;
  int64_t width = 0;
  int classes = 0;
  std::vector<uint16_t> labels;
  std::vector<std::string> class_names;

  uint16_t label_at(int64_t r, int64_t c) const {
    return labels[static_cast<size_t>(r * width + c)];
  }
  std::vector<int64_t> class_counts() const;
};

struct Patch {
  int64_t size = 0;   // spatial side w (odd)
  int64_t bands = 0;
  std::vector<float> values;  // [w][w][b] row-major
  int64_t center_row = 0;
  int64_t center_col = 0;
  uint16_t label = 0;  // 0 = no label attached

  float at(int64_t r, int64_t c, int64_t b) const {
    return values[static_cast<size_t>((r * size + c) * bands + b)];
  }
};

struct SplitSpec {
  int per_class = 0;
  uint64_t seed = 0;
  std::vector<std::pair<int64_t, int64_t>> train;
  std::vector<std::pair<int64_t, int64_t>> test;
};

// .hsic / .hsig containers: one JSON header line, then the raw payload.
HsiCube load_cube(const std::string& path);
void save_cube(const HsiCube& cube, const std::string& path);
GroundTruth load_gt(const std::string& path);
void save_gt(const GroundTruth& gt, const std::string& path);

// Headerless raw binary + JSON sidecar ingestion (the convert subcommand).
void convert_raw_cube(const std::string& raw_path, const std::string& sidecar_path,
                      const std::string& out_path);
void convert_raw_gt(const std::string& raw_path, const std::string& sidecar_path,
                    const std::string& out_path);

// Per-band z-score over all pixels; constant bands map to zeros.
HsiCube normalize_bands(const HsiCube& cube);

// w odd; out-of-scene neighbors are mirror-reflected about the border.
Patch extract_patch(const HsiCube& cube, int64_t row, int64_t col, int64_t w);

// Deterministic stratified sampling: exactly per_class train pixels for every
// class, test = all remaining labeled pixels. Pure function of (gt, per_class,
// seed).
SplitSpec stratified_split(const GroundTruth& gt, int per_class, uint64_t seed);

std::string split_to_json(const SplitSpec& split);
SplitSpec split_from_json(const std::string& text);
void save_split(const SplitSpec& split, const std::string& path);
SplitSpec load_split(const std::string& path);

// Label-free uniform sampling over the whole scene; the position sequence is
// a pure function of (seed, epoch).
class PretrainStream {
 public:
  PretrainStream(const HsiCube& cube, int64_t patch_size, int64_t batch, uint64_t seed);
  void start_epoch(int64_t epoch);
  std::vector<Patch> next_batch();

 private:
  const HsiCube* cube_;
  int64_t patch_size_;
  int64_t batch_;
  uint64_t seed_;
  Rng rng_;
};

// Drop trailing bands so the count divides evenly into `groups` subbands.
// Returns the cube unchanged when it already divides.
inline HsiCube crop_bands_to_multiple(const HsiCube& cube, int64_t groups) {
  if (groups < 1) throw Error::config("groups must be >= 1");
  const int64_t kept = (cube.bands / groups) * groups;
  if (kept == cube.bands) return cube;
  if (kept < 1) throw Error::config("fewer bands than groups");
  HsiCube out;
  out.height = cube.height;
  out.width = cube.width;
  out.bands = kept;
  out.name = cube.name;
  out.values.resize(static_cast<size_t>(out.pixels() * kept));
  for (int64_t p = 0; p < cube.pixels(); ++p) {
    const float* src = cube.values.data() + p * cube.bands;
    float* dst = out.values.data() + p * kept;
    for (int64_t b = 0; b < kept; ++b) dst[b] = src[b];
  }
  return out;
}

// Assemble a batch of patches into one [N,w,w,B] tensor of the training
// scalar type.
template <typename T>
Tensor<T> stack_patches(const std::vector<Patch>& patches) {
  if (patches.empty()) throw Error::data("cannot stack an empty patch batch");
  const int64_t n = static_cast<int64_t>(patches.size());
  const int64_t w = patches[0].size;
  const int64_t b = patches[0].bands;
  Tensor<T> out({n, w, w, b});
  for (int64_t i = 0; i < n; ++i) {
    const Patch& p = patches[static_cast<size_t>(i)];
    if (p.size != w || p.bands != b) throw Error::shape("patch batch has mixed shapes");
    T* dst = out.data() + i * w * w * b;
    for (size_t j = 0; j < p.values.size(); ++j) dst[j] = static_cast<T>(p.values[j]);
  }
  return out;
}

}  // namespace mct

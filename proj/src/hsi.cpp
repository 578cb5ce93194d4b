#include "mct/hsi.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mct {

using nlohmann::json;

namespace {

json parse_json(const std::string& text, const std::string& what) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw Error::data("invalid JSON in " + what);
  return j;
}

json read_header_line(std::istream& is, const std::string& path) {
  std::string line;
  if (!std::getline(is, line)) throw Error::data("missing header line in " + path);
  return parse_json(line, path);
}

int64_t require_positive(const json& j, const char* key, const std::string& what) {
  if (!j.contains(key) || !j[key].is_number_integer() || j[key].get<int64_t>() <= 0) {
    throw Error::data("header field '" + std::string(key) + "' missing or invalid in " + what);
  }
  return j[key].get<int64_t>();
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error::io("cannot open " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void read_payload(std::istream& is, void* dst, size_t bytes, const std::string& path) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
  if (static_cast<size_t>(is.gcount()) != bytes) {
    throw Error::data("truncated payload in " + path);
  }
}

}  // namespace

std::vector<int64_t> GroundTruth::class_counts() const {
  std::vector<int64_t> counts(static_cast<size_t>(classes) + 1, 0);
  for (uint16_t l : labels) ++counts[l];
  return counts;
}

HsiCube load_cube(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error::io("cannot open cube: " + path);
  const json hdr = read_header_line(is, path);
  if (hdr.value("magic", "") != std::string("HSIC")) {
    throw Error::data("bad cube magic in " + path);
  }
  if (hdr.value("version", 0) != 1) throw Error::data("unsupported cube version in " + path);
  if (hdr.value("dtype", "") != std::string("f32")) {
    throw Error::data("unsupported cube dtype in " + path);
  }
  HsiCube cube;
  cube.height = require_positive(hdr, "height", path);
  cube.width = require_positive(hdr, "width", path);
  cube.bands = require_positive(hdr, "bands", path);
  cube.name = hdr.value("name", "");
  cube.values.resize(static_cast<size_t>(cube.height * cube.width * cube.bands));
  read_payload(is, cube.values.data(), cube.values.size() * sizeof(float), path);
  for (float v : cube.values) {
    if (!std::isfinite(v)) throw Error::data("non-finite value in cube " + path);
  }
  return cube;
}

void save_cube(const HsiCube& cube, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error::io("cannot open cube for writing: " + path);
  json hdr;
  hdr["magic"] = "HSIC";
  hdr["version"] = 1;
  hdr["height"] = cube.height;
  hdr["width"] = cube.width;
  hdr["bands"] = cube.bands;
  hdr["dtype"] = "f32";
  hdr["name"] = cube.name;
  os << hdr.dump() << "\n";
  os.write(reinterpret_cast<const char*>(cube.values.data()),
           static_cast<std::streamsize>(cube.values.size() * sizeof(float)));
  if (!os) throw Error::io("failed writing cube: " + path);
}

GroundTruth load_gt(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error::io("cannot open ground truth: " + path);
  const json hdr = read_header_line(is, path);
  if (hdr.value("magic", "") != std::string("HSIG")) {
    throw Error::data("bad ground-truth magic in " + path);
  }
  if (hdr.value("version", 0) != 1) throw Error::data("unsupported ground-truth version in " + path);
  if (hdr.value("dtype", "") != std::string("u16")) {
    throw Error::data("unsupported ground-truth dtype in " + path);
  }
  GroundTruth gt;
  gt.height = require_positive(hdr, "height", path);
  gt.width = require_positive(hdr, "width", path);
  gt.classes = static_cast<int>(require_positive(hdr, "classes", path));
  if (hdr.contains("class_names")) {
    gt.class_names = hdr["class_names"].get<std::vector<std::string>>();
    if (static_cast<int>(gt.class_names.size()) != gt.classes) {
      throw Error::data("class_names length does not match classes in " + path);
    }
  }
  gt.labels.resize(static_cast<size_t>(gt.height * gt.width));
  read_payload(is, gt.labels.data(), gt.labels.size() * sizeof(uint16_t), path);
  for (uint16_t l : gt.labels) {
    if (l > gt.classes) {
      throw Error::data("label " + std::to_string(l) + " exceeds class count " +
                        std::to_string(gt.classes) + " in " + path);
    }
  }
  return gt;
}

void save_gt(const GroundTruth& gt, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error::io("cannot open ground truth for writing: " + path);
  json hdr;
  hdr["magic"] = "HSIG";
  hdr["version"] = 1;
  hdr["height"] = gt.height;
  hdr["width"] = gt.width;
  hdr["classes"] = gt.classes;
  hdr["dtype"] = "u16";
  if (gt.class_names.empty()) {
    std::vector<std::string> names;
    for (int c = 1; c <= gt.classes; ++c) names.push_back("class_" + std::to_string(c));
    hdr["class_names"] = names;
  } else {
    hdr["class_names"] = gt.class_names;
  }
  os << hdr.dump() << "\n";
  os.write(reinterpret_cast<const char*>(gt.labels.data()),
           static_cast<std::streamsize>(gt.labels.size() * sizeof(uint16_t)));
  if (!os) throw Error::io("failed writing ground truth: " + path);
}

void convert_raw_cube(const std::string& raw_path, const std::string& sidecar_path,
                      const std::string& out_path) {
  const json side = parse_json(read_file(sidecar_path), sidecar_path);
  HsiCube cube;
  cube.height = require_positive(side, "height", sidecar_path);
  cube.width = require_positive(side, "width", sidecar_path);
  cube.bands = require_positive(side, "bands", sidecar_path);
  cube.name = side.value("name", "");
  const std::string raw = read_file(raw_path);
  const size_t expected = static_cast<size_t>(cube.height * cube.width * cube.bands) * sizeof(float);
  if (raw.size() != expected) {
    throw Error::data("raw cube payload is " + std::to_string(raw.size()) + " bytes, expected " +
                      std::to_string(expected));
  }
  cube.values.resize(expected / sizeof(float));
  std::memcpy(cube.values.data(), raw.data(), expected);
  for (float v : cube.values) {
    if (!std::isfinite(v)) throw Error::data("non-finite value in raw cube " + raw_path);
  }
  save_cube(cube, out_path);
}

void convert_raw_gt(const std::string& raw_path, const std::string& sidecar_path,
                    const std::string& out_path) {
  const json side = parse_json(read_file(sidecar_path), sidecar_path);
  GroundTruth gt;
  gt.height = require_positive(side, "height", sidecar_path);
  gt.width = require_positive(side, "width", sidecar_path);
  gt.classes = static_cast<int>(require_positive(side, "classes", sidecar_path));
  if (side.contains("class_names")) {
    gt.class_names = side["class_names"].get<std::vector<std::string>>();
  }
  const std::string raw = read_file(raw_path);
  const size_t expected = static_cast<size_t>(gt.height * gt.width) * sizeof(uint16_t);
  if (raw.size() != expected) {
    throw Error::data("raw ground-truth payload is " + std::to_string(raw.size()) +
                      " bytes, expected " + std::to_string(expected));
  }
  gt.labels.resize(expected / sizeof(uint16_t));
  std::memcpy(gt.labels.data(), raw.data(), expected);
  for (uint16_t l : gt.labels) {
    if (l > gt.classes) {
      throw Error::data("label " + std::to_string(l) + " exceeds class count in " + raw_path);
    }
  }
  save_gt(gt, out_path);
}

HsiCube normalize_bands(const HsiCube& cube) {
  HsiCube out = cube;
  const int64_t pixels = cube.pixels();
  for (int64_t b = 0; b < cube.bands; ++b) {
    double sum = 0.0, sumsq = 0.0;
    for (int64_t p = 0; p < pixels; ++p) {
      const double v = static_cast<double>(cube.values[static_cast<size_t>(p * cube.bands + b)]);
      sum += v;
      sumsq += v * v;
    }
    const double mean = sum / static_cast<double>(pixels);
    double var = sumsq / static_cast<double>(pixels) - mean * mean;
    if (var < 0.0) var = 0.0;
    const double std = std::sqrt(var);
    if (std < 1e-12) {
      for (int64_t p = 0; p < pixels; ++p) {
        out.values[static_cast<size_t>(p * cube.bands + b)] = 0.0f;
      }
    } else {
      const double inv = 1.0 / std;
      for (int64_t p = 0; p < pixels; ++p) {
        const size_t i = static_cast<size_t>(p * cube.bands + b);
        out.values[i] = static_cast<float>((static_cast<double>(cube.values[i]) - mean) * inv);
      }
    }
  }
  return out;
}

namespace {

// Reflect about the border pixel without repeating it: -1 -> 1, n -> n-2.
int64_t mirror_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

}  // namespace

Patch extract_patch(const HsiCube& cube, int64_t row, int64_t col, int64_t w) {
  if (w % 2 == 0) throw Error::config("patch size must be odd, got " + std::to_string(w));
  if (w < 1 || w > std::min(cube.height, cube.width)) {
    throw Error::config("patch size " + std::to_string(w) + " out of range for scene " +
                        std::to_string(cube.height) + "x" + std::to_string(cube.width));
  }
  if (row < 0 || row >= cube.height || col < 0 || col >= cube.width) {
    throw Error::data("patch center out of scene bounds");
  }
  Patch p;
  p.size = w;
  p.bands = cube.bands;
  p.center_row = row;
  p.center_col = col;
  p.values.resize(static_cast<size_t>(w * w * cube.bands));
  const int64_t half = (w - 1) / 2;
  for (int64_t dr = 0; dr < w; ++dr) {
    const int64_t r = mirror_index(row + dr - half, cube.height);
    for (int64_t dc = 0; dc < w; ++dc) {
      const int64_t c = mirror_index(col + dc - half, cube.width);
      const float* src = cube.values.data() + (r * cube.width + c) * cube.bands;
      float* dst = p.values.data() + (dr * w + dc) * cube.bands;
      std::copy(src, src + cube.bands, dst);
    }
  }
  return p;
}

SplitSpec stratified_split(const GroundTruth& gt, int per_class, uint64_t seed) {
  if (per_class < 1) throw Error::config("per_class must be >= 1");
  std::vector<std::vector<std::pair<int64_t, int64_t>>> by_class(
      static_cast<size_t>(gt.classes) + 1);
  for (int64_t r = 0; r < gt.height; ++r) {
    for (int64_t c = 0; c < gt.width; ++c) {
      const uint16_t l = gt.label_at(r, c);
      if (l > 0) by_class[l].emplace_back(r, c);
    }
  }
  SplitSpec split;
  split.per_class = per_class;
  split.seed = seed;
  for (int cls = 1; cls <= gt.classes; ++cls) {
    auto& positions = by_class[static_cast<size_t>(cls)];
    if (static_cast<int>(positions.size()) < per_class) {
      throw Error::data("class " + std::to_string(cls) + " has " +
                        std::to_string(positions.size()) + " labeled pixels, needs " +
                        std::to_string(per_class));
    }
    Rng rng(hash_mix(seed, static_cast<uint64_t>(cls)));
    rng.shuffle(positions);
    split.train.insert(split.train.end(), positions.begin(), positions.begin() + per_class);
    split.test.insert(split.test.end(), positions.begin() + per_class, positions.end());
  }
  // canonical row-major order so the index lists do not expose shuffle internals
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

std::string split_to_json(const SplitSpec& split) {
  nlohmann::ordered_json j;
  j["per_class"] = split.per_class;
  j["seed"] = split.seed;
  auto pack = [](const std::vector<std::pair<int64_t, int64_t>>& v) {
    json arr = json::array();
    for (const auto& [r, c] : v) arr.push_back(json::array({r, c}));
    return arr;
  };
  j["train"] = pack(split.train);
  j["test"] = pack(split.test);
  return j.dump();
}

SplitSpec split_from_json(const std::string& text) {
  const json j = parse_json(text, "split");
  SplitSpec split;
  if (!j.contains("train") || !j.contains("test")) {
    throw Error::data("split JSON must contain train and test index lists");
  }
  split.per_class = j.value("per_class", 0);
  split.seed = j.value("seed", 0ULL);
  auto unpack = [](const json& arr, std::vector<std::pair<int64_t, int64_t>>& out) {
    for (const auto& e : arr) {
      if (!e.is_array() || e.size() != 2) throw Error::data("split index must be [row, col]");
      out.emplace_back(e[0].get<int64_t>(), e[1].get<int64_t>());
    }
  };
  unpack(j["train"], split.train);
  unpack(j["test"], split.test);
  return split;
}

void save_split(const SplitSpec& split, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error::io("cannot open split for writing: " + path);
  os << split_to_json(split) << "\n";
  if (!os) throw Error::io("failed writing split: " + path);
}

SplitSpec load_split(const std::string& path) {
  return split_from_json(read_file(path));
}

PretrainStream::PretrainStream(const HsiCube& cube, int64_t patch_size, int64_t batch,
                               uint64_t seed)
    : cube_(&cube), patch_size_(patch_size), batch_(batch), seed_(seed), rng_(hash_mix(seed, 0)) {
  if (batch < 1) throw Error::config("pretrain batch must be >= 1");
}

void PretrainStream::start_epoch(int64_t epoch) {
  rng_ = Rng(hash_mix(seed_, static_cast<uint64_t>(epoch)));
}

std::vector<Patch> PretrainStream::next_batch() {
  std::vector<Patch> batch;
  batch.reserve(static_cast<size_t>(batch_));
  for (int64_t i = 0; i < batch_; ++i) {
    const int64_t r = static_cast<int64_t>(rng_.next_below(static_cast<uint64_t>(cube_->height)));
    const int64_t c = static_cast<int64_t>(rng_.next_below(static_cast<uint64_t>(cube_->width)));
    batch.push_back(extract_patch(*cube_, r, c, patch_size_));
  }
  return batch;
}

}  // namespace mct

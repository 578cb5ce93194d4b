#pragma once

// Parameter checkpoint container, extension ".mctw".
//
//   "MCTW" | u32 version | u32 flags | u32 meta_len | meta (JSON, UTF-8)
//   u64 entry_count
//   entries: u8 kind (0 param, 1 buffer) | u8 dtype (0 f32, 1 f64)
//            u32 name_len | name | u32 rank | u64 extents[rank]
//   raw little-endian value buffers, in manifest order
//   flags bit 0: optimizer section follows —
//            u64 adam_steps, then per param entry: m buffer, v buffer
//
// All integers little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mct/common.hpp"
#include "mct/params.hpp"
#include "mct/tensor.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

namespace mct {

constexpr uint32_t kCheckpointVersion = 1;
constexpr uint32_t kCheckpointFlagOptimizer = 1u;

namespace detail {

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename I>
void write_int(std::ostream& os, I v) {
  write_bytes(os, &v, sizeof(I));
}

inline void read_bytes(std::istream& is, void* p, size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) {
    throw Error::data(std::string("truncated checkpoint while reading ") + what);
  }
}

template <typename I>
I read_int(std::istream& is, const char* what) {
  I v{};
  read_bytes(is, &v, sizeof(I), what);
  return v;
}

template <typename T>
constexpr uint8_t dtype_code() {
  return sizeof(T) == 4 ? 0 : 1;
}

}  // namespace detail

struct CheckpointEntry {
  std::string name;
  uint8_t kind = 0;   // 0 param, 1 buffer
  uint8_t dtype = 0;  // 0 f32, 1 f64
  Shape shape;
  std::vector<double> values;  // widened on load; exact for both dtypes
};

struct LoadedCheckpoint {
  uint32_t version = 0;
  std::string meta_json;
  std::vector<CheckpointEntry> entries;
  bool has_optimizer = false;
  int64_t adam_steps = 0;
  // aligned with the param entries, in manifest order
  std::vector<std::vector<double>> adam_m;
  std::vector<std::vector<double>> adam_v;

  const CheckpointEntry* find(const std::string& name) const {
    for (const auto& e : entries) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }
};

namespace detail {

template <typename T>
void write_values(std::ostream& os, const Tensor<T>& t) {
  write_bytes(os, t.data(), sizeof(T) * static_cast<size_t>(t.numel()));
}

inline std::vector<double> read_values(std::istream& is, uint8_t dtype, int64_t count) {
  std::vector<double> out(static_cast<size_t>(count));
  if (dtype == 0) {
    std::vector<float> raw(static_cast<size_t>(count));
    read_bytes(is, raw.data(), sizeof(float) * raw.size(), "tensor values");
    for (size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<double>(raw[i]);
  } else if (dtype == 1) {
    read_bytes(is, out.data(), sizeof(double) * out.size(), "tensor values");
  } else {
    throw Error::data("unknown dtype code in checkpoint: " + std::to_string(dtype));
  }
  return out;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const ParamStore<T>& store, const std::string& path,
                     const std::string& meta_json, const int64_t* adam_steps = nullptr) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error::io("cannot open checkpoint for writing: " + path);
  detail::write_bytes(os, "MCTW", 4);
  detail::write_int<uint32_t>(os, kCheckpointVersion);
  const uint32_t flags = adam_steps ? kCheckpointFlagOptimizer : 0u;
  detail::write_int<uint32_t>(os, flags);
  detail::write_int<uint32_t>(os, static_cast<uint32_t>(meta_json.size()));
  detail::write_bytes(os, meta_json.data(), meta_json.size());

  const uint64_t count = store.param_count() + store.buffer_count();
  detail::write_int<uint64_t>(os, count);
  auto write_manifest = [&](const std::string& name, uint8_t kind, const Shape& shape) {
    detail::write_int<uint8_t>(os, kind);
    detail::write_int<uint8_t>(os, detail::dtype_code<T>());
    detail::write_int<uint32_t>(os, static_cast<uint32_t>(name.size()));
    detail::write_bytes(os, name.data(), name.size());
    detail::write_int<uint32_t>(os, static_cast<uint32_t>(shape.size()));
    for (int64_t e : shape) detail::write_int<uint64_t>(os, static_cast<uint64_t>(e));
  };
  for (size_t i = 0; i < store.param_count(); ++i) {
    write_manifest(store.param(i).name, 0, store.param(i).var->value.shape());
  }
  for (const auto& name : store.buffer_names()) {
    write_manifest(name, 1, store.find_buffer(name)->shape());
  }
  for (size_t i = 0; i < store.param_count(); ++i) {
    detail::write_values(os, store.param(i).var->value);
  }
  for (const auto& name : store.buffer_names()) {
    detail::write_values(os, *store.find_buffer(name));
  }
  if (adam_steps) {
    detail::write_int<uint64_t>(os, static_cast<uint64_t>(*adam_steps));
    for (size_t i = 0; i < store.param_count(); ++i) {
      detail::write_values(os, store.param(i).adam_m);
      detail::write_values(os, store.param(i).adam_v);
    }
  }
  if (!os) throw Error::io("failed writing checkpoint: " + path);
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error::io("cannot open checkpoint: " + path);
  char magic[4];
  detail::read_bytes(is, magic, 4, "magic");
  if (std::memcmp(magic, "MCTW", 4) != 0) {
    throw Error::data("bad checkpoint magic in " + path);
  }
  LoadedCheckpoint ck;
  ck.version = detail::read_int<uint32_t>(is, "version");
  if (ck.version != kCheckpointVersion) {
    throw Error::data("unsupported checkpoint version " + std::to_string(ck.version));
  }
  const uint32_t flags = detail::read_int<uint32_t>(is, "flags");
  const uint32_t meta_len = detail::read_int<uint32_t>(is, "meta length");
  ck.meta_json.resize(meta_len);
  if (meta_len) detail::read_bytes(is, ck.meta_json.data(), meta_len, "meta");
  const uint64_t count = detail::read_int<uint64_t>(is, "entry count");
  ck.entries.resize(count);
  for (auto& e : ck.entries) {
    e.kind = detail::read_int<uint8_t>(is, "entry kind");
    e.dtype = detail::read_int<uint8_t>(is, "entry dtype");
    const uint32_t name_len = detail::read_int<uint32_t>(is, "name length");
    e.name.resize(name_len);
    detail::read_bytes(is, e.name.data(), name_len, "name");
    const uint32_t rank = detail::read_int<uint32_t>(is, "rank");
    e.shape.resize(rank);
    for (auto& d : e.shape) {
      d = static_cast<int64_t>(detail::read_int<uint64_t>(is, "extent"));
    }
  }
  for (auto& e : ck.entries) {
    e.values = detail::read_values(is, e.dtype, numel_of(e.shape));
  }
  if (flags & kCheckpointFlagOptimizer) {
    ck.has_optimizer = true;
    ck.adam_steps = static_cast<int64_t>(detail::read_int<uint64_t>(is, "adam steps"));
    for (const auto& e : ck.entries) {
      if (e.kind != 0) continue;
      ck.adam_m.push_back(detail::read_values(is, e.dtype, numel_of(e.shape)));
      ck.adam_v.push_back(detail::read_values(is, e.dtype, numel_of(e.shape)));
    }
  }
  return ck;
}

// Strict full restore: every store tensor must exist in the checkpoint with a
// matching shape. Extra checkpoint entries are an error too.
template <typename T>
void restore_store(ParamStore<T>& store, const LoadedCheckpoint& ck, bool load_optimizer) {
  const size_t expected = store.param_count() + store.buffer_count();
  if (ck.entries.size() != expected) {
    throw Error::data("checkpoint entry count " + std::to_string(ck.entries.size()) +
                      " does not match model (" + std::to_string(expected) + ")");
  }
  size_t param_pos = 0;
  for (const auto& e : ck.entries) {
    Tensor<T>* dst = nullptr;
    if (e.kind == 0) {
      auto* p = store.find_param(e.name);
      if (!p) throw Error::data("checkpoint param missing in model: " + e.name);
      dst = &p->var->value;
      if (load_optimizer && ck.has_optimizer) {
        if (p->adam_m.shape() != e.shape) {
          throw Error::shape("optimizer state shape mismatch for " + e.name);
        }
        for (int64_t i = 0; i < p->adam_m.numel(); ++i) {
          p->adam_m[i] = static_cast<T>(ck.adam_m[param_pos][static_cast<size_t>(i)]);
          p->adam_v[i] = static_cast<T>(ck.adam_v[param_pos][static_cast<size_t>(i)]);
        }
      }
      ++param_pos;
    } else {
      dst = store.find_buffer(e.name);
      if (!dst) throw Error::data("checkpoint buffer missing in model: " + e.name);
    }
    if (dst->shape() != e.shape) {
      throw Error::shape("checkpoint shape mismatch for " + e.name + ": file " +
                         shape_str(e.shape) + " vs model " + shape_str(dst->shape()));
    }
    for (int64_t i = 0; i < dst->numel(); ++i) {
      (*dst)[i] = static_cast<T>(e.values[static_cast<size_t>(i)]);
    }
  }
}

// FNV-1a over the whole file; recorded in run manifests for provenance.
inline uint64_t file_fnv1a(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error::io("cannot open file for hashing: " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (is) {
    is.read(buf, sizeof(buf));
    const std::streamsize got = is.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace mct

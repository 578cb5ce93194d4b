#include "mct.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>

#include "mct/common.hpp"
#include "mct/hsi.hpp"
#include "mct/runner.hpp"

namespace {

thread_local std::string g_last_error;

mct_status fail(mct_status code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

mct_status status_of(const mct::Error& e) {
  switch (e.category()) {
    case mct::ErrorCategory::config: return MCT_E_CONFIG;
    case mct::ErrorCategory::data: return MCT_E_DATA;
    case mct::ErrorCategory::shape: return MCT_E_SHAPE;
    case mct::ErrorCategory::io: return MCT_E_IO;
  }
  return MCT_E_DATA;
}

template <typename Fn>
mct_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return MCT_OK;
  } catch (const mct::Error& e) {
    return fail(status_of(e), e.what());
  } catch (const std::exception& e) {
    return fail(MCT_E_DATA, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

mct_status require(bool ok, const char* what) {
  return ok ? MCT_OK : fail(MCT_E_CONFIG, std::string("null argument: ") + what);
}

template <typename Runner>
mct_status run_command(const char* config_json, char** out_json, Runner&& runner) {
  if (mct_status s = require(config_json != nullptr, "config_json")) return s;
  return guarded([&] {
    const mct::ExperimentConfig cfg = mct::ExperimentConfig::from_json_text(config_json);
    const std::string summary = runner(cfg);
    if (out_json) *out_json = dup_string(summary);
  });
}

}  // namespace

struct mct_cube {
  mct::HsiCube cube;
};
struct mct_gt {
  mct::GroundTruth gt;
};
struct mct_split {
  mct::SplitSpec split;
};
struct mct_model {
  std::string path;
  std::string description;
};

extern "C" {

const char* mct_version(void) { return mct::version_string(); }

const char* mct_status_name(mct_status status) {
  switch (status) {
    case MCT_OK: return "ok";
    case MCT_E_CONFIG: return "config";
    case MCT_E_DATA: return "data";
    case MCT_E_SHAPE: return "shape";
    case MCT_E_IO: return "io";
  }
  return "unknown";
}

const char* mct_last_error(void) { return g_last_error.c_str(); }

void mct_string_free(char* s) { std::free(s); }

/* ---- cube ---------------------------------------------------------------- */

mct_status mct_cube_open(const char* path, mct_cube** out) {
  if (mct_status s = require(path && out, "mct_cube_open")) return s;
  return guarded([&] {
    auto handle = std::make_unique<mct_cube>();
    handle->cube = mct::load_cube(path);
    *out = handle.release();
  });
}

void mct_cube_free(mct_cube* cube) { delete cube; }

mct_status mct_cube_dims(const mct_cube* cube, uint32_t* height, uint32_t* width,
                         uint32_t* bands) {
  if (mct_status s = require(cube != nullptr, "mct_cube_dims")) return s;
  if (height) *height = static_cast<uint32_t>(cube->cube.height);
  if (width) *width = static_cast<uint32_t>(cube->cube.width);
  if (bands) *bands = static_cast<uint32_t>(cube->cube.bands);
  return MCT_OK;
}

mct_status mct_cube_convert(const char* raw_path, const char* sidecar_json_path,
                            const char* out_path) {
  if (mct_status s = require(raw_path && sidecar_json_path && out_path, "mct_cube_convert")) {
    return s;
  }
  return guarded([&] { mct::convert_raw_cube(raw_path, sidecar_json_path, out_path); });
}

/* ---- ground truth --------------------------------------------------------- */

mct_status mct_gt_open(const char* path, mct_gt** out) {
  if (mct_status s = require(path && out, "mct_gt_open")) return s;
  return guarded([&] {
    auto handle = std::make_unique<mct_gt>();
    handle->gt = mct::load_gt(path);
    *out = handle.release();
  });
}

void mct_gt_free(mct_gt* gt) { delete gt; }

mct_status mct_gt_dims(const mct_gt* gt, uint32_t* height, uint32_t* width, uint32_t* classes) {
  if (mct_status s = require(gt != nullptr, "mct_gt_dims")) return s;
  if (height) *height = static_cast<uint32_t>(gt->gt.height);
  if (width) *width = static_cast<uint32_t>(gt->gt.width);
  if (classes) *classes = static_cast<uint32_t>(gt->gt.classes);
  return MCT_OK;
}

mct_status mct_gt_convert(const char* raw_path, const char* sidecar_json_path,
                          const char* out_path) {
  if (mct_status s = require(raw_path && sidecar_json_path && out_path, "mct_gt_convert")) {
    return s;
  }
  return guarded([&] { mct::convert_raw_gt(raw_path, sidecar_json_path, out_path); });
}

/* ---- splits ---------------------------------------------------------------- */

mct_status mct_split_create(const mct_gt* gt, uint32_t per_class, uint64_t seed,
                            mct_split** out) {
  if (mct_status s = require(gt && out, "mct_split_create")) return s;
  return guarded([&] {
    auto handle = std::make_unique<mct_split>();
    handle->split = mct::stratified_split(gt->gt, static_cast<int>(per_class), seed);
    *out = handle.release();
  });
}

mct_status mct_split_open(const char* path, mct_split** out) {
  if (mct_status s = require(path && out, "mct_split_open")) return s;
  return guarded([&] {
    auto handle = std::make_unique<mct_split>();
    handle->split = mct::load_split(path);
    *out = handle.release();
  });
}

mct_status mct_split_save(const mct_split* split, const char* path) {
  if (mct_status s = require(split && path, "mct_split_save")) return s;
  return guarded([&] { mct::save_split(split->split, path); });
}

void mct_split_free(mct_split* split) { delete split; }

mct_status mct_split_counts(const mct_split* split, uint64_t* n_train, uint64_t* n_test) {
  if (mct_status s = require(split != nullptr, "mct_split_counts")) return s;
  if (n_train) *n_train = split->split.train.size();
  if (n_test) *n_test = split->split.test.size();
  return MCT_OK;
}

/* ---- checkpoints ------------------------------------------------------------ */

mct_status mct_model_open(const char* path, mct_model** out) {
  if (mct_status s = require(path && out, "mct_model_open")) return s;
  return guarded([&] {
    auto handle = std::make_unique<mct_model>();
    handle->path = path;
    handle->description = mct::describe_checkpoint(path);
    *out = handle.release();
  });
}

void mct_model_free(mct_model* model) { delete model; }

mct_status mct_model_describe(const mct_model* model, char** info_json) {
  if (mct_status s = require(model && info_json, "mct_model_describe")) return s;
  *info_json = dup_string(model->description);
  return MCT_OK;
}

/* ---- runs -------------------------------------------------------------------- */

mct_status mct_run_pretrain(const char* config_json, char** summary_json) {
  return run_command(config_json, summary_json,
                     [](const mct::ExperimentConfig& c) { return mct::run_pretrain(c); });
}

mct_status mct_run_train(const char* config_json, char** summary_json) {
  return run_command(config_json, summary_json,
                     [](const mct::ExperimentConfig& c) { return mct::run_train(c); });
}

mct_status mct_run_eval(const char* config_json, char** metrics_json) {
  return run_command(config_json, metrics_json,
                     [](const mct::ExperimentConfig& c) { return mct::run_eval(c); });
}

mct_status mct_run_map(const char* config_json, char** summary_json) {
  return run_command(config_json, summary_json,
                     [](const mct::ExperimentConfig& c) { return mct::run_map(c); });
}

} /* extern "C" */

/*
 * C API for the MCT hyperspectral classification library.
 *
 * All functions return mct_status; MCT_OK is 0. On failure a thread-local
 * message is available through mct_last_error(). Handles are opaque and must
 * be released with their matching *_free function. Strings returned through
 * char** out-parameters are heap-allocated and released with
 * mct_string_free().
 */

#ifndef MCT_H
#define MCT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mct_status {
  MCT_OK = 0,
  MCT_E_CONFIG = 1,
  MCT_E_DATA = 2,
  MCT_E_SHAPE = 3,
  MCT_E_IO = 4
} mct_status;

const char* mct_version(void);
const char* mct_status_name(mct_status status);
/* Message from the most recent failing call on this thread ("" if none). */
const char* mct_last_error(void);

void mct_string_free(char* s);

/* ---- scene cube (.hsic) ------------------------------------------------ */

typedef struct mct_cube mct_cube;

mct_status mct_cube_open(const char* path, mct_cube** out);
void mct_cube_free(mct_cube* cube);
mct_status mct_cube_dims(const mct_cube* cube, uint32_t* height, uint32_t* width,
                         uint32_t* bands);
/* Convert headerless little-endian f32 raw data + JSON sidecar to .hsic. */
mct_status mct_cube_convert(const char* raw_path, const char* sidecar_json_path,
                            const char* out_path);

/* ---- ground truth (.hsig) ---------------------------------------------- */

typedef struct mct_gt mct_gt;

mct_status mct_gt_open(const char* path, mct_gt** out);
void mct_gt_free(mct_gt* gt);
mct_status mct_gt_dims(const mct_gt* gt, uint32_t* height, uint32_t* width, uint32_t* classes);
/* Convert headerless little-endian u16 raw labels + JSON sidecar to .hsig. */
mct_status mct_gt_convert(const char* raw_path, const char* sidecar_json_path,
                          const char* out_path);

/* ---- stratified splits -------------------------------------------------- */

typedef struct mct_split mct_split;

mct_status mct_split_create(const mct_gt* gt, uint32_t per_class, uint64_t seed,
                            mct_split** out);
mct_status mct_split_open(const char* path, mct_split** out);
mct_status mct_split_save(const mct_split* split, const char* path);
void mct_split_free(mct_split* split);
mct_status mct_split_counts(const mct_split* split, uint64_t* n_train, uint64_t* n_test);

/* ---- checkpoints --------------------------------------------------------- */

typedef struct mct_model mct_model;

mct_status mct_model_open(const char* path, mct_model** out);
void mct_model_free(mct_model* model);
/* JSON description: phase, hyperparameters, tensor counts. */
mct_status mct_model_describe(const mct_model* model, char** info_json);

/* ---- experiment runs ----------------------------------------------------- */
/*
 * Each runner takes the resolved experiment config as JSON text, writes its
 * artifacts into the config's out_dir, and returns a JSON summary.
 */

mct_status mct_run_pretrain(const char* config_json, char** summary_json);
mct_status mct_run_train(const char* config_json, char** summary_json);
mct_status mct_run_eval(const char* config_json, char** metrics_json);
mct_status mct_run_map(const char* config_json, char** summary_json);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MCT_H */

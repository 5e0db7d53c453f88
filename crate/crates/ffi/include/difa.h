#ifndef DIFA_H
#define DIFA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DifaStatus {
  DIFA_STATUS_OK = 0,
  DIFA_STATUS_NULL_POINTER = 1,
  DIFA_STATUS_INVALID_STRING = 2,
  DIFA_STATUS_CONFIG = 3,
  DIFA_STATUS_VALIDATION = 4,
  DIFA_STATUS_DATA = 5,
  DIFA_STATUS_NUMERIC = 6,
  DIFA_STATUS_DEPENDENCY = 7,
  DIFA_STATUS_ARCHITECTURE = 8,
  DIFA_STATUS_IO = 9,
  DIFA_STATUS_OTHER = 10,
  DIFA_STATUS_PANIC = 11,
} DifaStatus;

/**
 * Parsed experiment configuration.
 */
typedef struct DifaConfig DifaConfig;

/**
 * Trained networks of a run directory, ready for inference.
 */
typedef struct DifaModel DifaModel;

/**
 * Result record of a finished training run.
 */
typedef struct DifaSummary DifaSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next call into the library from the same thread.
 */
const char *difa_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *difa_version(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void difa_string_free(char *s);

/**
 * Parses a config file.
 *
 * # Safety
 * `path` must be a valid C string and `out` a writable pointer.
 */
enum DifaStatus difa_config_parse(const char *path, struct DifaConfig **out);

/**
 * Parses config text; relative paths resolve against `base_dir`.
 *
 * # Safety
 * `text` and `base_dir` must be valid C strings and `out` writable.
 */
enum DifaStatus difa_config_from_text(const char *text,
                                      const char *base_dir,
                                      struct DifaConfig **out);

/**
 * Selects `source_only`, `ls_adda`, `di` or `difa`.
 *
 * # Safety
 * `cfg` must be a live config handle and `variant` a valid C string.
 */
enum DifaStatus difa_config_set_variant(struct DifaConfig *cfg, const char *variant);

/**
 * # Safety
 * `cfg` must be a live config handle.
 */
enum DifaStatus difa_config_set_seed(struct DifaConfig *cfg, uint64_t seed);

/**
 * Parent directory for run directories.
 *
 * # Safety
 * `cfg` must be a live config handle and `dir` a valid C string.
 */
enum DifaStatus difa_config_set_out_dir(struct DifaConfig *cfg, const char *dir);

/**
 * Writes the config hash (64 hex digits) to `*out`; free it with
 * [`difa_string_free`].
 *
 * # Safety
 * `cfg` must be a live config handle and `out` writable.
 */
enum DifaStatus difa_config_hash(const struct DifaConfig *cfg, char **out);

/**
 * Writes the directory a run of this config uses to `*out`; free it with
 * [`difa_string_free`].
 *
 * # Safety
 * `cfg` must be a live config handle and `out` writable.
 */
enum DifaStatus difa_config_run_dir(const struct DifaConfig *cfg, char **out);

/**
 * # Safety
 * `cfg` must come from this library and not be freed twice.
 */
void difa_config_free(struct DifaConfig *cfg);

/**
 * Runs the configured pipeline and writes its run directory.
 * `eval_threads` 0 uses every core.
 *
 * # Safety
 * `cfg` must be a live config handle and `out` writable.
 */
enum DifaStatus difa_train(const struct DifaConfig *cfg,
                           bool resume,
                           size_t eval_threads,
                           struct DifaSummary **out);

/**
 * Reads `summary.json` from a run directory.
 *
 * # Safety
 * `run_dir` must be a valid C string and `out` writable.
 */
enum DifaStatus difa_summary_read(const char *run_dir, struct DifaSummary **out);

/**
 * Final target accuracy: mean and std over the evaluation window.
 *
 * # Safety
 * `summary` must be a live handle; `mean` and `std` writable.
 */
enum DifaStatus difa_summary_final_target(const struct DifaSummary *summary,
                                          double *mean,
                                          double *std);

/**
 * Target accuracy of the source-only classifier.
 *
 * # Safety
 * `summary` must be a live handle and `out` writable.
 */
enum DifaStatus difa_summary_source_only_target(const struct DifaSummary *summary, double *out);

/**
 * The whole summary as JSON; free it with [`difa_string_free`].
 *
 * # Safety
 * `summary` must be a live handle and `out` writable.
 */
enum DifaStatus difa_summary_json(const struct DifaSummary *summary, char **out);

/**
 * # Safety
 * `summary` must come from this library and not be freed twice.
 */
void difa_summary_free(struct DifaSummary *summary);

/**
 * Loads the config, data shapes and checkpoints of a finished run.
 *
 * # Safety
 * `run_dir` must be a valid C string and `out` writable.
 */
enum DifaStatus difa_model_open(const char *run_dir, struct DifaModel **out);

/**
 * Values per input row (`C·H·W`).
 *
 * # Safety
 * `model` must be a live handle.
 */
size_t difa_model_input_len(const struct DifaModel *model);

/**
 * # Safety
 * `model` must be a live handle.
 */
size_t difa_model_num_classes(const struct DifaModel *model);

/**
 * Classifies `rows` inputs of `cols` values each (row-major, values in
 * `[-1, 1]`) with the run's final encoder and `C`; writes one label per
 * row to `labels`.
 *
 * # Safety
 * `model` must be a live handle, `inputs` must hold `rows * cols` floats
 * and `labels` room for `rows` entries.
 */
enum DifaStatus difa_model_predict(const struct DifaModel *model,
                                   const float *inputs,
                                   size_t rows,
                                   size_t cols,
                                   uint32_t *labels);

/**
 * # Safety
 * `model` must come from this library and not be freed twice.
 */
void difa_model_free(struct DifaModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIFA_H */

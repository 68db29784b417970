#ifndef HOPFLOW_H
#define HOPFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HfLayer {
  /**
   * Fused representation, `hidden` columns.
   */
  HF_LAYER_Z = 0,
  /**
   * Interaction output, `(hops + 1) * hidden` columns.
   */
  HF_LAYER_HK = 1,
} HfLayer;

typedef enum HfNorm {
  HF_NORM_SYM = 0,
  HF_NORM_ROW = 1,
} HfNorm;

/**
 * Result of every fallible call.
 */
typedef enum HfStatus {
  HF_STATUS_OK = 0,
  /**
   * Null pointer, bad UTF-8, out-of-range value or bad config.
   */
  HF_STATUS_INVALID_ARGUMENT = 1,
  HF_STATUS_IO = 2,
  /**
   * Malformed or corrupt file, or inconsistent data.
   */
  HF_STATUS_DATA = 3,
  /**
   * Training diverged.
   */
  HF_STATUS_NUMERIC = 4,
  /**
   * Dimensions of the inputs do not fit together.
   */
  HF_STATUS_SHAPE = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  HF_STATUS_INTERNAL = 6,
} HfStatus;

/**
 * Loaded dataset.
 */
typedef struct HfDataset HfDataset;

/**
 * Pre-computed hop features.
 */
typedef struct HfHops HfHops;

/**
 * Trained model: configuration plus parameters.
 */
typedef struct HfModel HfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. Valid until
 * the next failing call on the same thread.
 */
const char *hf_last_error(void);

/**
 * Library version, static storage.
 */
const char *hf_version(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed. Null is ignored.
 */
void hf_string_free(char *s);

/**
 * Loads a dataset directory (`edges.tsv`, `features.bin`, `labels.tsv`).
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum HfStatus hf_dataset_load(const char *dir, struct HfDataset **out);

/**
 * # Safety
 * `ds` must come from [`hf_dataset_load`] and not have been freed.
 */
void hf_dataset_free(struct HfDataset *ds);

/**
 * Writes node, feature and class counts. Any out-pointer may be null.
 *
 * # Safety
 * `ds` must be a live handle; non-null out-pointers must be writable.
 */
enum HfStatus hf_dataset_shape(const struct HfDataset *ds,
                               size_t *num_nodes,
                               size_t *num_features,
                               size_t *num_classes);

/**
 * Propagates the dataset features over `num_hops` hops.
 *
 * # Safety
 * `ds` must be a live handle; `out` must be writable.
 */
enum HfStatus hf_hops_precompute(const struct HfDataset *ds,
                                 size_t num_hops,
                                 enum HfNorm norm,
                                 bool self_loops,
                                 struct HfHops **out);

/**
 * Reads an HGH1 cache, verifying its checksum.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HfStatus hf_hops_load(const char *path, struct HfHops **out);

/**
 * # Safety
 * `hops` must be a live handle; `path` a NUL-terminated string.
 */
enum HfStatus hf_hops_save(const struct HfHops *hops, const char *path);

/**
 * Node count, tokens per node (`hops + 1`) and feature width. Any
 * out-pointer may be null.
 *
 * # Safety
 * `hops` must be a live handle; non-null out-pointers must be writable.
 */
enum HfStatus hf_hops_shape(const struct HfHops *hops,
                            size_t *num_nodes,
                            size_t *num_tokens,
                            size_t *dim);

/**
 * # Safety
 * `hops` must come from this library and not have been freed.
 */
void hf_hops_free(struct HfHops *hops);

/**
 * Trains on split `split_index` of the dataset (shipped splits, else seeded
 * 48/32/20 splits). `config_json` is a TrainConfig document or null for the
 * defaults. On success `*model` holds the best checkpoint and, when `report`
 * is non-null, `*report` the run report as JSON.
 *
 * # Safety
 * Handles must be live; `config_json` null or NUL-terminated; `model`
 * writable; `report` null or writable.
 */
enum HfStatus hf_train(const struct HfDataset *ds,
                       const struct HfHops *hops,
                       const char *config_json,
                       size_t split_index,
                       struct HfModel **model,
                       char **report);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HfStatus hf_model_load(const char *path, struct HfModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum HfStatus hf_model_save(const struct HfModel *model, const char *path);

/**
 * Model configuration as JSON.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum HfStatus hf_model_config(const struct HfModel *model, char **out);

/**
 * # Safety
 * `model` must come from this library and not have been freed.
 */
void hf_model_free(struct HfModel *model);

/**
 * Eval-mode logits for `ids[0..num_ids]`, written row-major to `out`
 * (`num_ids * num_classes` floats, `capacity` available). A cache with more
 * hops than the model uses is truncated.
 *
 * # Safety
 * Handles must be live; `ids` must hold `num_ids` values; `out` must hold
 * `capacity` floats.
 */
enum HfStatus hf_model_predict(const struct HfModel *model,
                               const struct HfHops *hops,
                               const size_t *ids,
                               size_t num_ids,
                               float *out,
                               size_t capacity);

/**
 * Representations of every node, row-major into `out` (`num_nodes *
 * columns` floats, `capacity` available).
 *
 * # Safety
 * Handles must be live; `out` must hold `capacity` floats.
 */
enum HfStatus hf_model_embeddings(const struct HfModel *model,
                                  const struct HfHops *hops,
                                  enum HfLayer layer,
                                  float *out,
                                  size_t capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOPFLOW_H */

#ifndef HCMFL_H
#define HCMFL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HcmflStatus {
  HCMFL_STATUS_OK = 0,
  HCMFL_STATUS_NULL_POINTER = 1,
  HCMFL_STATUS_INVALID_ARGUMENT = 2,
  HCMFL_STATUS_PARSE = 3,
  HCMFL_STATUS_IO = 4,
  HCMFL_STATUS_DIMENSION_MISMATCH = 5,
  HCMFL_STATUS_INCONSISTENT = 6,
  HCMFL_STATUS_BUFFER_TOO_SMALL = 7,
  HCMFL_STATUS_PANIC = 8,
} HcmflStatus;

/**
 * Validated venue hierarchy.
 */
typedef struct HcmflHierarchy HcmflHierarchy;

/**
 * Fusion network with its softmax head.
 */
typedef struct HcmflNetwork HcmflNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *hcmfl_last_error(void);

/**
 * Static, NUL-terminated crate version.
 */
const char *hcmfl_version(void);

/**
 * Parse a hierarchy from edge-list or indented text.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HcmflStatus hcmfl_hierarchy_parse(const char *text, struct HcmflHierarchy **out);

/**
 * # Safety
 * `h` must come from [`hcmfl_hierarchy_parse`] and not be used afterwards.
 */
void hcmfl_hierarchy_free(struct HcmflHierarchy *h);

/**
 * # Safety
 * `h` must be a live handle and `out` a valid pointer.
 */
enum HcmflStatus hcmfl_hierarchy_num_leaves(const struct HcmflHierarchy *h, size_t *out);

/**
 * Node count including the virtual root.
 *
 * # Safety
 * `h` must be a live handle and `out` a valid pointer.
 */
enum HcmflStatus hcmfl_hierarchy_num_nodes(const struct HcmflHierarchy *h, size_t *out);

/**
 * # Safety
 * `h` must be a live handle, `name` NUL-terminated and `out` valid.
 */
enum HcmflStatus hcmfl_hierarchy_leaf_index(const struct HcmflHierarchy *h,
                                            const char *name,
                                            size_t *out);

/**
 * Copy the id of leaf `label` into `buf` with a trailing NUL. `needed`
 * receives the required buffer size even when `buf` is too small.
 *
 * # Safety
 * `h` must be a live handle, `buf` writable for `len` bytes (or null with
 * `len == 0`) and `needed` valid.
 */
enum HcmflStatus hcmfl_hierarchy_leaf_name(const struct HcmflHierarchy *h,
                                           size_t label,
                                           char *buf,
                                           size_t len,
                                           size_t *needed);

/**
 * Fresh network with seeded hidden weights and a zero head.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum HcmflStatus hcmfl_network_init(size_t input_dim,
                                    size_t fused_layers,
                                    size_t fused_units,
                                    size_t num_leaves,
                                    uint64_t seed,
                                    struct HcmflNetwork **out);

/**
 * Load a checkpoint written by `hcmfl train` (`model.bin`).
 *
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
enum HcmflStatus hcmfl_network_load(const char *path, struct HcmflNetwork **out);

/**
 * # Safety
 * `net` must be a live handle and `path` NUL-terminated.
 */
enum HcmflStatus hcmfl_network_save(const struct HcmflNetwork *net, const char *path);

/**
 * # Safety
 * `net` must come from an init/load call and not be used afterwards.
 */
void hcmfl_network_free(struct HcmflNetwork *net);

/**
 * # Safety
 * `net` must be a live handle; output pointers may be null to skip them.
 */
enum HcmflStatus hcmfl_network_shape(const struct HcmflNetwork *net,
                                     size_t *input_dim,
                                     size_t *num_leaves);

/**
 * Row-major `rows x cols` inputs to row-major `rows x num_leaves`
 * probabilities.
 *
 * # Safety
 * `x` must hold `rows * cols` doubles and `out` room for `out_len`.
 */
enum HcmflStatus hcmfl_network_predict_proba(const struct HcmflNetwork *net,
                                             const double *x,
                                             size_t rows,
                                             size_t cols,
                                             double *out,
                                             size_t out_len);

/**
 * Most probable leaf per row; ties go to the lower index.
 *
 * # Safety
 * `x` must hold `rows * cols` doubles and `labels` room for `rows`.
 */
enum HcmflStatus hcmfl_network_predict(const struct HcmflNetwork *net,
                                       const double *x,
                                       size_t rows,
                                       size_t cols,
                                       size_t *labels);

/**
 * Macro- and Micro-F1 of `n` predictions against `n` truths.
 *
 * # Safety
 * `preds` and `truths` must hold `n` values; `macro_f1`, `micro_f1` valid.
 */
enum HcmflStatus hcmfl_evaluate(const size_t *preds,
                                const size_t *truths,
                                size_t n,
                                size_t num_classes,
                                double *macro_f1,
                                double *micro_f1);

/**
 * Key frames of an `n + 1` frame video given its `n` consecutive
 * histogram distances, under the default thresholds. At most 20 indices
 * are produced; `written` receives the count.
 *
 * # Safety
 * `distances` must hold `n` doubles, `out` room for `cap` indices.
 */
enum HcmflStatus hcmfl_select_keyframes_from_distances(const double *distances,
                                                       size_t n,
                                                       size_t *out,
                                                       size_t cap,
                                                       size_t *written);

/**
 * Key frames of `n_frames` interleaved RGB frames of `width x height`
 * pixels stored back to back.
 *
 * # Safety
 * `pixels` must hold `n_frames * width * height * 3` bytes and `out` room
 * for `cap` indices.
 */
enum HcmflStatus hcmfl_select_keyframes_rgb(const uint8_t *pixels,
                                            size_t n_frames,
                                            size_t width,
                                            size_t height,
                                            size_t *out,
                                            size_t cap,
                                            size_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HCMFL_H */

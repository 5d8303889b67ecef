#ifndef DLN_H
#define DLN_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum DlnStatus {
  DLN_STATUS_OK = 0,
  DLN_STATUS_NULL_POINTER = 1,
  DLN_STATUS_INVALID_UTF8 = 2,
  DLN_STATUS_IO = 3,
  DLN_STATUS_CONFIG = 4,
  DLN_STATUS_DATA = 5,
  DLN_STATUS_INVALID_ARGUMENT = 6,
  DLN_STATUS_PANIC = 7,
} DlnStatus;

// A loaded quantized model.
typedef struct DlnModel DlnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a trained or quantized model file. On success `*out` receives a new
// handle.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum DlnStatus dln_model_load(const char *path, struct DlnModel **out);

// Parses a trained or quantized model from JSON text.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum DlnStatus dln_model_from_json(const char *json, struct DlnModel **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void dln_model_free(struct DlnModel *model);

// Number of classes, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t dln_model_num_classes(const struct DlnModel *model);

// Number of raw feature cells a row must have, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t dln_model_num_features(const struct DlnModel *model);

// Scores one raw row given as string cells in schema column order, label
// excluded. Missing values are empty strings. `scores` may be null;
// otherwise it must hold at least `dln_model_num_classes` entries.
//
// # Safety
// `cells` must point to `n_cells` NUL-terminated strings; the out pointers
// must be valid.
enum DlnStatus dln_model_predict_cells(const struct DlnModel *model,
                                       const char *const *cells,
                                       size_t n_cells,
                                       size_t *out_class,
                                       uint32_t *scores,
                                       size_t scores_len);

// Scores one already-preprocessed row: continuous features scaled to the
// training range and one-hot indicators of 0 or 1.
//
// # Safety
// `continuous` and `onehot` must point to `n_continuous` and `n_onehot`
// values; the out pointers must be valid.
enum DlnStatus dln_model_predict_preprocessed(const struct DlnModel *model,
                                              const double *continuous,
                                              size_t n_continuous,
                                              const uint8_t *onehot,
                                              size_t n_onehot,
                                              size_t *out_class,
                                              uint32_t *scores,
                                              size_t scores_len);

// Two-input gate equivalents of the circuit with `bits`-wide adders.
//
// # Safety
// `model` must be a live handle and `out_gate_level` a valid pointer.
enum DlnStatus dln_model_count_ops(const struct DlnModel *model,
                                   uint32_t bits,
                                   uint64_t *out_gate_level);

// Simplified rules as a Graphviz DOT string. Free with `dln_string_free`.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum DlnStatus dln_model_export_dot(const struct DlnModel *model, char **out);

// Releases a string returned by the library. Null is ignored.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void dln_string_free(char *s);

// Message of the last failed call on this thread, or null after a success.
// Valid until the next call into the library on this thread.
const char *dln_last_error_message(void);

// Real-valued gate `gate` (0..=15) at `(a, b)`.
//
// # Safety
// `out` must be a valid pointer.
enum DlnStatus dln_soft_logic(uint8_t gate, double a, double b, double *out);

// Boolean gate `gate` (0..=15) at `(a, b)`.
//
// # Safety
// `out` must be a valid pointer.
enum DlnStatus dln_hard_logic(uint8_t gate, bool a, bool b, bool *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DLN_H */

#ifndef MAMMOVIEW_H
#define MAMMOVIEW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  MV_STATUS_OK = 0,
  MV_STATUS_NULL_POINTER = 1,
  MV_STATUS_INVALID_ARGUMENT = 2,
  MV_STATUS_DEGENERATE_LABELS = 3,
  MV_STATUS_UNPAIRED_SCORE_SETS = 4,
  MV_STATUS_ZERO_VARIANCE = 5,
  MV_STATUS_IO = 6,
  MV_STATUS_MODEL = 7,
  MV_STATUS_PANIC = 8,
} MvStatus;

// Opaque trained model loaded from an archive.
typedef struct MvModel MvModel;

// Opaque set of scored cases.
typedef struct MvScores MvScores;

typedef struct {
  double auc;
  // Hanley–McNeil standard error.
  double se;
  size_t n_pos;
  size_t n_neg;
} MvAucReport;

typedef struct {
  double auc1;
  double auc2;
  double var1;
  double var2;
  double cov;
  // Meaningful only when `z_defined`.
  double z;
  bool z_defined;
  // One-tailed, alternative AUC1 > AUC2.
  double p_one_tailed;
  // The AUC difference has zero variance.
  bool zero_difference;
} MvDelongResult;

typedef struct {
  double z;
  double se_diff;
  double p_one_tailed;
} MvZTestResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Crate version, NUL-terminated, static storage.
const char *mv_version(void);

// Copies the calling thread's last error message into `buf` (truncated,
// always NUL-terminated when `len > 0`). Returns the full length including
// the terminator, or 0 if the last call succeeded.
//
// # Safety
// `buf` must be NULL or point to `len` writable bytes.
size_t mv_last_error(char *buf, size_t len);

// Builds a score set from `n` probabilities and 0/1 labels. Case `i` is
// identified by its index, so two sets pair up case by case.
//
// # Safety
// `scores` and `labels` must point to `n` readable elements; `out` must be
// writable.
MvStatus mv_scores_new(const double *scores, const uint8_t *labels, size_t n, MvScores **out);

// # Safety
// `s` must be NULL or a handle from `mv_scores_new` not yet freed.
void mv_scores_free(MvScores *s);

// # Safety
// `s` must be a live handle; `out` writable.
MvStatus mv_auc_report(const MvScores *s, MvAucReport *out);

// Standard error of an AUC from its value and the class sizes.
//
// # Safety
// `out` must be writable.
MvStatus mv_hanley_mcneil_se(double auc, size_t n_pos, size_t n_neg, double *out);

// Paired DeLong test of two score sets over the same cases.
//
// # Safety
// `a` and `b` must be live handles; `out` writable.
MvStatus mv_delong(const MvScores *a, const MvScores *b, MvDelongResult *out);

// z-test on two AUCs from their standard errors and an assumed correlation.
//
// # Safety
// `out` must be writable.
MvStatus mv_z_test(double auc1, double se1, double auc2, double se2, double r, MvZTestResult *out);

// Loads a `.safetensors` archive written by training (its `.json` sidecar
// must sit next to it).
//
// # Safety
// `path` must be a NUL-terminated string; `out` writable.
MvStatus mv_model_load(const char *path, MvModel **out);

// # Safety
// `m` must be NULL or a handle from `mv_model_load` not yet freed.
void mv_model_free(MvModel *m);

// Number of outputs: the class count for patch models, 1 otherwise.
//
// # Safety
// `m` must be a live handle; `out` writable.
MvStatus mv_model_n_classes(const MvModel *m, size_t *out);

// Malignancy probability of one view. `pixels` is row-major grayscale in
// [0, 1]; any size at which the network stays valid is accepted.
//
// # Safety
// `pixels` must point to `height * width` floats; `m` live; `out` writable.
MvStatus mv_model_predict(const MvModel *m,
                          const float *pixels,
                          size_t height,
                          size_t width,
                          double *out);

// Probability for one breast from its CC and MLO views (same size).
//
// # Safety
// `cc` and `mlo` must each point to `height * width` floats.
MvStatus mv_model_predict_pair(const MvModel *m,
                               const float *cc,
                               const float *mlo,
                               size_t height,
                               size_t width,
                               double *out);

// Class probabilities of one patch into `probs[0..n_probs]`; `n_probs`
// must equal `mv_model_n_classes`.
//
// # Safety
// `pixels` must point to `height * width` floats and `probs` to `n_probs`
// writable doubles.
MvStatus mv_model_predict_patch(const MvModel *m,
                                const float *pixels,
                                size_t height,
                                size_t width,
                                double *probs,
                                size_t n_probs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MAMMOVIEW_H */

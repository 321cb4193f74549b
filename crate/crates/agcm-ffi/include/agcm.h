/* C interface for the agcm classification head. */

#ifndef AGCM_H
#define AGCM_H

/* Generated by cbindgen from agcm-ffi; edit src/lib.rs, not this file. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Attention similarity selector: cosine.
 */
#define AGCM_METRIC_COSINE 0

/**
 * Attention similarity selector: negated Euclidean distance.
 */
#define AGCM_METRIC_NEG_EUCLIDEAN 1

/**
 * Attention similarity selector: Pearson correlation.
 */
#define AGCM_METRIC_PEARSON 2

/**
 * Split selector for `agcm_dataset_load_csv`: base-training split.
 */
#define AGCM_SPLIT_BASE_TRAIN 0

/**
 * Split selector: support pool the shots are drawn from.
 */
#define AGCM_SPLIT_SUPPORT_POOL 1

/**
 * Split selector: held-out evaluation split.
 */
#define AGCM_SPLIT_EVAL 2

/**
 * Outcome of a call. Zero is success; everything else is a failure whose
 * detail `agcm_last_error_message` reports.
 */
typedef enum AgcmStatus {
  /**
   * The call succeeded.
   */
  AGCM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  AGCM_STATUS_NULL_ARGUMENT = 1,
  /**
   * A value, shape, or configuration was rejected.
   */
  AGCM_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A numeric guard tripped: degenerate norm or non-finite value.
   */
  AGCM_STATUS_NUMERIC_FAILURE = 3,
  /**
   * A file could not be read, written, or parsed.
   */
  AGCM_STATUS_IO_FAILURE = 4,
  /**
   * An internal invariant broke; memory is intact but the call did nothing.
   */
  AGCM_STATUS_INTERNAL_PANIC = 5,
} AgcmStatus;

/**
 * Opaque labeled-embedding collection; see `agcm_dataset_generate`.
 */
typedef struct AgcmDataset AgcmDataset;

/**
 * Opaque classifier: projection, bias, and one weight row per class with
 * the background last.
 */
typedef struct AgcmHead AgcmHead;

/**
 * Two classes pinned at an exact angle by the generator.
 */
typedef struct AgcmConfusablePair {
  size_t a;
  size_t b;
  double angle_deg;
} AgcmConfusablePair;

/**
 * Generator settings. `confusable` may be null when `confusable_len` is
 * zero. `intra_sigma` is the expected total noise magnitude around a class
 * mean; `background_rate` adds that fraction of unstructured proposals.
 */
typedef struct AgcmDatasetSpec {
  size_t dim;
  size_t n_base;
  size_t n_novel;
  size_t samples_per_class;
  size_t eval_per_class;
  double intra_sigma;
  double min_angle_deg;
  double background_rate;
  const struct AgcmConfusablePair *confusable;
  size_t confusable_len;
} AgcmDatasetSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *agcm_version(void);

/**
 * Message for the most recent failure on the calling thread. The pointer
 * stays valid until this thread's next failing call.
 */
const char *agcm_last_error_message(void);

/**
 * Generates the three experiment splits. Each out-pointer may be null to
 * skip that split; the ones provided receive owned handles.
 */
enum AgcmStatus agcm_dataset_generate(const struct AgcmDatasetSpec *spec,
                                      uint64_t seed,
                                      struct AgcmDataset **base_train,
                                      struct AgcmDataset **support_pool,
                                      struct AgcmDataset **eval);

/**
 * Reads a dataset CSV written by `agcm_dataset_save_csv` (or the CLI).
 */
enum AgcmStatus agcm_dataset_load_csv(const char *path, uint32_t split, struct AgcmDataset **out);

/**
 * Writes a dataset as CSV: a `label,x0,…` header, one row per sample,
 * background labeled `-1`.
 */
enum AgcmStatus agcm_dataset_save_csv(const struct AgcmDataset *dataset, const char *path);

/**
 * Reports sample count, embedding dimension, and foreground class count.
 * Out-pointers may be null to skip a field.
 */
enum AgcmStatus agcm_dataset_shape(const struct AgcmDataset *dataset,
                                   size_t *rows,
                                   size_t *dim,
                                   size_t *classes);

/**
 * Copies the embeddings out, row-major, into a buffer of
 * `rows × dim` doubles (sizes from `agcm_dataset_shape`).
 */
enum AgcmStatus agcm_dataset_features(const struct AgcmDataset *dataset, double *out);

/**
 * Copies the labels out, one `int64_t` per sample: the class index, or
 * `-1` for background.
 */
enum AgcmStatus agcm_dataset_labels(const struct AgcmDataset *dataset, int64_t *out);

/**
 * Draws exactly `k` samples per label group from a support pool.
 */
enum AgcmStatus agcm_kshot_sample(const struct AgcmDataset *pool,
                                  size_t k,
                                  uint64_t seed,
                                  struct AgcmDataset **out);

/**
 * Releases a dataset handle. Null is a no-op.
 */
void agcm_dataset_free(struct AgcmDataset *dataset);

/**
 * Loads a head checkpoint written by `agcm_head_save` (or the CLI).
 */
enum AgcmStatus agcm_head_load(const char *path, struct AgcmHead **out);

/**
 * Writes a binary head checkpoint plus its text sidecar.
 */
enum AgcmStatus agcm_head_save(const struct AgcmHead *head, const char *path);

/**
 * Reports input dimension, feature dimension, and total class count
 * (background included, always the last index). Out-pointers may be null.
 */
enum AgcmStatus agcm_head_shape(const struct AgcmHead *head,
                                size_t *input_dim,
                                size_t *feature_dim,
                                size_t *classes);

/**
 * Classifies `rows` samples (row-major `rows × input_dim` buffer): nearest
 * class weight by cosine. `classes` receives one index per row; `cosines`
 * may be null or receive the winning cosine per row.
 */
enum AgcmStatus agcm_head_predict(const struct AgcmHead *head,
                                  const double *x,
                                  size_t rows,
                                  uint32_t *classes,
                                  double *cosines);

/**
 * Releases a head handle. Null is a no-op.
 */
void agcm_head_free(struct AgcmHead *head);

/**
 * Row-stochastic neighbor weights with a zero diagonal: softmax over
 * pairwise similarities, self excluded. `out` receives `rows × rows`
 * doubles.
 */
enum AgcmStatus agcm_attention_weights(const double *embeddings,
                                       size_t rows,
                                       size_t cols,
                                       uint32_t metric,
                                       double *out);

/**
 * Blends each row with its attention-weighted neighbors at self weight
 * `alpha` in `[0.5, 1.0]`. `out` receives `rows × cols` doubles; `alpha`
 * of exactly 1 copies the input through unchanged.
 */
enum AgcmStatus agcm_fuse(const double *embeddings,
                          size_t rows,
                          size_t cols,
                          uint32_t metric,
                          double alpha,
                          double *out);

/**
 * Mean cosine-margin cross-entropy of `rows` feature rows against
 * `n_classes` weight rows (both `… × cols`, row-major). `labels` holds one
 * class index per row; the margin is skipped for rows labeled
 * `background_index`.
 */
enum AgcmStatus agcm_margin_loss(const double *features,
                                 size_t rows,
                                 size_t cols,
                                 const double *class_weights,
                                 size_t n_classes,
                                 const uint32_t *labels,
                                 double margin,
                                 double beta,
                                 uint32_t background_index,
                                 double *loss);

/**
 * Stage one: fits a fresh head on the base classes (fusion off, margin
 * zero). `final_loss` may be null or receive the last step's loss.
 */
enum AgcmStatus agcm_base_train(const struct AgcmDataset *train,
                                uint64_t seed,
                                size_t epochs,
                                size_t batch_size,
                                double learning_rate,
                                double *final_loss,
                                struct AgcmHead **out);

/**
 * Stage two: grows the head for the novel classes in `shots` and
 * fine-tunes with fusion and the margin active, projection frozen.
 * `final_loss` may be null or receive the last step's loss.
 */
enum AgcmStatus agcm_few_shot_adapt(const struct AgcmHead *base,
                                    const struct AgcmDataset *shots,
                                    uint64_t seed,
                                    size_t epochs,
                                    size_t batch_size,
                                    double learning_rate,
                                    double alpha,
                                    double margin,
                                    uint32_t metric,
                                    double *final_loss,
                                    struct AgcmHead **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AGCM_H */

#ifndef TEMPO_EMBED_H
#define TEMPO_EMBED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Loss selector for [`TeTrainConfig`].
 */
typedef enum TeLoss {
  TE_LOSS_TBATCH = 0,
  TE_LOSS_ITEM_SUM = 1,
  TE_LOSS_FULL_SUM = 2,
} TeLoss;

/**
 * Status codes returned by every fallible call.
 */
typedef enum TeStatus {
  TE_STATUS_OK = 0,
  TE_STATUS_NULL_POINTER = 1,
  TE_STATUS_INVALID_ARGUMENT = 2,
  TE_STATUS_PARSE = 3,
  TE_STATUS_IO = 4,
  TE_STATUS_NUMERIC = 5,
  TE_STATUS_CONFIG = 6,
  TE_STATUS_PANIC = 7,
} TeStatus;

/**
 * Opaque trained model plus its embedding state.
 */
typedef struct TeCheckpoint TeCheckpoint;

/**
 * Opaque interaction log.
 */
typedef struct TeLog TeLog;

/**
 * Opaque t-batch plan.
 */
typedef struct TePlan TePlan;

typedef struct TeTrainConfig {
  enum TeLoss loss;
  size_t epochs;
  size_t dim;
  uint64_t seed;
  double learning_rate;
  double weight_decay;
  size_t span_size;
  double lambda_u;
  double lambda_i;
  double grad_clip;
} TeTrainConfig;

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *te_last_error_message(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum TeStatus te_log_load_csv(const char *path, bool has_header, struct TeLog **out);

/**
 * # Safety
 * `out` must be a writable pointer.
 */
enum TeStatus te_log_generate_type1(size_t k, double p, uint64_t seed, struct TeLog **out);

/**
 * # Safety
 * `out` must be a writable pointer.
 */
enum TeStatus te_log_generate_type2(size_t n_pairs, size_t repetitions, struct TeLog **out);

/**
 * # Safety
 * `out` must be a writable pointer.
 */
enum TeStatus te_log_generate_type4(size_t n_users,
                                    size_t n_items,
                                    size_t k_out,
                                    double p_jump,
                                    double arrival_rate,
                                    size_t n_interactions,
                                    uint64_t seed,
                                    struct TeLog **out);

/**
 * Splits `log` chronologically; the first `train_fraction` goes to `out_train`.
 *
 * # Safety
 * `log` must be a live handle; both out-pointers must be writable.
 */
enum TeStatus te_log_split(const struct TeLog *log,
                           double train_fraction,
                           struct TeLog **out_train,
                           struct TeLog **out_test);

/**
 * # Safety
 * `log` must be a live handle and `out` writable.
 */
enum TeStatus te_log_len(const struct TeLog *log, size_t *out);

/**
 * # Safety
 * `log` must be a live handle and `out` writable.
 */
enum TeStatus te_log_num_users(const struct TeLog *log, size_t *out);

/**
 * # Safety
 * `log` must be a live handle and `out` writable.
 */
enum TeStatus te_log_num_items(const struct TeLog *log, size_t *out);

/**
 * # Safety
 * `log` must be null or a handle not yet freed.
 */
void te_log_free(struct TeLog *log);

/**
 * # Safety
 * `log` must be a live handle and `out` writable.
 */
enum TeStatus te_plan_build(const struct TeLog *log, struct TePlan **out);

/**
 * # Safety
 * `plan` must be a live handle and `out` writable.
 */
enum TeStatus te_plan_num_batches(const struct TePlan *plan, size_t *out);

/**
 * # Safety
 * `plan` must be a live handle and `out` writable.
 */
enum TeStatus te_plan_batch_size(const struct TePlan *plan, size_t index, size_t *out);

/**
 * Copies the interaction indices of batch `index` into `buf` (capacity
 * `cap`) and stores the batch size in `out_len`. Fails if `cap` is too small.
 *
 * # Safety
 * `plan` must be a live handle, `buf` valid for `cap` writes, `out_len` writable.
 */
enum TeStatus te_plan_batch(const struct TePlan *plan,
                            size_t index,
                            size_t *buf,
                            size_t cap,
                            size_t *out_len);

/**
 * # Safety
 * `plan` must be null or a handle not yet freed.
 */
void te_plan_free(struct TePlan *plan);

/**
 * Library defaults for every training field.
 */
struct TeTrainConfig te_train_config_default(void);

/**
 * Trains on `log` and returns the final checkpoint.
 *
 * # Safety
 * `log` and `config` must be valid pointers; `out` writable.
 */
enum TeStatus te_train(const struct TeLog *log,
                       const struct TeTrainConfig *config,
                       struct TeCheckpoint **out);

/**
 * Sequential evaluation of `checkpoint` on `test`.
 *
 * # Safety
 * Handles must be live; `out_mrr` and `out_recall_at_10` writable.
 */
enum TeStatus te_evaluate(const struct TeCheckpoint *checkpoint,
                          const struct TeLog *test,
                          double *out_mrr,
                          double *out_recall_at_10);

/**
 * # Safety
 * `checkpoint` must be live and `path` NUL-terminated.
 */
enum TeStatus te_checkpoint_save(const struct TeCheckpoint *checkpoint, const char *path);

/**
 * # Safety
 * `path` must be NUL-terminated and `out` writable.
 */
enum TeStatus te_checkpoint_load(const char *path, struct TeCheckpoint **out);

/**
 * # Safety
 * `checkpoint` must be null or a handle not yet freed.
 */
void te_checkpoint_free(struct TeCheckpoint *checkpoint);

#endif  /* TEMPO_EMBED_H */

#ifndef SEDML_H
#define SEDML_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum SedmlStatus {
  SEDML_STATUS_OK = 0,
  SEDML_STATUS_NULL_POINTER = 1,
  SEDML_STATUS_USAGE = 2,
  SEDML_STATUS_PROTOCOL = 3,
  SEDML_STATUS_INFEASIBLE = 4,
  SEDML_STATUS_RANGE = 5,
  SEDML_STATUS_IO = 6,
  SEDML_STATUS_PANIC = 7,
} SedmlStatus;

typedef enum SedmlStrategy {
  SEDML_STRATEGY_SEQUENTIAL = 0,
  SEDML_STRATEGY_TOURNAMENT = 1,
} SedmlStrategy;

// Opaque aggregator handle.
typedef struct SedmlAggregator SedmlAggregator;

typedef struct SedmlConfig {
  uint32_t teachers;
  uint32_t classes;
  // Fraction of teachers that must agree, in (0, 1].
  double threshold;
  double sigma1;
  double sigma2;
  uint32_t ring_bits;
  uint64_t scale;
  uint64_t seed;
  // A `SedmlStrategy` value.
  uint32_t strategy;
} SedmlConfig;

// Outcome of one sample. `label` is meaningful only when `consensus` is set.
typedef struct SedmlSampleResult {
  bool consensus;
  uint32_t label;
  uint64_t phase_rounds[3];
  uint64_t phase_bytes[3];
  uint32_t server_reveals;
} SedmlSampleResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// 250 teachers, 10 classes, 60% threshold, no noise, 64-bit ring.
struct SedmlConfig sedml_default_config(void);

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next `sedml_*` call on this thread.
const char *sedml_last_error(void);

// Static, NUL-terminated crate version.
const char *sedml_version(void);

// # Safety
// `config` must point to a valid `SedmlConfig`; `out` must be writable.
enum SedmlStatus sedml_aggregator_new(const struct SedmlConfig *config,
                                      struct SedmlAggregator **out);

// # Safety
// `agg` must be NULL or a handle from `sedml_aggregator_new` not yet freed.
void sedml_aggregator_free(struct SedmlAggregator *agg);

// Run one sample. `votes[j]` is teacher `j`'s predicted class; `len` must
// equal the configured teacher count.
//
// # Safety
// `agg` must be a live handle, `votes` must point to `len` readable
// `uint32_t`s and `out` must be writable.
enum SedmlStatus sedml_aggregator_run_sample(struct SedmlAggregator *agg,
                                             uint64_t sample,
                                             const uint32_t *votes,
                                             uintptr_t len,
                                             struct SedmlSampleResult *out);

// Plaintext reference for the same sample and noise. Only `consensus` and
// `label` are filled in.
//
// # Safety
// Same as [`sedml_aggregator_run_sample`].
enum SedmlStatus sedml_aggregator_oracle(const struct SedmlAggregator *agg,
                                         uint64_t sample,
                                         const uint32_t *votes,
                                         uintptr_t len,
                                         struct SedmlSampleResult *out);

// `(ε, δ)` after `queries` answered samples. Writes `INFINITY` when a sigma
// is zero.
//
// # Safety
// `epsilon` must be writable.
enum SedmlStatus sedml_accountant_epsilon(double sigma1,
                                          double sigma2,
                                          double delta,
                                          uint64_t queries,
                                          double *epsilon);

// Noise levels with `sigma1 = ratio * sigma2` meeting `epsilon` after
// `queries` answers. `SEDML_STATUS_INFEASIBLE` if no noise level can.
//
// # Safety
// `sigma1` and `sigma2` must be writable.
enum SedmlStatus sedml_solve_noise(double epsilon,
                                   double delta,
                                   double ratio,
                                   uint64_t queries,
                                   double *sigma1,
                                   double *sigma2);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEDML_H */

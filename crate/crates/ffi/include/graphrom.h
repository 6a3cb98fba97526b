#ifndef GRAPHROM_H
#define GRAPHROM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GromBenchmark {
  // Unit square with parameterized advection.
  GROM_BENCHMARK_SA = 0,
  // Square with a movable square hole.
  GROM_BENCHMARK_MH = 1,
} GromBenchmark;

typedef enum GromStatus {
  GROM_STATUS_OK = 0,
  GROM_STATUS_NULL_POINTER = 1,
  GROM_STATUS_INVALID_ARGUMENT = 2,
  // An output buffer is shorter than required.
  GROM_STATUS_BUFFER_TOO_SMALL = 3,
  GROM_STATUS_DIMENSION = 4,
  GROM_STATUS_MESH_MISMATCH = 5,
  GROM_STATUS_OUT_OF_HULL = 6,
  GROM_STATUS_NUMERICAL = 7,
  GROM_STATUS_IO = 8,
  GROM_STATUS_FORMAT = 9,
  GROM_STATUS_PANIC = 10,
} GromStatus;

// Snapshot dataset handle.
typedef struct GromDataset GromDataset;

// Trained model handle (checkpoint plus rebuilt network).
typedef struct GromModel GromModel;

typedef struct GromDatasetShape {
  size_t num_sims;
  size_t num_times;
  size_t num_nodes;
  size_t d_u;
  size_t d_mu;
} GromDatasetShape;

typedef struct GromModelShape {
  size_t latent_dim;
  size_t d_mu;
  size_t d_u;
  size_t num_nodes;
  // `num_nodes * d_u`
  size_t field_len;
  size_t num_params;
} GromModelShape;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *grom_version(void);

// Message of the last failure on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *grom_last_error(void);

void grom_clear_error(void);

// Solves a benchmark on a `grid x grid` parameter grid and stores the
// dataset directory at `dir`.
//
// # Safety
// `dir` must be a NUL-terminated string.
enum GromStatus grom_generate_dataset(enum GromBenchmark bench,
                                      size_t grid,
                                      size_t resolution,
                                      double dt,
                                      const char *dir);

// # Safety
// `dir` must be a NUL-terminated string and `out` a valid pointer. On
// success `*out` owns a handle to release with [`grom_dataset_free`].
enum GromStatus grom_dataset_load(const char *dir, struct GromDataset **out);

// # Safety
// `ds` must come from [`grom_dataset_load`] and not be used afterwards.
void grom_dataset_free(struct GromDataset *ds);

// # Safety
// `ds` must be a live handle and `out` a valid pointer.
enum GromStatus grom_dataset_shape(const struct GromDataset *ds, struct GromDatasetShape *out);

// Copies the `num_times` snapshot instants.
//
// # Safety
// `ds` must be a live handle; `out` must hold `out_len` doubles.
enum GromStatus grom_dataset_times(const struct GromDataset *ds, double *out, size_t out_len);

// Copies the field of simulation `sim` at instant `k` (`num_nodes * d_u`
// values, node-major).
//
// # Safety
// `ds` must be a live handle; `out` must hold `out_len` doubles.
enum GromStatus grom_dataset_snapshot(const struct GromDataset *ds,
                                      size_t sim,
                                      size_t k,
                                      double *out,
                                      size_t out_len);

// Copies the signal of simulation `sim` at instant `k` (`d_mu` values).
//
// # Safety
// `ds` must be a live handle; `out` must hold `out_len` doubles.
enum GromStatus grom_dataset_signal(const struct GromDataset *ds,
                                    size_t sim,
                                    size_t k,
                                    double *out,
                                    size_t out_len);

// Loads a checkpoint directory and rebuilds the model on the mesh stored in
// `mesh_json`. A mesh that differs from the training mesh is refused with
// `MESH_MISMATCH`.
//
// # Safety
// `checkpoint_dir` and `mesh_json` must be NUL-terminated strings and `out`
// a valid pointer. On success `*out` owns a handle to release with
// [`grom_model_free`].
enum GromStatus grom_model_load(const char *checkpoint_dir,
                                const char *mesh_json,
                                struct GromModel **out);

// # Safety
// `m` must come from [`grom_model_load`] and not be used afterwards.
void grom_model_free(struct GromModel *m);

// # Safety
// `m` must be a live handle and `out` a valid pointer.
enum GromStatus grom_model_shape(const struct GromModel *m, struct GromModelShape *out);

// Decodes latent state `s` at `(t, mu)` into a physical-units field.
//
// # Safety
// `m` must be a live handle; `s`, `mu` and `out` must hold `s_len`, `mu_len`
// and `out_len` doubles.
enum GromStatus grom_model_decode(const struct GromModel *m,
                                  double t,
                                  const double *s,
                                  size_t s_len,
                                  const double *mu,
                                  size_t mu_len,
                                  double *out,
                                  size_t out_len);

// Integrates the latent dynamics from `s(0) = 0` and writes the states at
// the `n_times` instants (`n_times * latent_dim` values). `mu` is either
// one constant signal value (`d_mu` values) or one row per instant.
//
// # Safety
// `m` must be a live handle; the arrays must hold the stated lengths.
enum GromStatus grom_model_rollout(const struct GromModel *m,
                                   const double *times,
                                   size_t n_times,
                                   const double *mu,
                                   size_t mu_len,
                                   double *out,
                                   size_t out_len);

// Rollout plus decoding: writes `n_times * field_len` physical-units values.
//
// # Safety
// `m` must be a live handle; the arrays must hold the stated lengths.
enum GromStatus grom_model_simulate(const struct GromModel *m,
                                    const double *times,
                                    size_t n_times,
                                    const double *mu,
                                    size_t mu_len,
                                    double *out,
                                    size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRAPHROM_H */

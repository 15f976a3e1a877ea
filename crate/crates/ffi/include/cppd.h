#ifndef CPPD_H
#define CPPD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define CPPD_PRESET_FULL 0

#define CPPD_PRESET_SPARSE 1

#define CPPD_PRESET_LIMITED 2

#define CPPD_PRESET_DESK_FULL 3

#define CPPD_PRESET_DESK_SPARSE 4

#define CPPD_PRESET_DESK_LIMITED 5

/**
 * Result code of every fallible call.
 */
typedef enum CppdStatus {
  CPPD_STATUS_OK = 0,
  CPPD_STATUS_NULL_POINTER = 1,
  CPPD_STATUS_INVALID_ARGUMENT = 2,
  CPPD_STATUS_DIMENSION_MISMATCH = 3,
  /**
   * Divergence, non-finite values or a failed inner solve.
   */
  CPPD_STATUS_NUMERICAL = 4,
  CPPD_STATUS_IO = 5,
  CPPD_STATUS_PANIC = 6,
} CppdStatus;

/**
 * Opaque CT system: image grid, fan-beam geometry and masked projector.
 */
typedef struct CppdCtSystem CppdCtSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cppd_version(void);

/**
 * Message of the last failed call on this thread, or "" after a success.
 * Valid until the next `cppd_*` call on the same thread.
 */
const char *cppd_last_error(void);

/**
 * Build a system for an `nx` x `nx` grid of side `side_cm` and one of the
 * `CPPD_PRESET_*` scans, sized to that grid.
 */
enum CppdStatus cppd_ct_system_new(size_t nx,
                                   double side_cm,
                                   uint32_t preset,
                                   struct CppdCtSystem **out);

/**
 * Release a system; null is ignored.
 */
void cppd_ct_system_free(struct CppdCtSystem *sys);

/**
 * Number of pixels and of rays (views x bins).
 */
enum CppdStatus cppd_ct_system_dims(const struct CppdCtSystem *sys,
                                    size_t *n_pixels,
                                    size_t *n_rays);

/**
 * `sino = X image`.
 */
enum CppdStatus cppd_project(const struct CppdCtSystem *sys,
                             const double *image,
                             size_t n_image,
                             double *sino,
                             size_t n_sino);

/**
 * `image = X^T sino`.
 */
enum CppdStatus cppd_backproject(const struct CppdCtSystem *sys,
                                 const double *sino,
                                 size_t n_sino,
                                 double *image,
                                 size_t n_image);

/**
 * Seeded two-tissue phantom on an `nx` x `nx` grid of side `side_cm`.
 */
enum CppdStatus cppd_phantom(size_t nx, double side_cm, uint64_t seed, double *out, size_t n);

/**
 * Least-squares reconstruction with scalar steps `sigma = rho / L`,
 * `tau = 1 / (rho L)` for `k_max` iterations from zero. `final_r_sigma`
 * may be null.
 */
enum CppdStatus cppd_lsq_solve(const struct CppdCtSystem *sys,
                               const double *sino,
                               size_t n_sino,
                               double rho,
                               size_t k_max,
                               double *image,
                               size_t n_image,
                               double *final_r_sigma);

/**
 * Euclidean projection of `v` onto the l1 ball of `radius`. `out` may
 * equal `v`.
 */
enum CppdStatus cppd_project_l1_ball(const double *v, size_t n, double radius, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CPPD_H */

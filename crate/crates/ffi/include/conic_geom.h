#ifndef CONIC_GEOM_H
#define CONIC_GEOM_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of the C interface.
 */
typedef enum conic_status {
  CONIC_STATUS_OK = 0,
  CONIC_STATUS_NULL_POINTER = 1,
  CONIC_STATUS_INVALID_INPUT = 2,
  CONIC_STATUS_NO_PATH = 3,
  CONIC_STATUS_SINGULAR_EVALUATION = 4,
  CONIC_STATUS_DOMAIN = 5,
  CONIC_STATUS_UNSUPPORTED_FAMILY = 6,
  CONIC_STATUS_INVALID_GRID = 7,
  CONIC_STATUS_CONFIG = 8,
  CONIC_STATUS_IO = 9,
  /**
   * The scenario ran but reported invariant violations.
   */
  CONIC_STATUS_VIOLATIONS = 10,
  CONIC_STATUS_PANIC = 11,
} conic_status;

/**
 * Distance engine over one chart metric.
 */
typedef struct conic_engine conic_engine;

/**
 * A parsed and validated scenario.
 */
typedef struct conic_scenario conic_scenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next call into this library from the same thread.
 */
const char *conic_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *conic_version(void);

/**
 * Engine for the straight cone `dr² + r² dθ²` over a circle of the given
 * circumference, on `[0, height]`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage.
 */
enum conic_status conic_engine_new_cone(double circumference,
                                        double height,
                                        struct conic_engine **out);

/**
 * Engine for metric `metric` of a scenario given as TOML text, on the
 * default grid of that metric.
 *
 * # Safety
 * `toml` and `metric` must be NUL-terminated strings; `out` must be valid.
 */
enum conic_status conic_engine_from_scenario(const char *toml,
                                             const char *metric,
                                             struct conic_engine **out);

/**
 * Turns closed forms and curve refinement on or off (both on by default).
 *
 * # Safety
 * `engine` must come from a constructor of this library and not be freed.
 */
enum conic_status conic_engine_set_options(struct conic_engine *engine, bool exact, bool refine);

/**
 * Radial interval `[lo, hi]` of the engine's chart.
 *
 * # Safety
 * `engine` must be live; `lo` and `hi` must be valid.
 */
enum conic_status conic_engine_radial_domain(const struct conic_engine *engine,
                                             double *lo,
                                             double *hi);

/**
 * Distance between `(ya, ra)` and `(yb, rb)`. Boundary coordinates are an
 * angle on circles, ambient unit vectors on spheres, coordinates on tori,
 * and `[vertex]` or `[edge, t]` on meshes.
 *
 * # Safety
 * `ya` and `yb` must point to `ya_len` and `yb_len` doubles; `engine` must
 * be live; `out` must be valid.
 */
enum conic_status conic_engine_distance(const struct conic_engine *engine,
                                        const double *ya,
                                        uintptr_t ya_len,
                                        double ra,
                                        const double *yb,
                                        uintptr_t yb_len,
                                        double rb,
                                        double *out);

/**
 * Releases an engine. Null is ignored.
 *
 * # Safety
 * `engine` must come from this library and not be used afterwards.
 */
void conic_engine_free(struct conic_engine *engine);

/**
 * Parses scenario TOML. Relative mesh paths resolve against the working
 * directory.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be valid.
 */
enum conic_status conic_scenario_parse(const char *toml, struct conic_scenario **out);

/**
 * Loads a bundled scenario by name.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be valid.
 */
enum conic_status conic_scenario_bundled(const char *name, struct conic_scenario **out);

/**
 * Runs every task, writing artifacts under `out_dir`. A null `seed` keeps
 * the scenario seed. `artifacts` (optional) receives the number of files
 * written. Returns `Violations` when invariant checks failed.
 *
 * # Safety
 * `scenario` must be live; `out_dir` must be a NUL-terminated string;
 * `seed` and `artifacts` may be null or valid.
 */
enum conic_status conic_scenario_run(const struct conic_scenario *scenario,
                                     const char *out_dir,
                                     const uint64_t *seed,
                                     uintptr_t *artifacts);

/**
 * Releases a scenario. Null is ignored.
 *
 * # Safety
 * `scenario` must come from this library and not be used afterwards.
 */
void conic_scenario_free(struct conic_scenario *scenario);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONIC_GEOM_H */

#ifndef COMPASS_H
#define COMPASS_H

/* Generated by cbindgen from compass-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum compass_status {
  COMPASS_STATUS_OK = 0,
  COMPASS_STATUS_NULL_ARGUMENT,
  COMPASS_STATUS_INVALID_UTF8,
  COMPASS_STATUS_PARSE_ERROR,
  COMPASS_STATUS_VALIDATION_ERROR,
  COMPASS_STATUS_UNKNOWN_CHIP,
  COMPASS_STATUS_UNKNOWN_MODEL,
  COMPASS_STATUS_GRAPH_ERROR,
  COMPASS_STATUS_UNMAPPABLE,
  COMPASS_STATUS_PACKING_ERROR,
  COMPASS_STATUS_MEMORY_OVERFLOW,
  COMPASS_STATUS_IO_ERROR,
  COMPASS_STATUS_INTERNAL_ERROR,
} compass_status;

/**
 * Partitioning scheme selector.
 */
typedef enum compass_scheme {
  COMPASS_SCHEME_COMPASS = 0,
  COMPASS_SCHEME_GREEDY = 1,
  COMPASS_SCHEME_LAYERWISE = 2,
} compass_scheme;

/**
 * Optimization objective selector.
 */
typedef enum compass_objective {
  COMPASS_OBJECTIVE_LATENCY = 0,
  COMPASS_OBJECTIVE_EDP = 1,
} compass_objective;

/**
 * An opaque, validated chip configuration.
 */
typedef struct compass_chip compass_chip;

/**
 * An opaque, validated network graph.
 */
typedef struct compass_network compass_network;

/**
 * An opaque compile result holding the report and artifact strings.
 */
typedef struct compass_result compass_result;

/**
 * Compile options. Zero-initialized integer fields select the defaults.
 */
typedef struct compass_options {
  enum compass_scheme scheme;
  enum compass_objective objective;
  /**
   * Batch size; 0 selects 1.
   */
  uint32_t batch;
  uint64_t seed;
  bool overlap_writes;
  /**
   * Activation precision in bits; 0 selects 4.
   */
  uint32_t activation_bits;
  /**
   * GA generations; 0 selects the default (30).
   */
  uint32_t generations;
  /**
   * GA population; 0 selects the default (100).
   */
  uint32_t population;
  /**
   * Worker threads; 0 uses all cores.
   */
  uint32_t workers;
} compass_options;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the last error message of this thread, or NULL when no error
 * was recorded. Free with `compass_string_free`.
 */
char *compass_last_error(void);

/**
 * Frees a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must have been returned by a compass_* function and not freed yet.
 */
void compass_string_free(char *s);

/**
 * Builds one of the builtin chips ("S", "M" or "L").
 *
 * # Safety
 * `name` must be a valid NUL-terminated string; `out` non-NULL.
 */
enum compass_status compass_chip_builtin(const char *name, struct compass_chip **out);

/**
 * Loads a chip configuration file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` non-NULL.
 */
enum compass_status compass_chip_load(const char *path, struct compass_chip **out);

/**
 * Total crossbar capacity of the chip in bits.
 *
 * # Safety
 * `chip` must be a live handle from compass_chip_builtin/load.
 */
uint64_t compass_chip_capacity_bits(const struct compass_chip *chip);

/**
 * # Safety
 * `chip` must come from this library and not be freed twice.
 */
void compass_chip_free(struct compass_chip *chip);

/**
 * Builds one of the builtin benchmark networks ("vgg16", "resnet18",
 * "squeezenet").
 *
 * # Safety
 * `name` must be a valid NUL-terminated string; `out` non-NULL.
 */
enum compass_status compass_network_builtin(const char *name, struct compass_network **out);

/**
 * Loads a network description file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` non-NULL.
 */
enum compass_status compass_network_load(const char *path, struct compass_network **out);

/**
 * Total weight footprint of the network in bits.
 *
 * # Safety
 * `net` must be a live handle from compass_network_builtin/load.
 */
uint64_t compass_network_weight_bits(const struct compass_network *net);

/**
 * # Safety
 * `net` must come from this library and not be freed twice.
 */
void compass_network_free(struct compass_network *net);

/**
 * Fills `opts` with the defaults (compass scheme, latency objective,
 * batch 1, seed 0).
 *
 * # Safety
 * `opts` must point to writable memory for one compass_options.
 */
void compass_options_default(struct compass_options *opts);

/**
 * Runs the full pipeline (decompose, partition, optimize, schedule) and
 * returns an opaque result handle.
 *
 * # Safety
 * `chip` and `net` must be live handles; `opts` may be NULL for
 * defaults; `out` non-NULL.
 */
enum compass_status compass_compile(const struct compass_chip *chip,
                                    const struct compass_network *net,
                                    const struct compass_options *opts,
                                    struct compass_result **out);

/**
 * Samples per second at the compiled batch size.
 *
 * # Safety
 * `res` must be a live result handle.
 */
double compass_result_throughput(const struct compass_result *res);

/**
 * # Safety
 * `res` must be a live result handle.
 */
double compass_result_latency_ns(const struct compass_result *res);

/**
 * # Safety
 * `res` must be a live result handle.
 */
double compass_result_energy_per_sample_pj(const struct compass_result *res);

/**
 * # Safety
 * `res` must be a live result handle.
 */
double compass_result_edp_pj_ns(const struct compass_result *res);

/**
 * # Safety
 * `res` must be a live result handle.
 */
uint64_t compass_result_partition_count(const struct compass_result *res);

/**
 * The full run report as JSON. Free with `compass_string_free`.
 *
 * # Safety
 * `res` must be a live result handle.
 */
char *compass_result_report_json(const struct compass_result *res);

/**
 * The instruction dump (`core opcode operand bytes cycle` lines). Free
 * with `compass_string_free`.
 *
 * # Safety
 * `res` must be a live result handle.
 */
char *compass_result_instructions(const struct compass_result *res);

/**
 * The DRAM trace (`0xADDR READ|WRITE cycle` lines). Free with
 * `compass_string_free`.
 *
 * # Safety
 * `res` must be a live result handle.
 */
char *compass_result_trace(const struct compass_result *res);

/**
 * The GA convergence log as CSV, or NULL for non-GA schemes. Free with
 * `compass_string_free`.
 *
 * # Safety
 * `res` must be a live result handle.
 */
char *compass_result_convergence_csv(const struct compass_result *res);

/**
 * # Safety
 * `res` must come from this library and not be freed twice.
 */
void compass_result_free(struct compass_result *res);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COMPASS_H */

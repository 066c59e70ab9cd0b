#ifndef HEURLINK_H
#define HEURLINK_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum HlStatus {
  HL_STATUS_OK = 0,
  HL_STATUS_NULL_POINTER = 1,
  HL_STATUS_INVALID_ARGUMENT = 2,
  HL_STATUS_OUT_OF_RANGE = 3,
  HL_STATUS_DIMENSION_MISMATCH = 4,
  HL_STATUS_NON_FINITE = 5,
  HL_STATUS_IO = 6,
  HL_STATUS_PARSE = 7,
  HL_STATUS_LIMIT_EXCEEDED = 8,
  HL_STATUS_INVARIANT = 9,
  HL_STATUS_VERSION = 10,
  HL_STATUS_INTERNAL = 11,
} HlStatus;

/**
 * Opaque undirected graph.
 */
typedef struct HlGraph HlGraph;

/**
 * Opaque trained model loaded from a checkpoint.
 */
typedef struct HlModel HlModel;

/**
 * Heuristic parameters. A NaN real or a negative order selects the
 * method's default.
 */
typedef struct HlHeuristicParams {
  double gamma;
  double phi;
  double alpha;
  int64_t order;
} HlHeuristicParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *hl_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hl_version(void);

/**
 * Builds a graph from `num_edges` pairs stored flat in `edges`
 * (`2 * num_edges` ids).
 *
 * # Safety
 * `edges` must hold `2 * num_edges` values and `out` must be writable.
 */
enum HlStatus hl_graph_from_edges(uint64_t num_nodes,
                                  const uint64_t *edges,
                                  size_t num_edges,
                                  struct HlGraph **out);

/**
 * Reads a whitespace-separated edge list; the node count is `1 + max id`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum HlStatus hl_graph_load(const char *path, struct HlGraph **out);

/**
 * # Safety
 * `graph` must come from this library and not have been freed.
 */
uint64_t hl_graph_num_nodes(const struct HlGraph *graph);

/**
 * # Safety
 * `graph` must come from this library and not have been freed.
 */
uint64_t hl_graph_num_edges(const struct HlGraph *graph);

/**
 * Frees a graph; NULL is ignored.
 *
 * # Safety
 * `graph` must come from this library and be freed at most once.
 */
void hl_graph_free(struct HlGraph *graph);

/**
 * Parameters that select every method default.
 */
struct HlHeuristicParams hl_heuristic_params_default(void);

/**
 * Scores `num_pairs` flat pairs with a named heuristic (`cn`, `llhn`,
 * `ra`, `katz`, `glhn`, `rwr`, `lpi`, `lrw`, `ra_sq`, `ra_sym`). `params`
 * may be NULL for defaults.
 *
 * # Safety
 * `pairs` must hold `2 * num_pairs` values and `out` `num_pairs` slots.
 */
enum HlStatus hl_heuristic_score(const struct HlGraph *graph,
                                 const char *method,
                                 const struct HlHeuristicParams *params,
                                 const uint64_t *pairs,
                                 size_t num_pairs,
                                 double *out);

/**
 * Fraction of positives scoring strictly above the `k`-th largest
 * negative.
 *
 * # Safety
 * Arrays must hold the stated number of values; `out` must be writable.
 */
enum HlStatus hl_hits_at_k(const double *pos,
                           size_t num_pos,
                           const double *neg,
                           size_t num_neg,
                           size_t k,
                           double *out);

/**
 * Mean reciprocal rank of each positive against the shared negatives,
 * ties counting half.
 *
 * # Safety
 * Arrays must hold the stated number of values; `out` must be writable.
 */
enum HlStatus hl_mrr(const double *pos,
                     size_t num_pos,
                     const double *neg,
                     size_t num_neg,
                     double *out);

/**
 * Probability that a random positive outscores a random negative.
 *
 * # Safety
 * Arrays must hold the stated number of values; `out` must be writable.
 */
enum HlStatus hl_auc(const double *pos,
                     size_t num_pos,
                     const double *neg,
                     size_t num_neg,
                     double *out);

/**
 * Loads a JSON checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum HlStatus hl_model_load(const char *path, struct HlModel **out);

/**
 * Node count the model was trained for.
 *
 * # Safety
 * `model` must come from this library and not have been freed.
 */
uint64_t hl_model_num_nodes(const struct HlModel *model);

/**
 * Scores flat pairs with a model on a propagation graph. `features` is a
 * row-major `rows × cols` matrix, or NULL when the model uses embeddings
 * only.
 *
 * # Safety
 * Arrays must hold the stated number of values; handles must be live.
 */
enum HlStatus hl_model_score(const struct HlModel *model,
                             const struct HlGraph *graph,
                             const double *features,
                             size_t rows,
                             size_t cols,
                             const uint64_t *pairs,
                             size_t num_pairs,
                             double *out);

/**
 * Frees a model; NULL is ignored.
 *
 * # Safety
 * `model` must come from this library and be freed at most once.
 */
void hl_model_free(struct HlModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HEURLINK_H */

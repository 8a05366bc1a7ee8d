#ifndef KASGCN_H
#define KASGCN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Edge-list field separator.
typedef enum KasgcnDelimiter {
  KASGCN_DELIMITER_AUTO = 0,
  KASGCN_DELIMITER_COMMA = 1,
  KASGCN_DELIMITER_TAB = 2,
  KASGCN_DELIMITER_SPACE = 3,
} KasgcnDelimiter;

// Result of every call.
typedef enum KasgcnStatus {
  KASGCN_STATUS_OK = 0,
  KASGCN_STATUS_NULL_POINTER = 1,
  KASGCN_STATUS_INVALID_UTF8 = 2,
  KASGCN_STATUS_INVALID_ARGUMENT = 3,
  KASGCN_STATUS_IO = 4,
  KASGCN_STATUS_GRAPH = 5,
  KASGCN_STATUS_CONFIG = 6,
  KASGCN_STATUS_TRAIN = 7,
  KASGCN_STATUS_EVAL = 8,
  KASGCN_STATUS_BUFFER_TOO_SMALL = 9,
  KASGCN_STATUS_PANIC = 10,
} KasgcnStatus;

// A preprocessed signed graph.
typedef struct KasgcnGraph KasgcnGraph;

// A trained network with its embeddings and loss curve.
typedef struct KasgcnModel KasgcnModel;

// Signed clustering quality of a labelling.
typedef struct KasgcnClusterQuality {
  double pos_in;
  double neg_out;
  double q;
  // Nonzero when the graph has no positive edges and `pos_in` is set to 1.
  int pos_in_vacuous;
  // Nonzero when the graph has no negative edges and `neg_out` is set to 1.
  int neg_out_vacuous;
} KasgcnClusterQuality;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread; empty if none. The pointer
// stays valid until the next failing call on this thread.
const char *kasgcn_last_error(void);

// Library version as a static NUL-terminated string.
const char *kasgcn_version(void);

// Frees a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void kasgcn_string_free(char *s);

// Loads and preprocesses an edge list.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum KasgcnStatus kasgcn_graph_load(const char *path,
                                    enum KasgcnDelimiter delimiter,
                                    bool skip_header,
                                    struct KasgcnGraph **out);

// Builds a graph from `count` raw records `(sources[i], targets[i],
// weights[i])`, preprocessed exactly like a loaded edge list.
//
// # Safety
// The three arrays must hold `count` values each; `out` must be writable.
enum KasgcnStatus kasgcn_graph_from_edges(const int64_t *sources,
                                          const int64_t *targets,
                                          const double *weights,
                                          size_t count,
                                          struct KasgcnGraph **out);

// # Safety
// `g` must be null or a handle from this library not yet freed.
void kasgcn_graph_free(struct KasgcnGraph *g);

// Node and edge counts after preprocessing.
//
// # Safety
// `g` must be a live handle; `nodes` and `edges` must be writable.
enum KasgcnStatus kasgcn_graph_size(const struct KasgcnGraph *g, size_t *nodes, size_t *edges);

// Original id of each node, in node order. `ids` must hold the node count.
//
// # Safety
// `g` must be a live handle; `ids` must hold `len` writable values.
enum KasgcnStatus kasgcn_graph_node_ids(const struct KasgcnGraph *g, int64_t *ids, size_t len);

// Graph statistics as a JSON object; free with [`kasgcn_string_free`].
//
// # Safety
// `g` must be a live handle; `out` must be writable.
enum KasgcnStatus kasgcn_graph_stats_json(const struct KasgcnGraph *g, char **out);

// Trains a model on `g`. `config_toml` uses the CLI's flat config keys
// (`variant`, `epochs`, `seed`, ...); null or empty means all defaults.
//
// # Safety
// `g` must be a live handle; `config_toml` null or NUL-terminated; `out`
// writable.
enum KasgcnStatus kasgcn_train(const struct KasgcnGraph *g,
                               const char *config_toml,
                               struct KasgcnModel **out);

// # Safety
// `m` must be null or a handle from this library not yet freed.
void kasgcn_model_free(struct KasgcnModel *m);

// Embedding matrix shape: one row per node.
//
// # Safety
// `m` must be a live handle; `rows` and `cols` must be writable.
enum KasgcnStatus kasgcn_model_embedding_shape(const struct KasgcnModel *m,
                                               size_t *rows,
                                               size_t *cols);

// Copies the row-major embeddings into `buf` of `len` values.
//
// # Safety
// `m` must be a live handle; `buf` must hold `len` writable values.
enum KasgcnStatus kasgcn_model_embeddings(const struct KasgcnModel *m, double *buf, size_t len);

// Number of recorded losses, one per epoch.
//
// # Safety
// `m` must be a live handle; `len` must be writable.
enum KasgcnStatus kasgcn_model_loss_len(const struct KasgcnModel *m, size_t *len);

// Copies the loss curve into `buf` of `len` values.
//
// # Safety
// `m` must be a live handle; `buf` must hold `len` writable values.
enum KasgcnStatus kasgcn_model_loss_curve(const struct KasgcnModel *m, double *buf, size_t len);

// Training wall-clock time in seconds.
//
// # Safety
// `m` must be a live handle; `seconds` must be writable.
enum KasgcnStatus kasgcn_model_seconds(const struct KasgcnModel *m, double *seconds);

// Writes all trained parameters to a checkpoint file.
//
// # Safety
// `m` must be a live handle; `path` NUL-terminated.
enum KasgcnStatus kasgcn_model_save(const struct KasgcnModel *m, const char *path);

// k-means++ on a row-major `rows × cols` matrix; writes one label per row.
//
// # Safety
// `points` must hold `rows·cols` values and `labels` `rows` writable values.
enum KasgcnStatus kasgcn_kmeans(const double *points,
                                size_t rows,
                                size_t cols,
                                size_t k,
                                uint64_t seed,
                                size_t *labels);

// Quality of a node labelling of `g`; `len` must equal the node count.
//
// # Safety
// `g` must be a live handle; `labels` must hold `len` values; `out` writable.
enum KasgcnStatus kasgcn_cluster_quality(const struct KasgcnGraph *g,
                                         const size_t *labels,
                                         size_t len,
                                         struct KasgcnClusterQuality *out);

// Mean row-wise cosine of two row-major `rows × cols` matrices, skipping
// rows where either side is zero; `skipped` may be null.
//
// # Safety
// `a` and `b` must hold `rows·cols` values; `mean` writable; `skipped`
// null or writable.
enum KasgcnStatus kasgcn_cosine_similarity(const double *a,
                                           const double *b,
                                           size_t rows,
                                           size_t cols,
                                           double *mean,
                                           size_t *skipped);

// Runs a full CLI configuration (same keys as `kasgcn run`), writing its
// outputs to `output_dir`. `jobs` repeats run concurrently.
//
// # Safety
// `config_toml` must be NUL-terminated.
enum KasgcnStatus kasgcn_run(const char *config_toml, size_t jobs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KASGCN_H */

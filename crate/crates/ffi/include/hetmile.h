#ifndef HETMILE_H
#define HETMILE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

// Result code of every fallible call. The numeric values of the first
// four match the exit codes of the `hetmile` command line tool.
typedef enum HmStatus {
  HM_STATUS_OK = 0,
  HM_STATUS_CONFIG_ERROR = 2,
  HM_STATUS_DATA_ERROR = 3,
  HM_STATUS_NUMERIC_ERROR = 4,
  HM_STATUS_NULL_POINTER = 10,
  HM_STATUS_INVALID_ARGUMENT = 11,
  HM_STATUS_PANIC = 12,
} HmStatus;

// Values accepted in [`HmPipelineOptions::strategy`].
typedef enum HmStrategy {
  HM_STRATEGY_JACC_MAX = 0,
  HM_STRATEGY_JACC_WRS = 1,
  HM_STRATEGY_LSH = 2,
} HmStrategy;

// Coarsening chain `G_0 .. G_m` with its matchings.
typedef struct HmChain HmChain;

// Node-by-dimension embedding matrix.
typedef struct HmEmbedding HmEmbedding;

// A loaded heterogeneous graph.
typedef struct HmGraph HmGraph;

// Class labels for a subset of a graph's nodes.
typedef struct HmLabels HmLabels;

// Commonly tuned pipeline settings. Start from
// [`hm_pipeline_options_default`] and change fields as needed; for the full
// configuration use [`hm_pipeline_run_toml`].
typedef struct HmPipelineOptions {
  uint32_t dim;
  uint32_t levels;
  // One of the [`HmStrategy`] values.
  uint32_t strategy;
  uint32_t lsh_k;
  uint64_t seed;
  uint32_t walks_per_node;
  uint32_t walk_length;
  uint32_t window;
  uint32_t negatives;
  uint32_t walk_epochs;
  uint32_t refine_layers;
  uint32_t refine_epochs;
  double refine_learning_rate;
} HmPipelineOptions;

// Settings of the planted-community generator.
typedef struct HmSynthOptions {
  uint32_t types;
  uint32_t n_per_type;
  uint32_t communities;
  double p_in;
  double p_out;
  uint64_t seed;
} HmSynthOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *hm_version(void);

// Message of the last failed call on this thread, or null if none. The
// pointer stays valid until the next failing call on the same thread.
const char *hm_last_error(void);

// Defaults matching the command line tool.
struct HmPipelineOptions hm_pipeline_options_default(void);

// Loads a graph from a schema file, an edge TSV and an optional node TSV
// (`nodes_path` may be null).
//
// # Safety
// Path arguments must be null or NUL-terminated strings; `out` must be
// writable.
enum HmStatus hm_graph_load(const char *schema_path,
                            const char *edges_path,
                            const char *nodes_path,
                            struct HmGraph **out);

// Generates a planted-community graph together with its community labels.
// `labels_out` may be null when the labels are not needed.
//
// # Safety
// `options` must point to a valid struct; `graph_out` must be writable and
// `labels_out` null or writable.
enum HmStatus hm_synth_generate(const struct HmSynthOptions *options,
                                struct HmGraph **graph_out,
                                struct HmLabels **labels_out);

// # Safety
// `graph` must be null or a live handle.
size_t hm_graph_num_nodes(const struct HmGraph *graph);

// Number of edges summed over relations.
//
// # Safety
// `graph` must be null or a live handle.
size_t hm_graph_num_edges(const struct HmGraph *graph);

// # Safety
// `graph` must be null or a live handle.
size_t hm_graph_num_node_types(const struct HmGraph *graph);

// # Safety
// `graph` must be null or a handle not freed before.
void hm_graph_free(struct HmGraph *graph);

// Loads `node_id <TAB> label` lines for `graph`.
//
// # Safety
// `path` must be a NUL-terminated string, `graph` a live handle and `out`
// writable.
enum HmStatus hm_labels_load(const char *path, const struct HmGraph *graph, struct HmLabels **out);

// # Safety
// `labels` must be null or a handle not freed before.
void hm_labels_free(struct HmLabels *labels);

// Runs coarsening, base embedding and refinement with `options` and
// returns `E_0`.
//
// # Safety
// `graph` and `options` must be valid; `out` writable.
enum HmStatus hm_pipeline_run(const struct HmGraph *graph,
                              const struct HmPipelineOptions *options,
                              struct HmEmbedding **out);

// Like [`hm_pipeline_run`] with a TOML configuration in the command line
// tool's format. Data paths in the document are ignored.
//
// # Safety
// `graph` must be valid, `toml` a NUL-terminated string and `out` writable.
enum HmStatus hm_pipeline_run_toml(const struct HmGraph *graph,
                                   const char *toml,
                                   struct HmEmbedding **out);

// # Safety
// `emb` must be null or a live handle.
size_t hm_embedding_rows(const struct HmEmbedding *emb);

// # Safety
// `emb` must be null or a live handle.
size_t hm_embedding_dim(const struct HmEmbedding *emb);

// Copies the matrix row-major into `buf`, which holds `len` doubles and
// must have room for `rows * dim` of them.
//
// # Safety
// `emb` must be a live handle and `buf` valid for `len` writes.
enum HmStatus hm_embedding_copy(const struct HmEmbedding *emb, double *buf, size_t len);

// Saves the embedding; `binary` selects the binary format over word2vec
// text. When `graph` is non-null its node ids label the rows.
//
// # Safety
// `emb` must be a live handle, `graph` null or live, `path` a
// NUL-terminated string.
enum HmStatus hm_embedding_save(const struct HmEmbedding *emb,
                                const struct HmGraph *graph,
                                const char *path,
                                bool binary);

// Loads an embedding file in either format.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum HmStatus hm_embedding_load(const char *path, struct HmEmbedding **out);

// Micro-F1 of one-vs-rest logistic regression under stratified `folds`-fold
// cross validation; mean and population std over folds.
//
// # Safety
// Handles must be live; `mean` and `std` writable.
enum HmStatus hm_node_classification(const struct HmEmbedding *emb,
                                     const struct HmLabels *labels,
                                     uint32_t folds,
                                     uint64_t seed,
                                     double *mean,
                                     double *std);

// # Safety
// `emb` must be null or a handle not freed before.
void hm_embedding_free(struct HmEmbedding *emb);

// Coarsens `graph` with the coarsening fields of `options`.
//
// # Safety
// `graph` and `options` must be valid; `out` writable.
enum HmStatus hm_coarsen(const struct HmGraph *graph,
                         const struct HmPipelineOptions *options,
                         struct HmChain **out);

// Number of coarse levels actually built (early stopping may cut the
// requested count short).
//
// # Safety
// `chain` must be null or a live handle.
size_t hm_chain_levels(const struct HmChain *chain);

// Node count of `G_level`, or 0 when `level` is out of range.
//
// # Safety
// `chain` must be null or a live handle.
size_t hm_chain_num_nodes(const struct HmChain *chain, size_t level);

// Supernode in `G_{level+1}` that node `node` of `G_level` belongs to.
//
// # Safety
// `chain` must be a live handle and `out` writable.
enum HmStatus hm_chain_supernode(const struct HmChain *chain,
                                 size_t level,
                                 uint32_t node,
                                 uint32_t *out);

// Writes the chain into directory `dir`.
//
// # Safety
// `chain` must be a live handle and `dir` a NUL-terminated string.
enum HmStatus hm_chain_save(const struct HmChain *chain, const char *dir);

// # Safety
// `chain` must be null or a handle not freed before.
void hm_chain_free(struct HmChain *chain);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HETMILE_H */

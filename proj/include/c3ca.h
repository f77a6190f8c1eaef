#ifndef C3CA_H
#define C3CA_H

/* Public C interface of the c3ca shared library.
 *
 * c3ca is a desk-scale contrastive scene-captioning pipeline: synthetic
 * point-cloud scenes are tokenized into local patches, encoded by a frozen
 * transformer steered by trainable task tokens, aligned with caption
 * embeddings through an InfoNCE objective, and described by an
 * autoregressive cross-attention decoder. This header exposes the whole
 * pipeline (data generation, training, captioning, retrieval, evaluation,
 * gradient self-check) behind opaque handles and status codes so that the
 * CLI and any foreign-language caller need no C++ ABI.
 *
 * Conventions:
 *   - Every function returns c3ca_status; C3CA_OK means success.
 *   - On failure, c3ca_last_error() returns a thread-local detail message
 *     (valid until the next c3ca call on the same thread).
 *   - Strings returned through char** out-parameters are heap-allocated
 *     and must be released with c3ca_string_free().
 *   - Configuration is passed as JSON text. Unknown keys are rejected.
 *     c3ca_resolve_*_config() merges user JSON over built-in defaults and
 *     returns the fully resolved document, so callers can display the
 *     exact configuration a run will use.
 */

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum c3ca_status {
  C3CA_OK = 0,
  C3CA_ERR_INVALID_ARGUMENT = 1, /* bad config, bad shape, bad value */
  C3CA_ERR_IO = 2,               /* missing or unreadable/unwritable file */
  C3CA_ERR_NUMERIC = 3,          /* NaN/Inf encountered; run aborted */
  C3CA_ERR_RUNTIME = 4           /* anything else */
} c3ca_status;

/* Stable name for a status code ("ok", "invalid_argument", ...). */
const char* c3ca_status_name(c3ca_status status);

/* Thread-local message describing the most recent failure; empty string if
 * the last call on this thread succeeded. */
const char* c3ca_last_error(void);

void c3ca_string_free(char* s);

/* ---- configuration ------------------------------------------------- */

/* Merge |overrides_json| (may be NULL or "{}") over the built-in defaults
 * and validate. The resolved JSON is returned through |resolved_out|. */
c3ca_status c3ca_resolve_datagen_config(const char* overrides_json,
                                        char** resolved_out);
c3ca_status c3ca_resolve_train_config(const char* overrides_json,
                                      char** resolved_out);

/* ---- dataset generation -------------------------------------------- */

/* Write a synthetic scene/caption dataset under |out_dir|: one JSON file
 * per scene plus a manifest with the train/val/test split. |config_json|
 * must be a resolved datagen config. Deterministic per (seed, index). */
c3ca_status c3ca_generate_dataset(const char* out_dir,
                                  const char* config_json);

/* ---- training ------------------------------------------------------ */

/* Run the joint contrastive + captioning training loop on the train split
 * of |dataset_dir|. Writes the final checkpoint to |checkpoint_path|
 * (plus "<path>.meta.json" and "<path>.vocab.json" sidecars) and appends
 * one JSON line per step to |metrics_log_path|. |config_json| must be a
 * resolved train config. */
c3ca_status c3ca_train(const char* dataset_dir, const char* config_json,
                       const char* checkpoint_path,
                       const char* metrics_log_path);

/* ---- trained-model handle ------------------------------------------ */

typedef struct c3ca_model_s c3ca_model;

/* Load a checkpoint written by c3ca_train (expects the sidecar files next
 * to it). The handle is immutable and safe for concurrent read-only use. */
c3ca_status c3ca_model_load(const char* checkpoint_path, c3ca_model** out);
void c3ca_model_free(c3ca_model* model);

/* Caption a single scene file. |options_json| keys: "mode" ("greedy" or
 * "beam"), "beam_width", "max_len", "box_source" ("none", "gt", "head").
 * Returns a JSON object {"caption", "log_prob", "box"?} through |out|. */
c3ca_status c3ca_model_caption_scene(c3ca_model* model,
                                     const char* scene_json_path,
                                     const char* options_json, char** out);

/* Caption every scene of a dataset split ("train", "val", "test" or "all")
 * and write one prediction JSON object per line to |out_jsonl_path|. */
c3ca_status c3ca_caption_dataset(c3ca_model* model, const char* dataset_dir,
                                 const char* split, const char* options_json,
                                 const char* out_jsonl_path);

/* Scene->text top-1 retrieval accuracy over a split. |options_json| keys:
 * "batch_size", "seed", "trials" (0 = one shuffled pass in batch chunks,
 * >0 = that many random batches). */
c3ca_status c3ca_retrieval_accuracy(c3ca_model* model,
                                    const char* dataset_dir,
                                    const char* split,
                                    const char* options_json,
                                    double* accuracy_out);

/* ---- evaluation ------------------------------------------------------
 * Caption metrics gated by 3D box overlap. |options_json| keys: "ious"
 * (list of thresholds), "nms_threshold", "metrics" (subset of "cider",
 * "bleu4", "rougel", "meteor"), "all_objects" (evaluate every annotated
 * object instead of each scene's first). The report is returned as JSON. */

/* Evaluate a file of pre-joined record lines, each
 * {"predicted_caption", "predicted_box"|null, "gt_box", "references",
 *  "score", "scene_id"?, "object_id"?}. */
c3ca_status c3ca_evaluate_records(const char* records_jsonl_path,
                                  const char* options_json,
                                  char** report_json_out);

/* Join prediction lines from c3ca_caption_dataset against the ground
 * truth of a dataset split, then evaluate. Unmatched annotated objects
 * count with overlap zero. */
c3ca_status c3ca_evaluate_predictions(const char* predictions_jsonl_path,
                                      const char* dataset_dir,
                                      const char* split,
                                      const char* options_json,
                                      char** report_json_out);

/* ---- gradient self-check -------------------------------------------- */

/* Build a tiny end-to-end model from |seed|, compute the joint loss, and
 * compare analytic gradients of every trainable parameter against central
 * finite differences. Writes the worst relative error to |max_rel_err|. */
c3ca_status c3ca_gradcheck(uint64_t seed, double* max_rel_err);

#ifdef __cplusplus
}
#endif

#endif /* C3CA_H */

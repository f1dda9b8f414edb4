/* plateaulab: C interface to the vision-token masking, plateau-guided
 * late-layer merging, and attention-profiling laboratory.
 *
 * Conventions:
 *   - every fallible function returns plab_status; PLAB_OK is 0
 *   - on failure, plab_last_error() returns a message for the calling
 *     thread, valid until that thread's next failing call
 *   - out-parameters are written only on PLAB_OK
 *   - char* results are heap strings; release them with plab_string_free
 *   - handles are released with their matching _free; NULL is accepted
 */
#ifndef PLATEAULAB_H
#define PLATEAULAB_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum plab_status {
    PLAB_OK = 0,
    PLAB_ERR_INVALID_ARGUMENT = 1,
    PLAB_ERR_DIM_MISMATCH = 2,
    PLAB_ERR_IO = 3,
    PLAB_ERR_FORMAT = 4,
    PLAB_ERR_NUMERIC = 5,
    PLAB_ERR_EVAL = 6,
    PLAB_ERR_INTERNAL = 7
} plab_status;

typedef struct plab_checkpoint plab_checkpoint;
typedef struct plab_task plab_task;

const char* plab_version(void);

/* message for the most recent failure on this thread ("" if none) */
const char* plab_last_error(void);

void plab_string_free(char* s);
void plab_checkpoint_free(plab_checkpoint* c);
void plab_task_free(plab_task* t);

/* ---- checkpoints ---- */

plab_status plab_checkpoint_load(const char* path, plab_checkpoint** out);
plab_status plab_checkpoint_save(const plab_checkpoint* c, const char* path);

/* config_kv: model.* keys (model.num_layers = 12, ...); missing keys take
 * the library defaults. kind: "base_lm", "mllm", or "merged". */
plab_status plab_checkpoint_random(const char* config_kv, const char* kind, uint64_t seed,
                                   plab_checkpoint** out);

/* sha256 hex of the canonical serialization */
plab_status plab_checkpoint_digest(const plab_checkpoint* c, char** out_hex);

/* kind, config, tensor count and names as JSON */
plab_status plab_checkpoint_info_json(const plab_checkpoint* c, char** out_json);

/* per-tensor max abs difference report as JSON */
plab_status plab_checkpoint_diff_json(const plab_checkpoint* a, const plab_checkpoint* b,
                                      char** out_json);

/* ---- tasks ---- */

plab_status plab_task_load(const char* path, plab_task** out);
plab_status plab_task_save(const plab_task* t, const char* path);

/* skill: "modular-sum" or "copy-with-transform" */
plab_status plab_task_generate_text(uint64_t seed, int n, const char* skill, plab_task** out);

plab_status plab_task_generate_grounded(uint64_t seed, int n, int grid_size, int n_attributes,
                                        int vision_feature_dim, plab_task** out);

/* task_id, kind, skill, sizes per split as JSON */
plab_status plab_task_info_json(const plab_task* t, char** out_json);

/* ---- training ---- */

/* config_kv: model.* and train.* keys. Returns the trained checkpoint and
 * a step,split,loss,accuracy CSV of the training curve. */
plab_status plab_train_base(const char* config_kv, const plab_task* text_task,
                            plab_checkpoint** out_ckpt, char** out_curve_csv);

/* continues from a base checkpoint on a grounded task (adds a projector) */
plab_status plab_finetune(const char* config_kv, const plab_checkpoint* base,
                          const plab_task* grounded_task, plab_checkpoint** out_ckpt,
                          char** out_curve_csv);

/* ---- evaluation ---- */

/* split: "train", "val", or "test". mask_cut_layer: 0 for no mask, else
 * 1..L+1 (layers >= the cut ignore vision tokens; L+1 is a no-op).
 * subsample_n/subsample_seed: 0 evaluates the whole split, else a fixed
 * seeded subsample of that size. Returns the full eval report as JSON. */
plab_status plab_eval(const plab_checkpoint* c, const plab_task* t, const char* split,
                      int mask_cut_layer, int subsample_n, uint64_t subsample_seed,
                      int with_records, int workers, char** out_json);

/* evaluates every cut layer k = 1..L+1 on the split; returns {points:[{k,score}]} */
plab_status plab_sweep_mask(const plab_checkpoint* c, const plab_task* t, const char* split,
                            int subsample_n, uint64_t subsample_seed, int workers,
                            char** out_json);

/* labeled reports (parallel arrays, n entries); deltas against baseline_index */
plab_status plab_compare(const char* const* labels, const char* const* report_jsons, int n,
                         int baseline_index, char** out_json);

/* ---- plateau detection ---- */

/* profile_json: {points:[{k,score}]} for k = 1..L+1 */
plab_status plab_detect_plateau(const char* profile_json, int num_layers, int smoothing_window,
                                int min_plateau_len, double slope_tol_frac, char** out_json);

/* ---- merging ---- */

/* config_kv: merge.layer_lo, merge.layer_hi (default L), merge.lambda1,
 * merge.lambda2, merge.subset ("attn_qkvo" | "all_backbone") */
plab_status plab_merge(const plab_checkpoint* base, const plab_checkpoint* vlm,
                       const char* config_kv, plab_checkpoint** out);

/* full pipeline: sweep, knee detection, neighborhood + lambda grid search,
 * final merge. config_kv: model-independent plam.* keys. Returns the merged
 * checkpoint and the pipeline report as JSON. */
plab_status plab_plam_pipeline(const plab_checkpoint* base, const plab_checkpoint* vlm,
                               const plab_task* t, const char* config_kv,
                               plab_checkpoint** out_ckpt, char** out_report_json);

/* ---- attention analysis ---- */

/* stage: "prefill" or "decode". sources: comma list of "vis",
 * "pre_plus_ins", "res" (empty or NULL = all three). Aggregates over the
 * split; mask_cut_layer as in plab_eval. */
plab_status plab_mass_profile(const plab_checkpoint* c, const plab_task* t, const char* split,
                              const char* stage, const char* sources, int mask_cut_layer,
                              int workers, char** out_json);

/* mean attention mass from instruction tokens onto vision tokens over
 * layers layer_lo..L, averaged over the split (prefill stage) */
plab_status plab_late_vision_mass(const plab_checkpoint* c, const plab_task* t, const char* split,
                                  int layer_lo, int workers, double* out_mass);

/* head-averaged attention from the answer-position query onto the vision
 * grid for one example, rendered as an ASCII PGM image (head = -1 averages
 * heads, else 0-based head index) */
plab_status plab_heatmap_pgm(const plab_checkpoint* c, const plab_task* t, int example_index,
                             int layer, int head, int cell_px, char** out_pgm);

/* share of grounded examples whose peak vision-attention cell is the
 * queried cell, at the given layer */
plab_status plab_localization_rate(const plab_checkpoint* c, const plab_task* t,
                                   const char* split, int layer, char** out_json);

#ifdef __cplusplus
}
#endif

#endif /* PLATEAULAB_H */

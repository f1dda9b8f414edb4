#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ckpt_io.hpp"
#include "evalharness.hpp"
#include "plateau.hpp"

namespace plab {

inline constexpr const char* k_subset_attn = "attn_qkvo";
inline constexpr const char* k_subset_all = "all_backbone";

// Layer-range weight interpolation: W = lambda1 * W_base + lambda2 * W_vlm
// for every selected tensor of layers [layer_lo, layer_hi]; everything else
// is copied bitwise from the vlm checkpoint.
struct MergeSpec {
    int layer_lo = 0;  // 1-based inclusive
    int layer_hi = 0;
    double lambda1 = 0.0;  // weight on the base LM
    double lambda2 = 1.0;  // weight on the vlm
    std::string subset = k_subset_attn;

    void validate(int num_layers) const;
};

// slot suffixes selected by a subset tag: the four attention projections for
// attn_qkvo, every per-layer tensor (attention, ffn, norms) for all_backbone
const std::vector<std::string>& subset_slots(const std::string& subset);

Checkpoint merge(const Checkpoint& base, const Checkpoint& vlm, const MergeSpec& spec);

struct GridCell {
    MergeSpec spec;
    double score = 0.0;
    bool ok = false;
    std::string error;
};

struct GridSearchResult {
    MergeSpec best;
    double best_score = 0.0;
    std::vector<GridCell> table;  // k0-major, then lambda1, then lambda2
};

// Evaluates merge(base, vlm, spec) for every (k0, lambda1, lambda2) cell and
// returns the argmax with deterministic tie-breaking: higher score, then
// larger k0, then smaller lambda1, then lambda2 closest to 1, then smaller
// lambda2. cell_filter (optional) prunes coefficient pairs before they enter
// the table. Per-cell evaluation failures are recorded and skipped; every
// cell failing is an error. Results are identical for any worker count.
GridSearchResult grid_search(const Checkpoint& base, const Checkpoint& vlm,
                             const std::vector<int>& k0_candidates,
                             const std::vector<double>& lambda1_grid,
                             const std::vector<double>& lambda2_grid, const std::string& subset,
                             const std::function<double(const Checkpoint&, const MergeSpec&)>& eval_fn,
                             int workers = 0,
                             const std::function<bool(double, double)>& cell_filter = nullptr);

// default coefficient grid: 0.0 .. 1.5 in steps of 0.1
std::vector<double> default_lambda_grid();

struct PipelineConfig {
    int sweep_eval_n = 0;   // val examples per sweep point, 0 = whole split
    int grid_eval_n = 256;  // fixed val subsample for grid cells
    int radius = 3;
    int smoothing_window = 3;
    int min_plateau_len = 2;
    double slope_tol_frac = 0.1;
    std::string subset = k_subset_attn;
    std::vector<double> lambda1_grid;  // empty = default grid
    std::vector<double> lambda2_grid;
    // optional prune: keep cells with lambda1 + lambda2 inside this window
    double lambda_sum_lo = -1.0;
    double lambda_sum_hi = -1.0;
    uint64_t seed = 0;
    int workers = 0;
};

struct ScoreRow {
    std::string label;  // base, vlm, merged
    double val = 0.0;
    double test = 0.0;
};

struct PipelineReport {
    std::string task_id;
    std::string base_digest;
    std::string vlm_digest;
    std::string merged_digest;
    SweepProfile sweep;
    StageSegmentation segmentation;
    bool plateau_fallback = false;
    int k_star = 0;  // after fallback, the value actually used
    GridSearchResult grid;
    MergeSpec final_spec;
    Checkpoint merged_ckpt;  // merge(base, vlm, final_spec)
    std::vector<ScoreRow> scores;
    // base scored with the vlm projector attached (identity merge of every
    // backbone layer); set for vision tasks where the bare base LM cannot
    // consume the prompt
    bool base_uses_vlm_projector = false;
};

// End-to-end procedure: mask sweep on the vlm, plateau detection (with the
// ceil(2L/3) fallback), joint (k0, lambda) grid search around k_star on a
// fixed validation subsample, final merge, and base/vlm/merged scoring on
// the full validation and test splits.
PipelineReport plam_pipeline(const Checkpoint& base, const Checkpoint& vlm, const Task& task,
                             const PipelineConfig& cfg);

}  // namespace plab

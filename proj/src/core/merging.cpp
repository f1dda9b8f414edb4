#include "merging.hpp"

#include <algorithm>
#include <cmath>

#include "parallel.hpp"

namespace plab {

void MergeSpec::validate(int num_layers) const {
    check(layer_lo >= 1 && layer_lo <= layer_hi && layer_hi <= num_layers, errc::invalid_argument,
          "merge layer range must satisfy 1 <= lo <= hi <= L");
    check(lambda1 >= 0.0 && lambda1 <= 1.5 && lambda2 >= 0.0 && lambda2 <= 1.5,
          errc::invalid_argument, "merge coefficients must lie in [0, 1.5]");
    check(subset == k_subset_attn || subset == k_subset_all, errc::invalid_argument,
          "unknown merge subset: " + subset);
}

const std::vector<std::string>& subset_slots(const std::string& subset) {
    if (subset == k_subset_attn) return attn_slots();
    if (subset == k_subset_all) return layer_slots();
    fail(errc::invalid_argument, "unknown merge subset: " + subset);
}

Checkpoint merge(const Checkpoint& base, const Checkpoint& vlm, const MergeSpec& spec) {
    base.validate();
    vlm.validate();
    check(base.config == vlm.config, errc::dim_mismatch,
          "base and vlm checkpoints have different configs");
    check(vlm.has("projector"), errc::invalid_argument, "vlm checkpoint lacks a projector");
    spec.validate(base.config.num_layers);

    Checkpoint out = vlm;
    out.kind = CkptKind::merged;

    const float l1 = static_cast<float>(spec.lambda1);
    const float l2 = static_cast<float>(spec.lambda2);
    for (int l = spec.layer_lo; l <= spec.layer_hi; ++l) {
        for (const std::string& slot : subset_slots(spec.subset)) {
            const std::string name = layer_param_name(l, slot);
            const Tensor& tb = base.get(name);
            const Tensor& tv = vlm.get(name);
            check(tb.same_shape(tv), errc::dim_mismatch, "shape mismatch for " + name);
            // exact-copy coefficients stay bitwise exact; otherwise 0-weighted
            // terms could flip signed zeros
            if (l1 == 0.0f && l2 == 1.0f) continue;
            Tensor& to = out.tensors.at(name);
            if (l1 == 1.0f && l2 == 0.0f) {
                to = tb;
                continue;
            }
            for (size_t i = 0; i < to.data.size(); ++i)
                to.data[i] = l1 * tb.data[i] + l2 * tv.data[i];
        }
    }
    out.validate();
    return out;
}

std::vector<double> default_lambda_grid() {
    std::vector<double> grid;
    for (int i = 0; i <= 15; ++i) grid.push_back(i * 0.1);
    return grid;
}

namespace {

// deterministic preference order over evaluated cells
bool cell_better(const GridCell& a, const GridCell& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.spec.layer_lo != b.spec.layer_lo) return a.spec.layer_lo > b.spec.layer_lo;
    if (a.spec.lambda1 != b.spec.lambda1) return a.spec.lambda1 < b.spec.lambda1;
    const double da = std::abs(a.spec.lambda2 - 1.0);
    const double db = std::abs(b.spec.lambda2 - 1.0);
    if (da != db) return da < db;
    return a.spec.lambda2 < b.spec.lambda2;
}

}  // namespace

GridSearchResult grid_search(const Checkpoint& base, const Checkpoint& vlm,
                             const std::vector<int>& k0_candidates,
                             const std::vector<double>& lambda1_grid,
                             const std::vector<double>& lambda2_grid, const std::string& subset,
                             const std::function<double(const Checkpoint&, const MergeSpec&)>& eval_fn,
                             int workers, const std::function<bool(double, double)>& cell_filter) {
    check(!k0_candidates.empty(), errc::invalid_argument, "no k0 candidates");
    check(!lambda1_grid.empty() && !lambda2_grid.empty(), errc::invalid_argument,
          "empty coefficient grid");
    const int L = base.config.num_layers;

    GridSearchResult out;
    for (int k0 : k0_candidates) {
        for (double lam1 : lambda1_grid) {
            for (double lam2 : lambda2_grid) {
                if (cell_filter && !cell_filter(lam1, lam2)) continue;
                GridCell cell;
                cell.spec.layer_lo = k0;
                cell.spec.layer_hi = L;
                cell.spec.lambda1 = lam1;
                cell.spec.lambda2 = lam2;
                cell.spec.subset = subset;
                cell.spec.validate(L);
                out.table.push_back(std::move(cell));
            }
        }
    }
    check(!out.table.empty(), errc::invalid_argument, "cell filter removed every grid cell");

    parallel_for(out.table.size(), workers, [&](size_t i) {
        GridCell& cell = out.table[i];
        try {
            Checkpoint merged = merge(base, vlm, cell.spec);
            cell.score = eval_fn(merged, cell.spec);
            check(std::isfinite(cell.score), errc::eval, "non-finite grid cell score");
            cell.ok = true;
        } catch (const Error& e) {
            cell.error = e.what();
        }
    });

    const GridCell* best = nullptr;
    for (const GridCell& cell : out.table) {
        if (!cell.ok) continue;
        if (!best || cell_better(cell, *best)) best = &cell;
    }
    check(best != nullptr, errc::eval, "every grid cell failed evaluation");
    out.best = best->spec;
    out.best_score = best->score;
    return out;
}

namespace {

bool task_has_vision(const Task& task) {
    for (const auto& ex : task.examples)
        if (ex.n_vis() > 0) return true;
    return false;
}

}  // namespace

PipelineReport plam_pipeline(const Checkpoint& base, const Checkpoint& vlm, const Task& task,
                             const PipelineConfig& cfg) {
    base.validate();
    vlm.validate();
    task.validate();
    check(base.config == vlm.config, errc::dim_mismatch,
          "base and vlm checkpoints have different configs");
    const int L = base.config.num_layers;

    PipelineReport rep;
    rep.task_id = task.task_id;
    rep.base_digest = checkpoint_digest(base);
    rep.vlm_digest = checkpoint_digest(vlm);

    // depth sweep on the vlm, scored on a fixed validation subsample
    const std::vector<size_t> sweep_idx =
        cfg.sweep_eval_n > 0 ? subsample_indices(task, Split::val, cfg.sweep_eval_n, cfg.seed)
                             : task.split_indices(Split::val);
    rep.sweep = mask_sweep(
        [&](const std::optional<MaskSpec>& mask) {
            return evaluate(vlm, task, Split::val, mask, cfg.workers, &sweep_idx, false).score;
        },
        full_sweep_range(L), L);

    rep.segmentation = detect_plateau_onset(rep.sweep, cfg.smoothing_window, cfg.min_plateau_len,
                                            cfg.slope_tol_frac);
    rep.plateau_fallback = !rep.segmentation.plateau_found;
    rep.k_star = rep.plateau_fallback ? fallback_k_star(L) : rep.segmentation.k_star;

    std::vector<int> k0_candidates;
    const int lo = std::clamp(rep.k_star - cfg.radius, 2, L);
    const int hi = std::clamp(rep.k_star + cfg.radius, 2, L);
    for (int k0 = lo; k0 <= hi; ++k0) k0_candidates.push_back(k0);

    std::vector<double> grid1 = cfg.lambda1_grid.empty() ? default_lambda_grid() : cfg.lambda1_grid;
    std::vector<double> grid2 = cfg.lambda2_grid.empty() ? default_lambda_grid() : cfg.lambda2_grid;
    const bool sum_window = cfg.lambda_sum_lo >= 0.0 && cfg.lambda_sum_hi >= cfg.lambda_sum_lo;
    std::function<bool(double, double)> cell_filter;
    if (sum_window) {
        check(1.0 >= cfg.lambda_sum_lo && 1.0 <= cfg.lambda_sum_hi, errc::invalid_argument,
              "lambda sum window must keep the identity cell");
        cell_filter = [&cfg](double lam1, double lam2) {
            const double s = lam1 + lam2;
            return s >= cfg.lambda_sum_lo && s <= cfg.lambda_sum_hi;
        };
    }

    const std::vector<size_t> grid_idx =
        cfg.grid_eval_n > 0 ? subsample_indices(task, Split::val, cfg.grid_eval_n, cfg.seed)
                            : task.split_indices(Split::val);
    const auto cell_eval = [&](const Checkpoint& merged, const MergeSpec&) {
        return evaluate(merged, task, Split::val, std::nullopt, 1, &grid_idx, false).score;
    };
    rep.grid = grid_search(base, vlm, k0_candidates, grid1, grid2, cfg.subset, cell_eval,
                           cfg.workers, cell_filter);

    rep.final_spec = rep.grid.best;
    rep.merged_ckpt = merge(base, vlm, rep.final_spec);
    const Checkpoint& merged = rep.merged_ckpt;
    rep.merged_digest = checkpoint_digest(merged);

    // the bare base LM cannot embed vision rows; score it with the vlm's
    // projector attached so every report row covers the same prompts
    Checkpoint base_eval = base;
    if (task_has_vision(task) && !base_eval.has("projector")) {
        base_eval.tensors["projector"] = vlm.get("projector");
        base_eval.kind = CkptKind::mllm;
        rep.base_uses_vlm_projector = true;
    }

    const auto score_on = [&](const Checkpoint& ckpt, Split split) {
        return evaluate(ckpt, task, split, std::nullopt, cfg.workers, nullptr, false).score;
    };
    rep.scores.push_back(
        {"base", score_on(base_eval, Split::val), score_on(base_eval, Split::test)});
    rep.scores.push_back({"vlm", score_on(vlm, Split::val), score_on(vlm, Split::test)});
    rep.scores.push_back({"merged", score_on(merged, Split::val), score_on(merged, Split::test)});
    return rep;
}

}  // namespace plab

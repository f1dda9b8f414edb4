#pragma once

#include <functional>
#include <string>
#include <vector>

#include "interventions.hpp"

namespace plab {

// Three-stage segmentation of a sweep profile. Indices are k values, so the
// early stage covers k in [1, early_end], the mid (rapid-gain) stage covers
// (early_end, mid_end], and the plateau starts at k_star = mid_end.
struct StageSegmentation {
    bool plateau_found = false;
    int k_star = 0;
    int early_end = 0;
    int mid_end = 0;
    std::vector<double> curve_smoothed;  // one value per profile point
    double mid_slope = 0.0;              // mean slope over (early_end, mid_end]
    double tail_slope = 0.0;             // mean slope over (mid_end, last k]
    double slope_tol = 0.0;              // absolute threshold applied to tail_slope
    double slope_tol_frac = 0.0;
    int smoothing_window = 0;
    int min_plateau_len = 0;
};

// Finds the elbow where the rapid-gain regime turns into a plateau. The
// profile is smoothed with a centered moving average (reflected boundaries),
// then k_star is the point of strongest negative curvature (discrete second
// difference) among candidates whose tail mean slope is at most
// slope_tol_frac of the mid-stage mean slope; the mid stage must rise and
// the tail must keep at least min_plateau_len points. Near-equal curvature
// magnitudes tie toward the smallest k. Returns plateau_found = false when
// no candidate qualifies (constant or never-flattening curves).
StageSegmentation detect_plateau_onset(const SweepProfile& profile, int smoothing_window = 3,
                                       int min_plateau_len = 2, double slope_tol_frac = 0.1);

// fallback cut when no plateau is found: ceil(2L/3)
int fallback_k_star(int num_layers);

struct K0Candidate {
    int k0 = 0;
    double score = 0.0;
    bool ok = false;
    std::string error;
};

struct K0Search {
    int k0 = 0;
    double score = 0.0;
    std::vector<K0Candidate> table;  // ascending k0
};

// Evaluates k0 candidates k_star - radius .. k_star + radius clipped to
// [2, num_layers] and returns the argmax score, ties toward larger k0
// (fewer merged layers). Per-candidate failures are recorded and skipped;
// it is an error for every candidate to fail.
K0Search neighbor_search_k0(int k_star, int num_layers, int radius,
                            const std::function<double(int)>& eval_fn);

}  // namespace plab

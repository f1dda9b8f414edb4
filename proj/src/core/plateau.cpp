#include "plateau.hpp"

#include <algorithm>
#include <cmath>

namespace plab {

namespace {

// relative slack for "equal" curvature magnitudes; keeps ties stable under
// floating-point noise and affine rescaling alike
constexpr double k_tie_rel = 1e-9;

bool strictly_better(double cand, double best) { return cand > best * (1.0 + k_tie_rel); }

// centered moving average; out-of-range indices reflect about the endpoints
// (index -1 maps to 1, index n maps to n - 2)
std::vector<double> smooth_reflected(const std::vector<double>& s, int window) {
    const int n = static_cast<int>(s.size());
    std::vector<double> out(s.size());
    const int half = window / 2;
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = i - half; j <= i + half; ++j) {
            int idx = j;
            if (idx < 0) idx = -idx;
            if (idx >= n) idx = 2 * (n - 1) - idx;
            idx = std::clamp(idx, 0, n - 1);
            acc += s[static_cast<size_t>(idx)];
        }
        out[static_cast<size_t>(i)] = acc / window;
    }
    return out;
}

}  // namespace

StageSegmentation detect_plateau_onset(const SweepProfile& profile, int smoothing_window,
                                       int min_plateau_len, double slope_tol_frac) {
    check(smoothing_window >= 1 && smoothing_window % 2 == 1, errc::invalid_argument,
          "smoothing window must be odd and positive");
    check(min_plateau_len >= 1, errc::invalid_argument, "min_plateau_len must be positive");
    check(slope_tol_frac >= 0.0, errc::invalid_argument, "slope tolerance must be nonnegative");

    const int n = static_cast<int>(profile.points.size());
    check(n >= 2 * min_plateau_len, errc::invalid_argument, "profile too short for segmentation");
    std::vector<double> scores(profile.points.size());
    for (int i = 0; i < n; ++i) {
        const SweepPoint& p = profile.points[static_cast<size_t>(i)];
        check(p.k == i + 1, errc::invalid_argument, "profile must cover k = 1..P in order");
        check(std::isfinite(p.score), errc::invalid_argument, "non-finite score in profile");
        scores[static_cast<size_t>(i)] = p.score;
    }

    StageSegmentation seg;
    seg.smoothing_window = smoothing_window;
    seg.min_plateau_len = min_plateau_len;
    seg.slope_tol_frac = slope_tol_frac;
    seg.curve_smoothed = smooth_reflected(scores, smoothing_window);
    const std::vector<double>& sm = seg.curve_smoothed;

    // candidate knees: interior points of negative curvature with at least
    // min_plateau_len points from the knee to the end
    double best_mag = 0.0;
    for (int i = 1; i <= n - 1 - std::max(min_plateau_len - 1, 1); ++i) {
        const double d2 = sm[static_cast<size_t>(i + 1)] - 2.0 * sm[static_cast<size_t>(i)] +
                          sm[static_cast<size_t>(i - 1)];
        if (!(d2 < 0.0)) continue;
        const double mag = -d2;

        // mid stage = steepest mean rise into the knee
        int best_e = -1;
        double mid_slope = 0.0;
        for (int e = 0; e < i; ++e) {
            const double slope = (sm[static_cast<size_t>(i)] - sm[static_cast<size_t>(e)]) / (i - e);
            if (best_e < 0 || strictly_better(slope, mid_slope)) {
                best_e = e;
                mid_slope = slope;
            }
        }
        if (!(mid_slope > 0.0)) continue;

        const double tail_slope =
            (sm[static_cast<size_t>(n - 1)] - sm[static_cast<size_t>(i)]) / (n - 1 - i);
        const double tol = slope_tol_frac * mid_slope;
        if (!(tail_slope <= tol)) continue;
        if (!(mid_slope > tail_slope)) continue;

        if (!seg.plateau_found || strictly_better(mag, best_mag)) {
            seg.plateau_found = true;
            best_mag = mag;
            seg.k_star = i + 1;
            seg.mid_end = i + 1;
            seg.early_end = best_e + 1;
            seg.mid_slope = mid_slope;
            seg.tail_slope = tail_slope;
            seg.slope_tol = tol;
        }
    }
    return seg;
}

int fallback_k_star(int num_layers) {
    check(num_layers >= 1, errc::invalid_argument, "bad layer count");
    return (2 * num_layers + 2) / 3;
}

K0Search neighbor_search_k0(int k_star, int num_layers, int radius,
                            const std::function<double(int)>& eval_fn) {
    check(radius >= 0, errc::invalid_argument, "radius must be nonnegative");
    check(num_layers >= 2, errc::invalid_argument, "need at least two layers");

    const int lo = std::clamp(k_star - radius, 2, num_layers);
    const int hi = std::clamp(k_star + radius, 2, num_layers);

    K0Search out;
    bool any_ok = false;
    for (int k0 = lo; k0 <= hi; ++k0) {
        K0Candidate c;
        c.k0 = k0;
        try {
            c.score = eval_fn(k0);
            check(std::isfinite(c.score), errc::eval, "non-finite candidate score");
            c.ok = true;
        } catch (const Error& e) {
            c.error = e.what();
        }
        if (c.ok && (!any_ok || c.score >= out.score)) {
            // >= keeps the larger k0 on ties (fewer merged layers)
            out.k0 = c.k0;
            out.score = c.score;
            any_ok = true;
        }
        out.table.push_back(std::move(c));
    }
    check(any_ok, errc::eval, "every k0 candidate failed evaluation");
    return out;
}

}  // namespace plab

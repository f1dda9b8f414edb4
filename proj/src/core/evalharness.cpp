#include "evalharness.hpp"

#include <algorithm>

#include "ckpt_io.hpp"
#include "parallel.hpp"

namespace plab {

namespace {

void check_example_fits(const ModelConfig& cfg, const TaskExample& ex) {
    for (int t : ex.tokens)
        check(t >= 0 && t < cfg.vocab_size, errc::dim_mismatch, "token id outside model vocab");
    check(ex.full_length() <= cfg.max_seq_len, errc::dim_mismatch,
          "example longer than model max_seq_len");
    if (ex.n_vis() > 0)
        check(ex.vision.cols() == cfg.vision_feature_dim, errc::dim_mismatch,
              "vision feature width disagrees with model config");
}

}  // namespace

EvalReport evaluate(const Checkpoint& ckpt, const Task& task, Split split,
                    const std::optional<MaskSpec>& mask, int workers,
                    const std::vector<size_t>* indices, bool keep_records) {
    task.validate();
    if (mask) mask->validate(ckpt.config.num_layers);

    std::vector<size_t> idx = indices ? *indices : task.split_indices(split);
    for (size_t i : idx) {
        check(i < task.examples.size(), errc::invalid_argument, "example index out of range");
        check(task.examples[i].split == split, errc::invalid_argument,
              "example index belongs to a different split");
    }
    std::sort(idx.begin(), idx.end());
    check(!idx.empty(), errc::invalid_argument,
          std::string("empty ") + to_string(split) + " split");

    EvalReport rep;
    rep.model_digest = checkpoint_digest(ckpt);
    rep.task_id = task.task_id;
    rep.split = split;
    if (mask) rep.mask_cut_layer = mask->cut_layer;

    std::vector<EvalRecord> recs(idx.size());
    parallel_for(idx.size(), workers, [&](size_t j) {
        const TaskExample& ex = task.examples[idx[j]];
        check_example_fits(ckpt.config, ex);
        const std::vector<int> prompt(ex.tokens.begin(), ex.tokens.begin() + ex.target_start);
        const std::vector<int> gold(ex.tokens.begin() + ex.target_start,
                                    ex.tokens.begin() + ex.target_end);
        check(!gold.empty(), errc::invalid_argument, "example has an empty answer span");
        DecodeResult dec = decode_greedy(ckpt, ex.vision, prompt, ex.n_pre, ex.n_ins, mask,
                                         static_cast<int>(gold.size()));
        EvalRecord r;
        r.example_index = static_cast<int>(idx[j]);
        r.predicted = dec.tokens;
        r.gold = gold;
        r.correct = dec.tokens == gold;
        recs[j] = std::move(r);
    });

    int n_correct = 0;
    for (const auto& r : recs) n_correct += r.correct ? 1 : 0;
    rep.n_examples = static_cast<int>(recs.size());
    rep.score = static_cast<double>(n_correct) / static_cast<double>(recs.size());
    if (keep_records) rep.per_example = std::move(recs);
    return rep;
}

std::vector<size_t> subsample_indices(const Task& task, Split split, int n, uint64_t seed) {
    check(n > 0, errc::invalid_argument, "subsample size must be positive");
    std::vector<size_t> idx = task.split_indices(split);
    Rng rng = Rng(seed).fork(0x73756273u);  // "subs"
    for (size_t i = idx.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(rng.uniform_int(static_cast<int>(i)));
        std::swap(idx[i - 1], idx[j]);
    }
    if (static_cast<size_t>(n) < idx.size()) idx.resize(static_cast<size_t>(n));
    std::sort(idx.begin(), idx.end());
    return idx;
}

Comparison compare(const std::vector<std::pair<std::string, EvalReport>>& reports,
                   size_t baseline_index) {
    check(!reports.empty(), errc::invalid_argument, "nothing to compare");
    check(baseline_index < reports.size(), errc::invalid_argument, "baseline index out of range");
    const EvalReport& base = reports[baseline_index].second;
    for (const auto& [label, r] : reports) {
        check(r.task_id == base.task_id, errc::invalid_argument,
              "cannot compare reports from different tasks (" + r.task_id + " vs " +
                  base.task_id + ")");
        check(r.split == base.split, errc::invalid_argument,
              "cannot compare reports from different splits");
        check(r.metric == base.metric, errc::invalid_argument,
              "cannot compare reports with different metrics");
    }

    Comparison out;
    out.task_id = base.task_id;
    out.split = base.split;
    out.metric = base.metric;
    out.baseline_label = reports[baseline_index].first;
    double best = reports[0].second.score;
    for (const auto& [label, r] : reports) best = std::max(best, r.score);
    for (const auto& [label, r] : reports) {
        ComparisonRow row;
        row.label = label;
        row.score = r.score;
        row.delta = r.score - base.score;
        row.best = r.score == best;
        out.rows.push_back(std::move(row));
    }
    return out;
}

}  // namespace plab

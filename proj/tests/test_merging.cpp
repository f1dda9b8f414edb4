#include <doctest.h>

#include <cmath>
#include <set>

#include "merging.hpp"

using namespace plab;

namespace {

ModelConfig tiny_cfg() {
    ModelConfig cfg;
    cfg.num_layers = 4;
    cfg.hidden_dim = 16;
    cfg.num_heads = 2;
    cfg.vocab_size = 24;
    cfg.max_seq_len = 24;
    cfg.vision_feature_dim = 8;
    cfg.ffn_dim = 32;
    return cfg;
}

bool name_in_merge_set(const std::string& name, const MergeSpec& spec) {
    for (int l = spec.layer_lo; l <= spec.layer_hi; ++l)
        for (const auto& slot : subset_slots(spec.subset))
            if (name == layer_param_name(l, slot)) return true;
    return false;
}

}  // namespace

TEST_CASE("identity coefficients reproduce the vlm bitwise") {
    const ModelConfig cfg = tiny_cfg();
    const Checkpoint base = Checkpoint::init_random(cfg, CkptKind::base_lm, 1);
    const Checkpoint vlm = Checkpoint::init_random(cfg, CkptKind::mllm, 2);

    for (const std::string& subset : {k_subset_attn, k_subset_all}) {
        for (const auto& [lo, hi] : std::vector<std::pair<int, int>>{{1, 4}, {3, 4}, {2, 2}}) {
            MergeSpec spec{lo, hi, 0.0, 1.0, subset};
            const Checkpoint merged = merge(base, vlm, spec);
            CHECK(merged.kind == CkptKind::merged);
            const CkptDiff diff = diff_checkpoints(merged, vlm);
            CHECK(diff.tensors_identical());
            CHECK_FALSE(diff.identical());  // kind tag still distinguishes them
        }
    }
}

TEST_CASE("full swap copies the base backbone and keeps vlm elsewhere") {
    const ModelConfig cfg = tiny_cfg();
    const Checkpoint base = Checkpoint::init_random(cfg, CkptKind::base_lm, 3);
    const Checkpoint vlm = Checkpoint::init_random(cfg, CkptKind::mllm, 4);

    MergeSpec spec{1, cfg.num_layers, 1.0, 0.0, k_subset_all};
    const Checkpoint merged = merge(base, vlm, spec);
    for (const auto& [name, t] : merged.tensors) {
        if (name_in_merge_set(name, spec)) {
            CHECK(t.data == base.get(name).data);
        } else {
            CHECK(t.data == vlm.get(name).data);
        }
    }
    // embeddings, unembedding, projector are never merged
    CHECK(merged.get("embed.tok").data == vlm.get("embed.tok").data);
    CHECK(merged.get("embed.pos").data == vlm.get("embed.pos").data);
    CHECK(merged.get("unembed").data == vlm.get("unembed").data);
    CHECK(merged.get("projector").data == vlm.get("projector").data);
}

TEST_CASE("interpolation matches the scalar oracle inside the set and vlm outside") {
    const ModelConfig cfg = tiny_cfg();
    const Checkpoint base = Checkpoint::init_random(cfg, CkptKind::base_lm, 5);
    const Checkpoint vlm = Checkpoint::init_random(cfg, CkptKind::mllm, 6);

    MergeSpec spec{3, 4, 0.6, 0.4, k_subset_attn};
    const Checkpoint merged = merge(base, vlm, spec);
    const float l1 = 0.6f, l2 = 0.4f;
    for (const auto& [name, t] : merged.tensors) {
        const bool in_set = name_in_merge_set(name, spec);
        const Tensor& tv = vlm.get(name);
        if (!in_set) {
            CHECK(t.data == tv.data);
            continue;
        }
        const Tensor& tb = base.get(name);
        for (size_t i = 0; i < t.data.size(); ++i) {
            const float oracle = l1 * tb.data[i] + l2 * tv.data[i];
            REQUIRE(t.data[i] == oracle);  // same expression order, zero ulp slack
        }
    }
}

TEST_CASE("merge is linear in the coefficient pair") {
    const ModelConfig cfg = tiny_cfg();
    const Checkpoint base = Checkpoint::init_random(cfg, CkptKind::base_lm, 7);
    const Checkpoint vlm = Checkpoint::init_random(cfg, CkptKind::mllm, 8);

    const Checkpoint m_a = merge(base, vlm, {2, 4, 0.5, 0.3, k_subset_all});
    const Checkpoint m_b = merge(base, vlm, {2, 4, 0.4, 0.8, k_subset_all});
    const Checkpoint m_zero = merge(base, vlm, {2, 4, 0.0, 0.0, k_subset_all});
    const Checkpoint m_sum = merge(base, vlm, {2, 4, 0.9, 1.1, k_subset_all});
    for (const auto& [name, t] : m_sum.tensors) {
        const Tensor& ta = m_a.get(name);
        const Tensor& tb = m_b.get(name);
        const Tensor& tz = m_zero.get(name);
        for (size_t i = 0; i < t.data.size(); ++i) {
            const double recomposed = static_cast<double>(ta.data[i]) + tb.data[i] - tz.data[i];
            CHECK(std::abs(recomposed - t.data[i]) <= 1e-6);
        }
    }
}

TEST_CASE("merge validates spec, configs, and projector presence") {
    const ModelConfig cfg = tiny_cfg();
    const Checkpoint base = Checkpoint::init_random(cfg, CkptKind::base_lm, 9);
    const Checkpoint vlm = Checkpoint::init_random(cfg, CkptKind::mllm, 10);

    CHECK_THROWS_AS(merge(base, vlm, {0, 4, 0.5, 0.5, k_subset_attn}), Error);
    CHECK_THROWS_AS(merge(base, vlm, {1, 5, 0.5, 0.5, k_subset_attn}), Error);
    CHECK_THROWS_AS(merge(base, vlm, {3, 2, 0.5, 0.5, k_subset_attn}), Error);
    CHECK_THROWS_AS(merge(base, vlm, {1, 4, -0.1, 0.5, k_subset_attn}), Error);
    CHECK_THROWS_AS(merge(base, vlm, {1, 4, 0.5, 1.6, k_subset_attn}), Error);
    CHECK_THROWS_AS(merge(base, vlm, {1, 4, 0.5, 0.5, "attention"}), Error);
    // vlm side must carry a projector
    CHECK_THROWS_AS(merge(base, base, {1, 4, 0.5, 0.5, k_subset_attn}), Error);

    ModelConfig other = cfg;
    other.hidden_dim = 32;
    other.num_heads = 4;
    const Checkpoint mismatched = Checkpoint::init_random(other, CkptKind::mllm, 11);
    CHECK_THROWS_AS(merge(base, mismatched, {1, 4, 0.5, 0.5, k_subset_attn}), Error);
}

TEST_CASE("grid search enumerates cells in order and applies tie rules") {
    const ModelConfig cfg = tiny_cfg();
    const Checkpoint base = Checkpoint::init_random(cfg, CkptKind::base_lm, 12);
    const Checkpoint vlm = Checkpoint::init_random(cfg, CkptKind::mllm, 13);

    const std::vector<int> k0s = {2, 3};
    const std::vector<double> lam = {0.0, 0.5, 1.0};

    // constant scores: the tie chain picks larger k0, then smaller lambda1,
    // then lambda2 closest to 1
    GridSearchResult flat = grid_search(base, vlm, k0s, lam, lam, k_subset_attn,
                                        [](const Checkpoint&, const MergeSpec&) { return 0.5; });
    CHECK(flat.table.size() == 18);
    CHECK(flat.best.layer_lo == 3);
    CHECK(flat.best.lambda1 == 0.0);
    CHECK(flat.best.lambda2 == 1.0);
    CHECK(flat.best_score == 0.5);

    // deterministic cell order: k0-major, then lambda1, then lambda2
    size_t i = 0;
    for (int k0 : k0s)
        for (double l1 : lam)
            for (double l2 : lam) {
                CHECK(flat.table[i].spec.layer_lo == k0);
                CHECK(flat.table[i].spec.lambda1 == l1);
                CHECK(flat.table[i].spec.lambda2 == l2);
                ++i;
            }

    // single cell grid returns that cell
    GridSearchResult one = grid_search(base, vlm, {4}, {0.7}, {0.9}, k_subset_attn,
                                       [](const Checkpoint&, const MergeSpec&) { return 0.25; });
    CHECK(one.table.size() == 1);
    CHECK(one.best.layer_lo == 4);
    CHECK(one.best.lambda1 == 0.7);
    CHECK(one.best.lambda2 == 0.9);
}

TEST_CASE("grid search floor: identity cell bounds the selected score") {
    const ModelConfig cfg = tiny_cfg();
    const Checkpoint base = Checkpoint::init_random(cfg, CkptKind::base_lm, 14);
    const Checkpoint vlm = Checkpoint::init_random(cfg, CkptKind::mllm, 15);

    // score by similarity to a fixed target so the identity cell has a known value
    const Checkpoint target = Checkpoint::init_random(cfg, CkptKind::mllm, 16);
    const auto eval_fn = [&](const Checkpoint& merged, const MergeSpec&) {
        double acc = 0.0;
        for (const auto& [name, t] : merged.tensors) {
            const Tensor& tt = target.get(name);
            for (size_t i = 0; i < t.data.size(); ++i) {
                const double d = static_cast<double>(t.data[i]) - tt.data[i];
                acc -= d * d;
            }
        }
        return acc;
    };
    const double vlm_score = eval_fn(vlm, MergeSpec{});
    GridSearchResult got = grid_search(base, vlm, {2, 3, 4}, {0.0, 0.4, 0.8}, {0.2, 0.6, 1.0},
                                       k_subset_attn, eval_fn);
    CHECK(got.best_score >= vlm_score);
}

TEST_CASE("grid search records per-cell failures and rejects total failure") {
    const ModelConfig cfg = tiny_cfg();
    const Checkpoint base = Checkpoint::init_random(cfg, CkptKind::base_lm, 17);
    const Checkpoint vlm = Checkpoint::init_random(cfg, CkptKind::mllm, 18);

    GridSearchResult got = grid_search(
        base, vlm, {2}, {0.0, 1.0}, {1.0}, k_subset_attn,
        [](const Checkpoint&, const MergeSpec& spec) -> double {
            if (spec.lambda1 == 1.0) fail(errc::eval, "cell exploded");
            return 0.75;
        });
    CHECK(got.table.size() == 2);
    CHECK(got.table[0].ok);
    CHECK_FALSE(got.table[1].ok);
    CHECK(got.table[1].error == "cell exploded");
    CHECK(got.best.lambda1 == 0.0);

    CHECK_THROWS_AS(grid_search(base, vlm, {2}, {0.5}, {0.5}, k_subset_attn,
                                [](const Checkpoint&, const MergeSpec&) -> double {
                                    fail(errc::eval, "nothing works");
                                }),
                    Error);
}

TEST_CASE("grid search cell filter prunes pairs but must keep something") {
    const ModelConfig cfg = tiny_cfg();
    const Checkpoint base = Checkpoint::init_random(cfg, CkptKind::base_lm, 19);
    const Checkpoint vlm = Checkpoint::init_random(cfg, CkptKind::mllm, 20);

    const auto eval_fn = [](const Checkpoint&, const MergeSpec&) { return 1.0; };
    GridSearchResult got = grid_search(base, vlm, {3}, {0.0, 0.5, 1.0}, {0.0, 0.5, 1.0},
                                       k_subset_attn, eval_fn, 0, [](double l1, double l2) {
                                           return l1 + l2 >= 0.8 && l1 + l2 <= 1.2;
                                       });
    CHECK(got.table.size() == 3);
    std::set<std::pair<double, double>> kept;
    for (const auto& c : got.table) kept.insert({c.spec.lambda1, c.spec.lambda2});
    CHECK(kept.count({0.0, 1.0}) == 1);
    CHECK(kept.count({0.5, 0.5}) == 1);
    CHECK(kept.count({1.0, 0.0}) == 1);
    CHECK(kept.count({0.5, 1.0}) == 0);  // sum 1.5 pruned

    CHECK_THROWS_AS(grid_search(base, vlm, {3}, {0.0}, {0.0}, k_subset_attn, eval_fn, 0,
                                [](double, double) { return false; }),
                    Error);
}

TEST_CASE("grid search results do not depend on worker count") {
    const ModelConfig cfg = tiny_cfg();
    const Checkpoint base = Checkpoint::init_random(cfg, CkptKind::base_lm, 21);
    const Checkpoint vlm = Checkpoint::init_random(cfg, CkptKind::mllm, 22);

    const auto eval_fn = [](const Checkpoint& merged, const MergeSpec& spec) {
        return spec.lambda1 * 0.25 + spec.lambda2 * 0.5 + merged.get("layers.3.attn.q").data[0] * 0.0;
    };
    GridSearchResult a = grid_search(base, vlm, {2, 3}, {0.0, 0.3}, {0.7, 1.0}, k_subset_attn,
                                     eval_fn, 1);
    GridSearchResult b = grid_search(base, vlm, {2, 3}, {0.0, 0.3}, {0.7, 1.0}, k_subset_attn,
                                     eval_fn, 4);
    REQUIRE(a.table.size() == b.table.size());
    for (size_t i = 0; i < a.table.size(); ++i) {
        CHECK(a.table[i].spec.layer_lo == b.table[i].spec.layer_lo);
        CHECK(a.table[i].score == b.table[i].score);
        CHECK(a.table[i].ok == b.table[i].ok);
    }
    CHECK(a.best.layer_lo == b.best.layer_lo);
    CHECK(a.best.lambda1 == b.best.lambda1);
    CHECK(a.best.lambda2 == b.best.lambda2);
}

TEST_CASE("pipeline on identical inputs reports zero deltas") {
    ModelConfig cfg = tiny_cfg();
    const Checkpoint vlm = Checkpoint::init_random(cfg, CkptKind::mllm, 23);
    const Task task = gen_grounded_task(31, 40, 2, 4, cfg.vision_feature_dim);

    PipelineConfig pc;
    pc.seed = 5;
    pc.radius = 1;
    pc.lambda1_grid = {0.0};
    pc.lambda2_grid = {1.0};
    const PipelineReport rep = plam_pipeline(vlm, vlm, task, pc);

    CHECK(rep.base_digest == rep.vlm_digest);
    // the only grid cell is the identity cell, so the merged weights are the
    // vlm's bit for bit (the kind tag alone distinguishes the checkpoints)
    CHECK(diff_checkpoints(rep.merged_ckpt, vlm).tensors_identical());
    CHECK(rep.sweep.points.size() == static_cast<size_t>(cfg.num_layers + 1));
    REQUIRE(rep.scores.size() == 3);
    CHECK(rep.scores[0].label == "base");
    CHECK(rep.scores[1].label == "vlm");
    CHECK(rep.scores[2].label == "merged");
    for (const auto& row : rep.scores) {
        CHECK(row.val == rep.scores[0].val);
        CHECK(row.test == rep.scores[0].test);
    }
    CHECK(rep.final_spec.lambda1 == 0.0);
    CHECK(rep.final_spec.lambda2 == 1.0);
    CHECK(rep.k_star >= 2);
    CHECK(rep.k_star <= cfg.num_layers);
    CHECK_FALSE(rep.base_uses_vlm_projector);

    // a lambda pair summing to 1 stays within float rounding of the vlm
    const Checkpoint near = merge(vlm, vlm, {2, 4, 0.3, 0.7, k_subset_all});
    for (const auto& [name, t] : near.tensors) {
        const Tensor& tv = vlm.get(name);
        for (size_t i = 0; i < t.data.size(); ++i)
            CHECK(std::abs(t.data[i] - tv.data[i]) <= 1e-6 * (1.0 + std::abs(tv.data[i])));
    }
}

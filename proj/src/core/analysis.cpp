#include "analysis.hpp"

#include <algorithm>
#include <cmath>

#include "parallel.hpp"

namespace plab {

const char* to_string(MassSource s) {
    switch (s) {
        case MassSource::vis: return "vis";
        case MassSource::pre_plus_ins: return "pre_plus_ins";
        case MassSource::res: return "res";
    }
    return "unknown";
}

MassSource mass_source_from_string(const std::string& s) {
    if (s == "vis") return MassSource::vis;
    if (s == "pre_plus_ins") return MassSource::pre_plus_ins;
    if (s == "res") return MassSource::res;
    fail(errc::invalid_argument, "unknown mass source: " + s);
}

const std::vector<MassSource>& all_mass_sources() {
    static const std::vector<MassSource> k = {MassSource::vis, MassSource::pre_plus_ins,
                                              MassSource::res};
    return k;
}

std::vector<int> source_columns(const SequenceLayout& layout, MassSource source, int n_keys) {
    std::vector<int> cols;
    switch (source) {
        case MassSource::vis:
            for (int j = layout.pre_end; j < layout.vis_end && j < n_keys; ++j) cols.push_back(j);
            break;
        case MassSource::pre_plus_ins:
            for (int j = 0; j < layout.pre_end && j < n_keys; ++j) cols.push_back(j);
            for (int j = layout.vis_end; j < layout.ins_end && j < n_keys; ++j) cols.push_back(j);
            break;
        case MassSource::res:
            for (int j = layout.res_start; j < n_keys; ++j) cols.push_back(j);
            break;
    }
    return cols;
}

namespace {

double mass_over_grids(const std::vector<Tensor>& head_grids, const std::vector<int>& target_rows,
                       const std::vector<int>& source_cols) {
    check(!target_rows.empty(), errc::invalid_argument, "empty attention-mass target set");
    check(!head_grids.empty(), errc::invalid_argument, "no attention heads captured");
    const int n_heads = static_cast<int>(head_grids.size());
    double total = 0.0;
    for (int i : target_rows) {
        check(i >= 0 && i < head_grids[0].rows(), errc::invalid_argument,
              "target row out of range");
        for (int j : source_cols) {
            check(j >= 0 && j < head_grids[0].cols(), errc::invalid_argument,
                  "source column out of range");
            double avg = 0.0;
            for (const Tensor& g : head_grids) avg += g.at(i, j);
            total += avg / n_heads;
        }
    }
    return total / static_cast<double>(target_rows.size());
}

}  // namespace

double attention_mass(const ForwardTrace& trace, const std::vector<int>& target_rows,
                      const std::vector<int>& source_cols, int layer) {
    check(trace.attention_captured, errc::invalid_argument, "attention was not captured");
    check(layer >= 1 && layer <= static_cast<int>(trace.attn.size()), errc::invalid_argument,
          "layer out of range");
    return mass_over_grids(trace.attn[static_cast<size_t>(layer - 1)], target_rows, source_cols);
}

double attention_mass_row(const std::vector<Tensor>& head_rows,
                          const std::vector<int>& source_cols) {
    return mass_over_grids(head_rows, {0}, source_cols);
}

namespace {

std::vector<int> ins_rows(const SequenceLayout& layout) {
    std::vector<int> rows;
    for (int i = layout.vis_end; i < layout.ins_end; ++i) rows.push_back(i);
    return rows;
}

std::vector<int> prompt_tokens(const TaskExample& ex) {
    return std::vector<int>(ex.tokens.begin(), ex.tokens.begin() + ex.target_start);
}

std::vector<int> gold_tokens(const TaskExample& ex) {
    return std::vector<int>(ex.tokens.begin() + ex.target_start, ex.tokens.begin() + ex.target_end);
}

}  // namespace

std::vector<MassProfile> mass_profile_prefill(const Checkpoint& ckpt, const TaskExample& ex,
                                              const std::optional<MaskSpec>& mask,
                                              const std::vector<MassSource>& sources) {
    auto [x0, layout] = embed_multimodal(ckpt, ex.vision, prompt_tokens(ex), ex.n_pre, ex.n_ins);
    ForwardTrace trace = forward(ckpt, x0, layout, mask, true);
    const int L = ckpt.config.num_layers;
    const std::vector<int> targets = ins_rows(layout);
    const int n_keys = x0.rows();

    std::vector<MassProfile> out;
    for (MassSource src : sources) {
        MassProfile p;
        p.stage = "prefill";
        p.target = "ins";
        p.source = src;
        const std::vector<int> cols = source_columns(layout, src, n_keys);
        for (int l = 1; l <= L; ++l)
            p.per_layer.push_back(cols.empty() ? 0.0 : attention_mass(trace, targets, cols, l));
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<MassProfile> mass_profile_decode(const Checkpoint& ckpt, const TaskExample& ex,
                                             const std::optional<MaskSpec>& mask,
                                             const std::vector<MassSource>& sources) {
    const std::vector<int> gold = gold_tokens(ex);
    check(!gold.empty(), errc::invalid_argument, "example has no answer span to decode");
    DecodeResult dec = decode_greedy(ckpt, ex.vision, prompt_tokens(ex), ex.n_pre, ex.n_ins, mask,
                                     static_cast<int>(gold.size()), true);
    const int L = ckpt.config.num_layers;
    const int n_steps = static_cast<int>(dec.step_attn.size());
    check(n_steps > 0, errc::invalid_argument, "decode produced no steps");

    std::vector<MassProfile> out;
    for (MassSource src : sources) {
        MassProfile p;
        p.stage = "decode";
        p.target = "res";
        p.source = src;
        p.per_step.assign(static_cast<size_t>(n_steps), std::vector<double>());
        for (int s = 0; s < n_steps; ++s) {
            // the step feeding position res_start + s sees keys 0..position
            const int n_keys = dec.layout.res_start + s + 1;
            const std::vector<int> cols = source_columns(dec.layout, src, n_keys);
            for (int l = 1; l <= L; ++l) {
                const auto& heads = dec.step_attn[static_cast<size_t>(s)][static_cast<size_t>(l - 1)];
                p.per_step[static_cast<size_t>(s)].push_back(
                    cols.empty() ? 0.0 : attention_mass_row(heads, cols));
            }
        }
        for (int l = 0; l < L; ++l) {
            double acc = 0.0;
            for (int s = 0; s < n_steps; ++s) acc += p.per_step[static_cast<size_t>(s)][static_cast<size_t>(l)];
            p.per_layer.push_back(acc / n_steps);
        }
        out.push_back(std::move(p));
    }
    return out;
}

double mean_late_mass_ins_to_vis(const Checkpoint& ckpt, const Task& task, Split split,
                                 int layer_lo, int workers) {
    const int L = ckpt.config.num_layers;
    check(layer_lo >= 1 && layer_lo <= L, errc::invalid_argument, "layer_lo out of range");
    const std::vector<size_t> idx = task.split_indices(split);
    check(!idx.empty(), errc::invalid_argument, "empty split");

    std::vector<double> vals(idx.size());
    parallel_for(idx.size(), workers, [&](size_t j) {
        const auto profiles =
            mass_profile_prefill(ckpt, task.examples[idx[j]], std::nullopt, {MassSource::vis});
        double acc = 0.0;
        for (int l = layer_lo; l <= L; ++l) acc += profiles[0].per_layer[static_cast<size_t>(l - 1)];
        vals[j] = acc / (L - layer_lo + 1);
    });
    double acc = 0.0;
    for (double v : vals) acc += v;
    return acc / static_cast<double>(vals.size());
}

AggregateMass aggregate_mass_profiles(const Checkpoint& ckpt, const Task& task, Split split,
                                      const std::string& stage,
                                      const std::optional<MaskSpec>& mask,
                                      const std::vector<MassSource>& sources, int workers) {
    check(stage == "prefill" || stage == "decode", errc::invalid_argument,
          "stage must be prefill or decode");
    check(!sources.empty(), errc::invalid_argument, "no mass sources requested");
    const std::vector<size_t> idx = task.split_indices(split);
    check(!idx.empty(), errc::invalid_argument, "empty split");
    const int L = ckpt.config.num_layers;

    struct PerExample {
        std::vector<std::vector<double>> per_layer;  // [source][layer]
        bool correct = false;
    };
    std::vector<PerExample> rows(idx.size());
    parallel_for(idx.size(), workers, [&](size_t j) {
        const TaskExample& ex = task.examples[idx[j]];
        const std::vector<int> gold = gold_tokens(ex);
        DecodeResult dec = decode_greedy(ckpt, ex.vision, prompt_tokens(ex), ex.n_pre, ex.n_ins,
                                         mask, static_cast<int>(gold.size()));
        PerExample pe;
        pe.correct = dec.tokens == gold;
        const auto profiles = stage == "prefill" ? mass_profile_prefill(ckpt, ex, mask, sources)
                                                 : mass_profile_decode(ckpt, ex, mask, sources);
        for (const MassProfile& p : profiles) pe.per_layer.push_back(p.per_layer);
        rows[j] = std::move(pe);
    });

    AggregateMass out;
    out.stage = stage;
    out.n_all = static_cast<int>(rows.size());
    for (const auto& r : rows) out.n_correct += r.correct ? 1 : 0;
    for (size_t s = 0; s < sources.size(); ++s) {
        MassProfile all_p, cor_p;
        all_p.stage = cor_p.stage = stage;
        all_p.target = cor_p.target = stage == "prefill" ? "ins" : "res";
        all_p.source = cor_p.source = sources[s];
        all_p.per_layer.assign(static_cast<size_t>(L), 0.0);
        cor_p.per_layer.assign(static_cast<size_t>(L), 0.0);
        for (const auto& r : rows) {
            for (int l = 0; l < L; ++l) {
                all_p.per_layer[static_cast<size_t>(l)] += r.per_layer[s][static_cast<size_t>(l)];
                if (r.correct) cor_p.per_layer[static_cast<size_t>(l)] += r.per_layer[s][static_cast<size_t>(l)];
            }
        }
        for (int l = 0; l < L; ++l) {
            all_p.per_layer[static_cast<size_t>(l)] /= out.n_all;
            if (out.n_correct > 0) cor_p.per_layer[static_cast<size_t>(l)] /= out.n_correct;
        }
        out.over_all.push_back(std::move(all_p));
        out.over_correct.push_back(std::move(cor_p));
    }
    return out;
}

Heatmap vision_heatmap(const ForwardTrace& trace, const SequenceLayout& layout, int layer,
                       int head, const std::vector<int>& query_rows, int grid_size) {
    check(trace.attention_captured, errc::invalid_argument, "attention was not captured");
    check(layer >= 1 && layer <= static_cast<int>(trace.attn.size()), errc::invalid_argument,
          "layer out of range");
    check(!query_rows.empty(), errc::invalid_argument, "empty heatmap query set");
    check(grid_size >= 1 && layout.n_vis() == grid_size * grid_size, errc::invalid_argument,
          "vision span does not match the grid geometry");
    const auto& heads = trace.attn[static_cast<size_t>(layer - 1)];
    const int n_heads = static_cast<int>(heads.size());
    check(head >= -1 && head < n_heads, errc::invalid_argument, "head index out of range");

    Heatmap map;
    map.grid_size = grid_size;
    map.layer = layer;
    map.head = head;
    map.raw = Tensor::zeros({grid_size, grid_size});
    for (int c = 0; c < grid_size * grid_size; ++c) {
        const int col = layout.vis_begin() + c;
        double acc = 0.0;
        for (int i : query_rows) {
            check(i >= 0 && i < heads[0].rows(), errc::invalid_argument, "query row out of range");
            if (head >= 0) {
                acc += heads[static_cast<size_t>(head)].at(i, col);
            } else {
                double avg = 0.0;
                for (const Tensor& g : heads) avg += g.at(i, col);
                acc += avg / n_heads;
            }
        }
        map.raw.data[static_cast<size_t>(c)] =
            static_cast<float>(acc / static_cast<double>(query_rows.size()));
    }
    map.normalized = map.raw;
    float peak = 0.0f;
    for (float v : map.raw.data) peak = std::max(peak, v);
    if (peak > 0.0f)
        for (float& v : map.normalized.data) v /= peak;
    return map;
}

std::string heatmap_to_pgm(const Heatmap& map, int cell_px) {
    check(cell_px >= 1, errc::invalid_argument, "cell_px must be positive");
    const int side = map.grid_size * cell_px;
    std::string out = "P2\n" + std::to_string(side) + " " + std::to_string(side) + "\n255\n";
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            const int cell = (y / cell_px) * map.grid_size + (x / cell_px);
            const int v = static_cast<int>(std::lround(
                255.0 * map.normalized.data[static_cast<size_t>(cell)]));
            out += std::to_string(std::clamp(v, 0, 255));
            out += x + 1 == side ? "\n" : " ";
        }
    }
    return out;
}

LocalizationReport localization_rate(const Checkpoint& ckpt, const Task& task, Split split,
                                     int layer, const std::optional<MaskSpec>& mask, int workers) {
    check(task.kind == "grounded", errc::invalid_argument,
          "localization rate needs a grounded task");
    const std::vector<size_t> idx = task.split_indices(split);
    check(!idx.empty(), errc::invalid_argument, "empty split");

    std::vector<char> hits(idx.size(), 0);
    parallel_for(idx.size(), workers, [&](size_t j) {
        const TaskExample& ex = task.examples[idx[j]];
        int cell = -1;
        for (int t = ex.n_pre; t < ex.n_pre + ex.n_ins; ++t) {
            if (ex.tokens[static_cast<size_t>(t)] >= TOK_CELL0) {
                check(cell < 0, errc::invalid_argument, "multiple cell tokens in instruction");
                cell = ex.tokens[static_cast<size_t>(t)] - TOK_CELL0;
            }
        }
        check(cell >= 0, errc::invalid_argument, "no cell token in instruction");

        auto [x0, layout] = embed_multimodal(ckpt, ex.vision, prompt_tokens(ex), ex.n_pre, ex.n_ins);
        ForwardTrace trace = forward(ckpt, x0, layout, mask, true);
        Heatmap map = vision_heatmap(trace, layout, layer, -1, ins_rows(layout), task.grid_size);
        int best = 0;
        for (int c = 1; c < task.grid_size * task.grid_size; ++c)
            if (map.raw.data[static_cast<size_t>(c)] > map.raw.data[static_cast<size_t>(best)])
                best = c;
        hits[j] = best == cell ? 1 : 0;
    });

    LocalizationReport rep;
    rep.layer = layer;
    rep.n = static_cast<int>(hits.size());
    for (char h : hits) rep.hits += h;
    rep.rate = static_cast<double>(rep.hits) / static_cast<double>(rep.n);
    return rep;
}

}  // namespace plab

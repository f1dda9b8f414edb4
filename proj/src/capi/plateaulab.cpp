#include "plateaulab.h"

#include <cstring>
#include <memory>
#include <string>

#include "analysis.hpp"
#include "artifacts.hpp"
#include "ckpt_io.hpp"
#include "evalharness.hpp"
#include "interventions.hpp"
#include "kvconfig.hpp"
#include "merging.hpp"
#include "plateau.hpp"
#include "taskgen.hpp"
#include "train.hpp"

using namespace plab;

struct plab_checkpoint {
    Checkpoint ckpt;
};

struct plab_task {
    Task task;
};

namespace {

thread_local std::string g_last_error;

plab_status status_of(errc code) {
    switch (code) {
        case errc::invalid_argument: return PLAB_ERR_INVALID_ARGUMENT;
        case errc::dim_mismatch: return PLAB_ERR_DIM_MISMATCH;
        case errc::io: return PLAB_ERR_IO;
        case errc::format: return PLAB_ERR_FORMAT;
        case errc::numeric: return PLAB_ERR_NUMERIC;
        case errc::eval: return PLAB_ERR_EVAL;
    }
    return PLAB_ERR_INTERNAL;
}

// runs the body, converting exceptions into status codes + last_error
template <typename Fn>
plab_status guarded(Fn&& fn) {
    try {
        fn();
        return PLAB_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return status_of(e.code());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return PLAB_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return PLAB_ERR_INTERNAL;
    }
}

char* dup_string(const std::string& s) {
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void require(bool cond, const char* msg) {
    check(cond, errc::invalid_argument, msg);
}

std::optional<MaskSpec> mask_of(int cut_layer, int num_layers) {
    if (cut_layer == 0) return std::nullopt;
    MaskSpec mask{cut_layer};
    mask.validate(num_layers);
    return mask;
}

std::vector<size_t> subsample_of(const Task& task, Split split, int n, uint64_t seed) {
    return subsample_indices(task, split, n, seed);
}

std::vector<MassSource> sources_of(const char* text) {
    if (text == nullptr || *text == '\0') return all_mass_sources();
    std::vector<MassSource> out;
    std::string s(text);
    size_t pos = 0;
    while (pos <= s.size()) {
        size_t comma = s.find(',', pos);
        if (comma == std::string::npos) comma = s.size();
        out.push_back(mass_source_from_string(s.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return out;
}

}  // namespace

extern "C" {

const char* plab_version(void) { return "1.0.0"; }

const char* plab_last_error(void) { return g_last_error.c_str(); }

void plab_string_free(char* s) { delete[] s; }

void plab_checkpoint_free(plab_checkpoint* c) { delete c; }

void plab_task_free(plab_task* t) { delete t; }

plab_status plab_checkpoint_load(const char* path, plab_checkpoint** out) {
    return guarded([&] {
        require(path != nullptr && out != nullptr, "null argument");
        auto handle = std::make_unique<plab_checkpoint>();
        handle->ckpt = load_checkpoint(path);
        *out = handle.release();
    });
}

plab_status plab_checkpoint_save(const plab_checkpoint* c, const char* path) {
    return guarded([&] {
        require(c != nullptr && path != nullptr, "null argument");
        save_checkpoint(path, c->ckpt);
    });
}

plab_status plab_checkpoint_random(const char* config_kv, const char* kind, uint64_t seed,
                                   plab_checkpoint** out) {
    return guarded([&] {
        require(kind != nullptr && out != nullptr, "null argument");
        const KvConfig kv = KvConfig::parse_string(config_kv ? config_kv : "");
        const ModelConfig cfg = model_config_from_kv(kv);
        auto handle = std::make_unique<plab_checkpoint>();
        handle->ckpt = Checkpoint::init_random(cfg, ckpt_kind_from_string(kind), seed);
        *out = handle.release();
    });
}

plab_status plab_checkpoint_digest(const plab_checkpoint* c, char** out_hex) {
    return guarded([&] {
        require(c != nullptr && out_hex != nullptr, "null argument");
        *out_hex = dup_string(checkpoint_digest(c->ckpt));
    });
}

plab_status plab_checkpoint_info_json(const plab_checkpoint* c, char** out_json) {
    return guarded([&] {
        require(c != nullptr && out_json != nullptr, "null argument");
        const Checkpoint& ckpt = c->ckpt;
        nlohmann::json names = nlohmann::json::array();
        for (const auto& [name, t] : ckpt.tensors) names.push_back(name);
        nlohmann::json j{{"kind", to_string(ckpt.kind)},
                         {"digest", checkpoint_digest(ckpt)},
                         {"n_tensors", ckpt.tensors.size()},
                         {"tensors", names},
                         {"config",
                          {{"num_layers", ckpt.config.num_layers},
                           {"hidden_dim", ckpt.config.hidden_dim},
                           {"num_heads", ckpt.config.num_heads},
                           {"vocab_size", ckpt.config.vocab_size},
                           {"max_seq_len", ckpt.config.max_seq_len},
                           {"vision_feature_dim", ckpt.config.vision_feature_dim},
                           {"ffn_dim", ckpt.config.ffn_dim}}}};
        *out_json = dup_string(dump_json(j));
    });
}

plab_status plab_checkpoint_diff_json(const plab_checkpoint* a, const plab_checkpoint* b,
                                      char** out_json) {
    return guarded([&] {
        require(a != nullptr && b != nullptr && out_json != nullptr, "null argument");
        const CkptDiff diff = diff_checkpoints(a->ckpt, b->ckpt);
        nlohmann::json deltas = nlohmann::json::array();
        for (const TensorDelta& d : diff.deltas)
            deltas.push_back({{"name", d.name},
                              {"max_abs_diff", d.max_abs_diff},
                              {"n_differing", d.n_differing}});
        nlohmann::json j{{"configs_match", diff.configs_match},
                         {"kinds_match", diff.kinds_match},
                         {"identical", diff.identical()},
                         {"tensors_identical", diff.tensors_identical()},
                         {"deltas", deltas},
                         {"only_first", diff.only_first},
                         {"only_second", diff.only_second}};
        *out_json = dup_string(dump_json(j));
    });
}

plab_status plab_task_load(const char* path, plab_task** out) {
    return guarded([&] {
        require(path != nullptr && out != nullptr, "null argument");
        auto handle = std::make_unique<plab_task>();
        handle->task = load_task(path);
        *out = handle.release();
    });
}

plab_status plab_task_save(const plab_task* t, const char* path) {
    return guarded([&] {
        require(t != nullptr && path != nullptr, "null argument");
        save_task(path, t->task);
    });
}

plab_status plab_task_generate_text(uint64_t seed, int n, const char* skill, plab_task** out) {
    return guarded([&] {
        require(out != nullptr, "null argument");
        auto handle = std::make_unique<plab_task>();
        handle->task = gen_text_task(seed, n, skill ? skill : "modular-sum");
        *out = handle.release();
    });
}

plab_status plab_task_generate_grounded(uint64_t seed, int n, int grid_size, int n_attributes,
                                        int vision_feature_dim, plab_task** out) {
    return guarded([&] {
        require(out != nullptr, "null argument");
        auto handle = std::make_unique<plab_task>();
        handle->task = gen_grounded_task(seed, n, grid_size, n_attributes, vision_feature_dim);
        *out = handle.release();
    });
}

plab_status plab_task_info_json(const plab_task* t, char** out_json) {
    return guarded([&] {
        require(t != nullptr && out_json != nullptr, "null argument");
        const Task& task = t->task;
        nlohmann::json j{{"task_id", task.task_id},
                         {"kind", task.kind},
                         {"skill", task.skill},
                         {"grid_size", task.grid_size},
                         {"n_attributes", task.n_attributes},
                         {"vision_feature_dim", task.vision_feature_dim},
                         {"n_examples", task.examples.size()},
                         {"n_train", task.split_indices(Split::train).size()},
                         {"n_val", task.split_indices(Split::val).size()},
                         {"n_test", task.split_indices(Split::test).size()}};
        *out_json = dup_string(dump_json(j));
    });
}

plab_status plab_train_base(const char* config_kv, const plab_task* text_task,
                            plab_checkpoint** out_ckpt, char** out_curve_csv) {
    return guarded([&] {
        require(text_task != nullptr && out_ckpt != nullptr && out_curve_csv != nullptr,
                "null argument");
        const KvConfig kv = KvConfig::parse_string(config_kv ? config_kv : "");
        const ModelConfig cfg = model_config_from_kv(kv);
        const TrainConfig tc = train_config_from_kv(kv);
        TrainResult res = train_base_lm(cfg, text_task->task, tc);
        check(!res.diverged, errc::numeric, "training diverged");
        auto handle = std::make_unique<plab_checkpoint>();
        handle->ckpt = std::move(res.ckpt);
        *out_curve_csv = dup_string(training_curve_csv(res.curve));
        *out_ckpt = handle.release();
    });
}

plab_status plab_finetune(const char* config_kv, const plab_checkpoint* base,
                          const plab_task* grounded_task, plab_checkpoint** out_ckpt,
                          char** out_curve_csv) {
    return guarded([&] {
        require(base != nullptr && grounded_task != nullptr && out_ckpt != nullptr &&
                    out_curve_csv != nullptr,
                "null argument");
        const KvConfig kv = KvConfig::parse_string(config_kv ? config_kv : "");
        const TrainConfig tc = train_config_from_kv(kv);
        TrainResult res = finetune_mllm(base->ckpt, grounded_task->task, tc);
        check(!res.diverged, errc::numeric, "training diverged");
        auto handle = std::make_unique<plab_checkpoint>();
        handle->ckpt = std::move(res.ckpt);
        *out_curve_csv = dup_string(training_curve_csv(res.curve));
        *out_ckpt = handle.release();
    });
}

plab_status plab_eval(const plab_checkpoint* c, const plab_task* t, const char* split,
                      int mask_cut_layer, int subsample_n, uint64_t subsample_seed,
                      int with_records, int workers, char** out_json) {
    return guarded([&] {
        require(c != nullptr && t != nullptr && split != nullptr && out_json != nullptr,
                "null argument");
        const Split sp = split_from_string(split);
        const auto mask = mask_of(mask_cut_layer, c->ckpt.config.num_layers);
        std::vector<size_t> idx;
        const std::vector<size_t>* idx_ptr = nullptr;
        if (subsample_n > 0) {
            idx = subsample_of(t->task, sp, subsample_n, subsample_seed);
            idx_ptr = &idx;
        }
        EvalReport rep =
            evaluate(c->ckpt, t->task, sp, mask, workers, idx_ptr, with_records != 0);
        rep.seed = subsample_seed;
        rep.timestamp = iso_utc_now();
        *out_json = dup_string(dump_json(eval_report_json(rep, with_records != 0)));
    });
}

plab_status plab_sweep_mask(const plab_checkpoint* c, const plab_task* t, const char* split,
                            int subsample_n, uint64_t subsample_seed, int workers,
                            char** out_json) {
    return guarded([&] {
        require(c != nullptr && t != nullptr && split != nullptr && out_json != nullptr,
                "null argument");
        const Split sp = split_from_string(split);
        std::vector<size_t> idx;
        const std::vector<size_t>* idx_ptr = nullptr;
        if (subsample_n > 0) {
            idx = subsample_of(t->task, sp, subsample_n, subsample_seed);
            idx_ptr = &idx;
        }
        const int L = c->ckpt.config.num_layers;
        const SweepProfile prof = mask_sweep(
            [&](const std::optional<MaskSpec>& mask) {
                return evaluate(c->ckpt, t->task, sp, mask, workers, idx_ptr, false).score;
            },
            full_sweep_range(L), L);
        *out_json = dup_string(dump_json(sweep_profile_json(prof)));
    });
}

plab_status plab_compare(const char* const* labels, const char* const* report_jsons, int n,
                         int baseline_index, char** out_json) {
    return guarded([&] {
        require(labels != nullptr && report_jsons != nullptr && out_json != nullptr,
                "null argument");
        require(n > 0, "need at least one report");
        require(baseline_index >= 0 && baseline_index < n, "baseline index out of range");
        std::vector<std::pair<std::string, EvalReport>> reports;
        for (int i = 0; i < n; ++i) {
            require(labels[i] != nullptr && report_jsons[i] != nullptr, "null argument");
            reports.emplace_back(labels[i], eval_report_from_json(report_jsons[i]));
        }
        const Comparison cmp = compare(reports, static_cast<size_t>(baseline_index));
        *out_json = dup_string(dump_json(comparison_json(cmp)));
    });
}

plab_status plab_detect_plateau(const char* profile_json, int num_layers, int smoothing_window,
                                int min_plateau_len, double slope_tol_frac, char** out_json) {
    return guarded([&] {
        require(profile_json != nullptr && out_json != nullptr, "null argument");
        require(num_layers >= 1, "num_layers must be positive");
        const SweepProfile prof = sweep_profile_from_json(profile_json);
        const StageSegmentation seg =
            detect_plateau_onset(prof, smoothing_window, min_plateau_len, slope_tol_frac);
        const bool fallback = !seg.plateau_found;
        const int k_star = fallback ? fallback_k_star(num_layers) : seg.k_star;
        *out_json = dup_string(dump_json(segmentation_json(seg, fallback, k_star)));
    });
}

plab_status plab_merge(const plab_checkpoint* base, const plab_checkpoint* vlm,
                       const char* config_kv, plab_checkpoint** out) {
    return guarded([&] {
        require(base != nullptr && vlm != nullptr && config_kv != nullptr && out != nullptr,
                "null argument");
        const KvConfig kv = KvConfig::parse_string(config_kv);
        const MergeSpec spec = merge_spec_from_kv(kv, vlm->ckpt.config.num_layers);
        auto handle = std::make_unique<plab_checkpoint>();
        handle->ckpt = merge(base->ckpt, vlm->ckpt, spec);
        *out = handle.release();
    });
}

plab_status plab_plam_pipeline(const plab_checkpoint* base, const plab_checkpoint* vlm,
                               const plab_task* t, const char* config_kv,
                               plab_checkpoint** out_ckpt, char** out_report_json) {
    return guarded([&] {
        require(base != nullptr && vlm != nullptr && t != nullptr && out_ckpt != nullptr &&
                    out_report_json != nullptr,
                "null argument");
        const KvConfig kv = KvConfig::parse_string(config_kv ? config_kv : "");
        const PipelineConfig pc = pipeline_config_from_kv(kv);
        PipelineReport rep = plam_pipeline(base->ckpt, vlm->ckpt, t->task, pc);
        *out_report_json = dup_string(dump_json(pipeline_report_json(rep)));
        auto handle = std::make_unique<plab_checkpoint>();
        handle->ckpt = std::move(rep.merged_ckpt);
        *out_ckpt = handle.release();
    });
}

plab_status plab_mass_profile(const plab_checkpoint* c, const plab_task* t, const char* split,
                              const char* stage, const char* sources, int mask_cut_layer,
                              int workers, char** out_json) {
    return guarded([&] {
        require(c != nullptr && t != nullptr && split != nullptr && stage != nullptr &&
                    out_json != nullptr,
                "null argument");
        const Split sp = split_from_string(split);
        const auto mask = mask_of(mask_cut_layer, c->ckpt.config.num_layers);
        const AggregateMass agg =
            aggregate_mass_profiles(c->ckpt, t->task, sp, stage, mask, sources_of(sources),
                                    workers);
        *out_json = dup_string(dump_json(aggregate_mass_json(agg)));
    });
}

plab_status plab_late_vision_mass(const plab_checkpoint* c, const plab_task* t, const char* split,
                                  int layer_lo, int workers, double* out_mass) {
    return guarded([&] {
        require(c != nullptr && t != nullptr && split != nullptr && out_mass != nullptr,
                "null argument");
        *out_mass = mean_late_mass_ins_to_vis(c->ckpt, t->task, split_from_string(split),
                                              layer_lo, workers);
    });
}

plab_status plab_heatmap_pgm(const plab_checkpoint* c, const plab_task* t, int example_index,
                             int layer, int head, int cell_px, char** out_pgm) {
    return guarded([&] {
        require(c != nullptr && t != nullptr && out_pgm != nullptr, "null argument");
        const Task& task = t->task;
        require(task.kind == "grounded", "heatmaps need a grounded task");
        check(example_index >= 0 && example_index < static_cast<int>(task.examples.size()),
              errc::invalid_argument, "example index out of range");
        const TaskExample& ex = task.examples[static_cast<size_t>(example_index)];
        const std::vector<int> prompt(ex.tokens.begin(), ex.tokens.begin() + ex.target_start);
        auto [x0, layout] = embed_multimodal(c->ckpt, ex.vision, prompt, ex.n_pre, ex.n_ins);
        const ForwardTrace trace = forward(c->ckpt, x0, layout, std::nullopt, true);
        std::vector<int> query_rows;
        for (int i = layout.vis_end; i < layout.ins_end; ++i) query_rows.push_back(i);
        const Heatmap map = vision_heatmap(trace, layout, layer, head, query_rows,
                                           task.grid_size);
        *out_pgm = dup_string(heatmap_to_pgm(map, cell_px));
    });
}

plab_status plab_localization_rate(const plab_checkpoint* c, const plab_task* t,
                                   const char* split, int layer, char** out_json) {
    return guarded([&] {
        require(c != nullptr && t != nullptr && split != nullptr && out_json != nullptr,
                "null argument");
        const LocalizationReport rep =
            localization_rate(c->ckpt, t->task, split_from_string(split), layer);
        nlohmann::json j{{"layer", rep.layer},
                         {"n", rep.n},
                         {"hits", rep.hits},
                         {"rate", rep.rate}};
        *out_json = dup_string(dump_json(j));
    });
}

}  // extern "C"

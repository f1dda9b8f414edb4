#include "artifacts.hpp"

#include <cctype>
#include <cstdio>
#include <ctime>

#include "fsio.hpp"
#include "kvconfig.hpp"

namespace plab {

using nlohmann::json;

std::string fmt_g9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string iso_utc_now() {
    const std::time_t now = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

std::string dump_json(const json& j) { return j.dump(1) + "\n"; }

std::string sweep_profile_csv(const SweepProfile& profile) {
    std::string out = "k,score\n";
    for (const SweepPoint& p : profile.points)
        out += std::to_string(p.k) + "," + fmt_g9(p.score) + "\n";
    return out;
}

json sweep_profile_json(const SweepProfile& profile) {
    json points = json::array();
    for (const SweepPoint& p : profile.points) points.push_back({{"k", p.k}, {"score", p.score}});
    return json{{"points", points}};
}

SweepProfile sweep_profile_from_json(const std::string& text) {
    SweepProfile prof;
    try {
        const json j = json::parse(text);
        for (const json& p : j.at("points"))
            prof.points.push_back({p.at("k").get<int>(), p.at("score").get<double>()});
    } catch (const json::exception& e) {
        fail(errc::format, std::string("bad sweep profile json: ") + e.what());
    }
    return prof;
}

EvalReport eval_report_from_json(const std::string& text) {
    EvalReport rep;
    try {
        const json j = json::parse(text);
        rep.model_digest = j.at("model_digest").get<std::string>();
        rep.task_id = j.at("task_id").get<std::string>();
        rep.split = split_from_string(j.at("split").get<std::string>());
        rep.metric = j.at("metric").get<std::string>();
        rep.score = j.at("score").get<double>();
        rep.n_examples = j.at("n_examples").get<int>();
        rep.seed = j.value("seed", uint64_t{0});
        rep.timestamp = j.value("timestamp", std::string());
        if (j.contains("mask_cut_layer") && !j.at("mask_cut_layer").is_null())
            rep.mask_cut_layer = j.at("mask_cut_layer").get<int>();
    } catch (const json::exception& e) {
        fail(errc::format, std::string("bad eval report json: ") + e.what());
    }
    return rep;
}

json segmentation_json(const StageSegmentation& seg, bool fallback_used, int k_star_used) {
    json j;
    j["plateau_found"] = seg.plateau_found;
    j["k_star_detected"] = seg.plateau_found ? json(seg.k_star) : json(nullptr);
    j["early_end"] = seg.plateau_found ? json(seg.early_end) : json(nullptr);
    j["mid_end"] = seg.plateau_found ? json(seg.mid_end) : json(nullptr);
    j["mid_slope"] = seg.mid_slope;
    j["tail_slope"] = seg.tail_slope;
    j["slope_tol"] = seg.slope_tol;
    j["slope_tol_frac"] = seg.slope_tol_frac;
    j["smoothing_window"] = seg.smoothing_window;
    j["min_plateau_len"] = seg.min_plateau_len;
    j["curve_smoothed"] = seg.curve_smoothed;
    j["fallback_used"] = fallback_used;
    j["k_star_used"] = k_star_used;
    return j;
}

json eval_report_json(const EvalReport& rep, bool include_records) {
    json j;
    j["model_digest"] = rep.model_digest;
    j["task_id"] = rep.task_id;
    j["split"] = to_string(rep.split);
    j["metric"] = rep.metric;
    j["score"] = rep.score;
    j["n_examples"] = rep.n_examples;
    j["seed"] = rep.seed;
    j["timestamp"] = rep.timestamp;
    j["mask_cut_layer"] = rep.mask_cut_layer ? json(*rep.mask_cut_layer) : json(nullptr);
    if (include_records && !rep.per_example.empty()) {
        json recs = json::array();
        for (const EvalRecord& r : rep.per_example) {
            recs.push_back({{"example_index", r.example_index},
                            {"predicted", r.predicted},
                            {"gold", r.gold},
                            {"correct", r.correct}});
        }
        j["per_example"] = std::move(recs);
    }
    return j;
}

namespace {

std::string join_tokens(const std::vector<int>& toks) {
    std::string out;
    for (size_t i = 0; i < toks.size(); ++i) {
        if (i) out += ' ';
        out += std::to_string(toks[i]);
    }
    return out;
}

}  // namespace

std::string eval_records_csv(const EvalReport& rep) {
    std::string out = "example_index,predicted,gold,correct\n";
    for (const EvalRecord& r : rep.per_example) {
        out += std::to_string(r.example_index) + "," + join_tokens(r.predicted) + "," +
               join_tokens(r.gold) + "," + (r.correct ? "1" : "0") + "\n";
    }
    return out;
}

json comparison_json(const Comparison& cmp) {
    json rows = json::array();
    for (const ComparisonRow& r : cmp.rows) {
        rows.push_back(
            {{"label", r.label}, {"score", r.score}, {"delta", r.delta}, {"best", r.best}});
    }
    return json{{"task_id", cmp.task_id},
                {"split", to_string(cmp.split)},
                {"metric", cmp.metric},
                {"baseline", cmp.baseline_label},
                {"rows", rows}};
}

std::string comparison_csv(const Comparison& cmp) {
    std::string out = "label,score,delta,best\n";
    for (const ComparisonRow& r : cmp.rows) {
        out += csv_escape(r.label) + "," + fmt_g9(r.score) + "," + fmt_g9(r.delta) + "," +
               (r.best ? "1" : "0") + "\n";
    }
    return out;
}

json merge_spec_json(const MergeSpec& spec) {
    return json{{"layer_lo", spec.layer_lo},
                {"layer_hi", spec.layer_hi},
                {"lambda1", spec.lambda1},
                {"lambda2", spec.lambda2},
                {"subset", spec.subset}};
}

std::string merge_spec_kv(const MergeSpec& spec) {
    std::string out;
    out += "merge.layer_lo = " + std::to_string(spec.layer_lo) + "\n";
    out += "merge.layer_hi = " + std::to_string(spec.layer_hi) + "\n";
    out += "merge.lambda1 = " + fmt_g9(spec.lambda1) + "\n";
    out += "merge.lambda2 = " + fmt_g9(spec.lambda2) + "\n";
    out += "merge.subset = " + spec.subset + "\n";
    return out;
}

MergeSpec merge_spec_from_kv(const KvConfig& kv, int num_layers) {
    MergeSpec spec;
    spec.layer_lo = kv.get_int("merge.layer_lo");
    spec.layer_hi = kv.get_int("merge.layer_hi", num_layers);
    spec.lambda1 = kv.get_double("merge.lambda1");
    spec.lambda2 = kv.get_double("merge.lambda2");
    spec.subset = kv.get_str("merge.subset", k_subset_attn);
    spec.validate(num_layers);
    return spec;
}

namespace {

std::vector<double> parse_double_list(const std::string& text, const std::string& key) {
    std::vector<double> out;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        const std::string item = text.substr(pos, comma - pos);
        size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            fail(errc::format, "bad number in " + key + ": " + item);
        }
        while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) ++used;
        check(used == item.size(), errc::format, "bad number in " + key + ": " + item);
        out.push_back(v);
        pos = comma + 1;
    }
    return out;
}

}  // namespace

ModelConfig model_config_from_kv(const KvConfig& kv) {
    ModelConfig cfg;
    cfg.num_layers = static_cast<int>(kv.get_int("model.num_layers", cfg.num_layers));
    cfg.hidden_dim = static_cast<int>(kv.get_int("model.hidden_dim", cfg.hidden_dim));
    cfg.num_heads = static_cast<int>(kv.get_int("model.num_heads", cfg.num_heads));
    cfg.vocab_size = static_cast<int>(kv.get_int("model.vocab_size", cfg.vocab_size));
    cfg.max_seq_len = static_cast<int>(kv.get_int("model.max_seq_len", cfg.max_seq_len));
    cfg.vision_feature_dim =
        static_cast<int>(kv.get_int("model.vision_feature_dim", cfg.vision_feature_dim));
    cfg.ffn_dim = static_cast<int>(kv.get_int("model.ffn_dim", cfg.ffn_dim));
    cfg.validate();
    return cfg;
}

std::string model_config_kv(const ModelConfig& cfg) {
    KvConfig kv;
    kv.set("model.num_layers", std::to_string(cfg.num_layers));
    kv.set("model.hidden_dim", std::to_string(cfg.hidden_dim));
    kv.set("model.num_heads", std::to_string(cfg.num_heads));
    kv.set("model.vocab_size", std::to_string(cfg.vocab_size));
    kv.set("model.max_seq_len", std::to_string(cfg.max_seq_len));
    kv.set("model.vision_feature_dim", std::to_string(cfg.vision_feature_dim));
    kv.set("model.ffn_dim", std::to_string(cfg.ffn_dim));
    return kv.to_string();
}

TrainConfig train_config_from_kv(const KvConfig& kv) {
    TrainConfig tc;
    tc.steps = static_cast<int>(kv.get_int("train.steps", tc.steps));
    tc.batch_size = static_cast<int>(kv.get_int("train.batch_size", tc.batch_size));
    tc.lr = kv.get_double("train.lr", tc.lr);
    tc.beta1 = kv.get_double("train.beta1", tc.beta1);
    tc.beta2 = kv.get_double("train.beta2", tc.beta2);
    tc.adam_eps = kv.get_double("train.adam_eps", tc.adam_eps);
    tc.clip_norm = kv.get_double("train.clip_norm", tc.clip_norm);
    tc.warmup_steps = static_cast<int>(kv.get_int("train.warmup_steps", tc.warmup_steps));
    tc.lr_final_frac = kv.get_double("train.lr_final_frac", tc.lr_final_frac);
    tc.seed = static_cast<uint64_t>(kv.get_int("train.seed", 0));
    tc.eval_every = static_cast<int>(kv.get_int("train.eval_every", tc.eval_every));
    tc.workers = static_cast<int>(kv.get_int("train.workers", tc.workers));
    tc.freeze_embeddings = kv.get_bool("train.freeze_embeddings", tc.freeze_embeddings);
    tc.projector_warmup_steps =
        static_cast<int>(kv.get_int("train.projector_warmup_steps", tc.projector_warmup_steps));
    tc.divergence_factor = kv.get_double("train.divergence_factor", tc.divergence_factor);
    return tc;
}

PipelineConfig pipeline_config_from_kv(const KvConfig& kv) {
    PipelineConfig pc;
    pc.sweep_eval_n = static_cast<int>(kv.get_int("plam.sweep_eval_n", pc.sweep_eval_n));
    pc.grid_eval_n = static_cast<int>(kv.get_int("plam.grid_eval_n", pc.grid_eval_n));
    pc.radius = static_cast<int>(kv.get_int("plam.radius", pc.radius));
    pc.smoothing_window =
        static_cast<int>(kv.get_int("plam.smoothing_window", pc.smoothing_window));
    pc.min_plateau_len = static_cast<int>(kv.get_int("plam.min_plateau_len", pc.min_plateau_len));
    pc.slope_tol_frac = kv.get_double("plam.slope_tol_frac", pc.slope_tol_frac);
    pc.subset = kv.get_str("plam.subset", pc.subset);
    if (kv.has("plam.lambda1_grid"))
        pc.lambda1_grid = parse_double_list(kv.get_str("plam.lambda1_grid"), "plam.lambda1_grid");
    if (kv.has("plam.lambda2_grid"))
        pc.lambda2_grid = parse_double_list(kv.get_str("plam.lambda2_grid"), "plam.lambda2_grid");
    pc.lambda_sum_lo = kv.get_double("plam.lambda_sum_lo", pc.lambda_sum_lo);
    pc.lambda_sum_hi = kv.get_double("plam.lambda_sum_hi", pc.lambda_sum_hi);
    pc.seed = static_cast<uint64_t>(kv.get_int("plam.seed", 0));
    pc.workers = static_cast<int>(kv.get_int("plam.workers", pc.workers));
    return pc;
}

std::string grid_table_csv(const GridSearchResult& grid) {
    std::string out = "k0,lambda1,lambda2,subset,score,ok,error\n";
    for (const GridCell& c : grid.table) {
        out += std::to_string(c.spec.layer_lo) + "," + fmt_g9(c.spec.lambda1) + "," +
               fmt_g9(c.spec.lambda2) + "," + c.spec.subset + "," + fmt_g9(c.score) + "," +
               (c.ok ? "1" : "0") + "," + csv_escape(c.error) + "\n";
    }
    return out;
}

json k0_search_json(const K0Search& search) {
    json table = json::array();
    for (const K0Candidate& c : search.table) {
        table.push_back(
            {{"k0", c.k0}, {"score", c.score}, {"ok", c.ok}, {"error", c.error}});
    }
    return json{{"k0", search.k0}, {"score", search.score}, {"table", table}};
}

std::string k0_table_csv(const K0Search& search) {
    std::string out = "k0,score,ok,error\n";
    for (const K0Candidate& c : search.table) {
        out += std::to_string(c.k0) + "," + fmt_g9(c.score) + "," + (c.ok ? "1" : "0") + "," +
               csv_escape(c.error) + "\n";
    }
    return out;
}

json pipeline_report_json(const PipelineReport& rep) {
    json scores = json::array();
    for (const ScoreRow& r : rep.scores)
        scores.push_back({{"label", r.label}, {"val", r.val}, {"test", r.test}});

    std::vector<int> k0_candidates;
    for (const GridCell& c : rep.grid.table) {
        if (k0_candidates.empty() || k0_candidates.back() != c.spec.layer_lo)
            k0_candidates.push_back(c.spec.layer_lo);
    }

    json j;
    j["task_id"] = rep.task_id;
    j["inputs"] = {{"base_digest", rep.base_digest}, {"vlm_digest", rep.vlm_digest}};
    j["merged_digest"] = rep.merged_digest;
    j["sweep"] = sweep_profile_json(rep.sweep);
    j["segmentation"] = segmentation_json(rep.segmentation, rep.plateau_fallback, rep.k_star);
    j["k_star"] = rep.k_star;
    j["plateau_fallback"] = rep.plateau_fallback;
    j["k0_candidates"] = k0_candidates;
    j["grid_cells"] = rep.grid.table.size();
    j["grid_best_score"] = rep.grid.best_score;
    j["final_spec"] = merge_spec_json(rep.final_spec);
    j["scores"] = scores;
    j["base_uses_vlm_projector"] = rep.base_uses_vlm_projector;
    return j;
}

std::string mass_profiles_csv(const std::vector<MassProfile>& profiles) {
    std::string out = "layer,source,value,step\n";
    for (const MassProfile& p : profiles) {
        for (size_t l = 0; l < p.per_layer.size(); ++l)
            out += std::to_string(l + 1) + "," + to_string(p.source) + "," +
                   fmt_g9(p.per_layer[l]) + ",\n";
        for (size_t s = 0; s < p.per_step.size(); ++s)
            for (size_t l = 0; l < p.per_step[s].size(); ++l)
                out += std::to_string(l + 1) + "," + to_string(p.source) + "," +
                       fmt_g9(p.per_step[s][l]) + "," + std::to_string(s) + "\n";
    }
    return out;
}

json mass_profiles_json(const std::vector<MassProfile>& profiles) {
    json arr = json::array();
    for (const MassProfile& p : profiles) {
        json j;
        j["stage"] = p.stage;
        j["target"] = p.target;
        j["source"] = to_string(p.source);
        j["per_layer"] = p.per_layer;
        if (!p.per_step.empty()) j["per_step"] = p.per_step;
        arr.push_back(std::move(j));
    }
    return json{{"profiles", arr}};
}

json aggregate_mass_json(const AggregateMass& agg) {
    return json{{"stage", agg.stage},
                {"n_all", agg.n_all},
                {"n_correct", agg.n_correct},
                {"over_all", mass_profiles_json(agg.over_all)["profiles"]},
                {"over_correct", mass_profiles_json(agg.over_correct)["profiles"]}};
}

std::string training_curve_csv(const std::vector<CurvePoint>& curve) {
    std::string out = "step,split,loss,accuracy\n";
    for (const CurvePoint& p : curve) {
        out += std::to_string(p.step) + "," + to_string(p.split) + "," + fmt_g9(p.loss) + "," +
               fmt_g9(p.accuracy) + "\n";
    }
    return out;
}

std::string heatmap_csv(const Heatmap& map) {
    std::string out;
    for (int r = 0; r < map.grid_size; ++r) {
        for (int c = 0; c < map.grid_size; ++c) {
            out += fmt_g9(map.raw.at(r, c));
            out += c + 1 == map.grid_size ? "\n" : ",";
        }
    }
    return out;
}

RunDir make_run_dir(const std::string& root) {
    RunDir dir{root};
    ensure_dir(dir.root);
    ensure_dir(dir.checkpoints());
    ensure_dir(dir.profiles());
    ensure_dir(dir.reports());
    ensure_dir(dir.logs());
    return dir;
}

}  // namespace plab

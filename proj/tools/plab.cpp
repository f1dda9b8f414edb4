// plab: command-line front end over the plateaulab shared library. Links the
// public C interface only; all model math lives behind it.
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "plateaulab.h"

namespace {

// error payload mirrored to stderr so scripts can parse failures
[[noreturn]] void die(plab_status status, const std::string& message) {
    std::string msg;
    for (char ch : message) {
        if (ch == '"' || ch == '\\') msg += '\\';
        if (ch == '\n') {
            msg += "\\n";
            continue;
        }
        msg += ch;
    }
    std::cerr << "{\"error\": {\"status\": " << static_cast<int>(status) << ", \"message\": \""
              << msg << "\"}}\n";
    std::exit(static_cast<int>(status));
}

void ok_or_die(plab_status status) {
    if (status != PLAB_OK) die(status, plab_last_error());
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) die(PLAB_ERR_IO, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_output(const std::string& path, const std::string& content) {
    if (path.empty() || path == "-") {
        std::cout << content;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) die(PLAB_ERR_IO, "cannot write " + path);
    out << content;
    if (!out) die(PLAB_ERR_IO, "short write to " + path);
}

// owned C string that frees itself
struct CStr {
    char* s = nullptr;
    ~CStr() { plab_string_free(s); }
    std::string str() const { return s ? s : ""; }
};

struct Ckpt {
    plab_checkpoint* c = nullptr;
    ~Ckpt() { plab_checkpoint_free(c); }
};

struct TaskH {
    plab_task* t = nullptr;
    ~TaskH() { plab_task_free(t); }
};

Ckpt load_ckpt(const std::string& path) {
    Ckpt out;
    ok_or_die(plab_checkpoint_load(path.c_str(), &out.c));
    return out;
}

TaskH load_task(const std::string& path) {
    TaskH out;
    ok_or_die(plab_task_load(path.c_str(), &out.t));
    return out;
}

// key=value config text handling: file content plus command-line overrides,
// later lines replacing earlier ones for the same key
std::string kv_key_of(const std::string& line) {
    const size_t hash = line.find('#');
    std::string body = hash == std::string::npos ? line : line.substr(0, hash);
    const size_t eq = body.find('=');
    if (eq == std::string::npos) return "";
    size_t lo = 0, hi = eq;
    while (lo < hi && std::isspace(static_cast<unsigned char>(body[lo]))) ++lo;
    while (hi > lo && std::isspace(static_cast<unsigned char>(body[hi - 1]))) --hi;
    return body.substr(lo, hi - lo);
}

std::string kv_override(const std::string& text, const std::string& key,
                        const std::string& value) {
    std::string out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (kv_key_of(line) != key) out += line + "\n";
    out += key + " = " + value + "\n";
    return out;
}

int env_workers() {
    const char* env = std::getenv("PLATEAU_LAB_WORKERS");
    if (env == nullptr || *env == '\0') return 0;
    return std::atoi(env);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale laboratory for vision-token masking, plateau detection, and "
                 "late-layer model merging"};
    app.require_subcommand(1);
    std::function<void()> run;

    // ---- gen-data ----
    {
        auto* cmd = app.add_subcommand("gen-data", "generate a task dataset");
        auto kind = std::make_shared<std::string>("grounded");
        auto skill = std::make_shared<std::string>("modular-sum");
        auto seed = std::make_shared<uint64_t>(0);
        auto n = std::make_shared<int>(300);
        auto grid = std::make_shared<int>(4);
        auto attrs = std::make_shared<int>(10);
        auto vis_dim = std::make_shared<int>(32);
        auto out = std::make_shared<std::string>();
        cmd->add_option("--kind", *kind, "text or grounded")->check(CLI::IsMember({"text", "grounded"}));
        cmd->add_option("--skill", *skill, "text skill: modular-sum or copy-with-transform");
        cmd->add_option("--seed", *seed, "generation seed");
        cmd->add_option("--n", *n, "number of examples");
        cmd->add_option("--grid-size", *grid, "image grid side (grounded)");
        cmd->add_option("--attributes", *attrs, "attribute count (grounded)");
        cmd->add_option("--vis-dim", *vis_dim, "vision feature width (grounded)");
        cmd->add_option("--out", *out, "task json path")->required();
        cmd->callback([=, &run] {
            run = [=] {
                TaskH task;
                if (*kind == "text")
                    ok_or_die(plab_task_generate_text(*seed, *n, skill->c_str(), &task.t));
                else
                    ok_or_die(plab_task_generate_grounded(*seed, *n, *grid, *attrs, *vis_dim,
                                                          &task.t));
                ok_or_die(plab_task_save(task.t, out->c_str()));
                CStr info;
                ok_or_die(plab_task_info_json(task.t, &info.s));
                std::cout << info.str();
            };
        });
    }

    // ---- task-info ----
    {
        auto* cmd = app.add_subcommand("task-info", "describe a task file");
        auto path = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        cmd->add_option("--task", *path, "task json path")->required();
        cmd->add_option("--out", *out, "output path (default stdout)");
        cmd->callback([=, &run] {
            run = [=] {
                TaskH task = load_task(*path);
                CStr info;
                ok_or_die(plab_task_info_json(task.t, &info.s));
                write_output(*out, info.str());
            };
        });
    }

    // ---- init-random ----
    {
        auto* cmd = app.add_subcommand("init-random", "write an untrained checkpoint");
        auto config = std::make_shared<std::string>();
        auto kind = std::make_shared<std::string>("mllm");
        auto seed = std::make_shared<uint64_t>(0);
        auto out = std::make_shared<std::string>();
        cmd->add_option("--config", *config, "model.* kv config file");
        cmd->add_option("--kind", *kind, "base_lm, mllm, or merged");
        cmd->add_option("--seed", *seed, "init seed");
        cmd->add_option("--out", *out, "checkpoint path")->required();
        cmd->callback([=, &run] {
            run = [=] {
                const std::string kv = config->empty() ? "" : read_text_file(*config);
                Ckpt ckpt;
                ok_or_die(plab_checkpoint_random(kv.c_str(), kind->c_str(), *seed, &ckpt.c));
                ok_or_die(plab_checkpoint_save(ckpt.c, out->c_str()));
            };
        });
    }

    // ---- ckpt-info ----
    {
        auto* cmd = app.add_subcommand("ckpt-info", "describe a checkpoint");
        auto path = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        cmd->add_option("--ckpt", *path, "checkpoint path")->required();
        cmd->add_option("--out", *out, "output path (default stdout)");
        cmd->callback([=, &run] {
            run = [=] {
                Ckpt ckpt = load_ckpt(*path);
                CStr info;
                ok_or_die(plab_checkpoint_info_json(ckpt.c, &info.s));
                write_output(*out, info.str());
            };
        });
    }

    // ---- ckpt-diff ----
    {
        auto* cmd = app.add_subcommand("ckpt-diff", "compare two checkpoints");
        auto a = std::make_shared<std::string>();
        auto b = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        cmd->add_option("--first", *a, "first checkpoint")->required();
        cmd->add_option("--second", *b, "second checkpoint")->required();
        cmd->add_option("--out", *out, "output path (default stdout)");
        cmd->callback([=, &run] {
            run = [=] {
                Ckpt ca = load_ckpt(*a);
                Ckpt cb = load_ckpt(*b);
                CStr diff;
                ok_or_die(plab_checkpoint_diff_json(ca.c, cb.c, &diff.s));
                write_output(*out, diff.str());
            };
        });
    }

    // ---- train-base ----
    {
        auto* cmd = app.add_subcommand("train-base", "train a base model on a text task");
        auto config = std::make_shared<std::string>();
        auto task_path = std::make_shared<std::string>();
        auto seed = std::make_shared<int64_t>(-1);
        auto workers = std::make_shared<int>(-1);
        auto out = std::make_shared<std::string>();
        auto curve_out = std::make_shared<std::string>();
        cmd->add_option("--config", *config, "model.* / train.* kv config file");
        cmd->add_option("--task", *task_path, "text task json")->required();
        cmd->add_option("--seed", *seed, "override train.seed");
        cmd->add_option("--workers", *workers, "override train.workers");
        cmd->add_option("--out", *out, "output checkpoint path")->required();
        cmd->add_option("--curve-out", *curve_out, "training curve csv path");
        cmd->callback([=, &run] {
            run = [=] {
                std::string kv = config->empty() ? "" : read_text_file(*config);
                if (*seed >= 0) kv = kv_override(kv, "train.seed", std::to_string(*seed));
                const int w = *workers >= 0 ? *workers : env_workers();
                if (w > 0) kv = kv_override(kv, "train.workers", std::to_string(w));
                TaskH task = load_task(*task_path);
                Ckpt ckpt;
                CStr curve;
                ok_or_die(plab_train_base(kv.c_str(), task.t, &ckpt.c, &curve.s));
                ok_or_die(plab_checkpoint_save(ckpt.c, out->c_str()));
                if (!curve_out->empty()) write_output(*curve_out, curve.str());
                CStr digest;
                ok_or_die(plab_checkpoint_digest(ckpt.c, &digest.s));
                std::cout << "{\"checkpoint\": \"" << *out << "\", \"digest\": \""
                          << digest.str() << "\"}\n";
            };
        });
    }

    // ---- finetune-mllm ----
    {
        auto* cmd = app.add_subcommand("finetune-mllm",
                                       "continue a base checkpoint on a grounded task");
        auto config = std::make_shared<std::string>();
        auto base_path = std::make_shared<std::string>();
        auto task_path = std::make_shared<std::string>();
        auto seed = std::make_shared<int64_t>(-1);
        auto workers = std::make_shared<int>(-1);
        auto out = std::make_shared<std::string>();
        auto curve_out = std::make_shared<std::string>();
        cmd->add_option("--config", *config, "train.* kv config file");
        cmd->add_option("--base", *base_path, "base checkpoint path")->required();
        cmd->add_option("--task", *task_path, "grounded task json")->required();
        cmd->add_option("--seed", *seed, "override train.seed");
        cmd->add_option("--workers", *workers, "override train.workers");
        cmd->add_option("--out", *out, "output checkpoint path")->required();
        cmd->add_option("--curve-out", *curve_out, "training curve csv path");
        cmd->callback([=, &run] {
            run = [=] {
                std::string kv = config->empty() ? "" : read_text_file(*config);
                if (*seed >= 0) kv = kv_override(kv, "train.seed", std::to_string(*seed));
                const int w = *workers >= 0 ? *workers : env_workers();
                if (w > 0) kv = kv_override(kv, "train.workers", std::to_string(w));
                Ckpt base = load_ckpt(*base_path);
                TaskH task = load_task(*task_path);
                Ckpt ckpt;
                CStr curve;
                ok_or_die(plab_finetune(kv.c_str(), base.c, task.t, &ckpt.c, &curve.s));
                ok_or_die(plab_checkpoint_save(ckpt.c, out->c_str()));
                if (!curve_out->empty()) write_output(*curve_out, curve.str());
                CStr digest;
                ok_or_die(plab_checkpoint_digest(ckpt.c, &digest.s));
                std::cout << "{\"checkpoint\": \"" << *out << "\", \"digest\": \""
                          << digest.str() << "\"}\n";
            };
        });
    }

    // ---- eval ----
    {
        auto* cmd = app.add_subcommand("eval", "greedy-decode a split and score exact match");
        auto ckpt_path = std::make_shared<std::string>();
        auto task_path = std::make_shared<std::string>();
        auto split = std::make_shared<std::string>("val");
        auto k = std::make_shared<int>(0);
        auto sub_n = std::make_shared<int>(0);
        auto sub_seed = std::make_shared<uint64_t>(0);
        auto no_records = std::make_shared<bool>(false);
        auto deterministic = std::make_shared<bool>(false);
        auto workers = std::make_shared<int>(-1);
        auto out = std::make_shared<std::string>();
        cmd->add_option("--ckpt", *ckpt_path, "checkpoint path")->required();
        cmd->add_option("--task", *task_path, "task json")->required();
        cmd->add_option("--split", *split, "train, val, or test");
        cmd->add_option("--k", *k, "vision mask cut layer (0 = none, L+1 = no-op)");
        cmd->add_option("--subsample-n", *sub_n, "evaluate a fixed subsample of this size");
        cmd->add_option("--subsample-seed", *sub_seed, "subsample seed");
        cmd->add_flag("--no-records", *no_records, "omit per-example records");
        cmd->add_flag("--deterministic", *deterministic,
                      "blank the timestamp so reruns are byte-identical");
        cmd->add_option("--workers", *workers, "worker threads (0 = hardware)");
        cmd->add_option("--out", *out, "report json path (default stdout)");
        cmd->callback([=, &run] {
            run = [=] {
                Ckpt ckpt = load_ckpt(*ckpt_path);
                TaskH task = load_task(*task_path);
                const int w = *workers >= 0 ? *workers : env_workers();
                CStr rep;
                ok_or_die(plab_eval(ckpt.c, task.t, split->c_str(), *k, *sub_n, *sub_seed,
                                    *no_records ? 0 : 1, w, &rep.s));
                std::string text = rep.str();
                if (*deterministic) {
                    // blank the one volatile field in place, preserving layout
                    const std::string key = "\"timestamp\": \"";
                    const size_t at = text.find(key);
                    if (at != std::string::npos) {
                        const size_t v0 = at + key.size();
                        const size_t v1 = text.find('"', v0);
                        if (v1 != std::string::npos) text.erase(v0, v1 - v0);
                    }
                }
                write_output(*out, text);
            };
        });
    }

    // ---- sweep-mask ----
    {
        auto* cmd = app.add_subcommand("sweep-mask",
                                       "score every vision cut layer k = 1..L+1");
        auto ckpt_path = std::make_shared<std::string>();
        auto task_path = std::make_shared<std::string>();
        auto split = std::make_shared<std::string>("val");
        auto sub_n = std::make_shared<int>(0);
        auto sub_seed = std::make_shared<uint64_t>(0);
        auto workers = std::make_shared<int>(-1);
        auto out = std::make_shared<std::string>();
        auto csv_out = std::make_shared<std::string>();
        cmd->add_option("--ckpt", *ckpt_path, "checkpoint path")->required();
        cmd->add_option("--task", *task_path, "task json")->required();
        cmd->add_option("--split", *split, "train, val, or test");
        cmd->add_option("--subsample-n", *sub_n, "evaluate a fixed subsample of this size");
        cmd->add_option("--subsample-seed", *sub_seed, "subsample seed");
        cmd->add_option("--workers", *workers, "worker threads (0 = hardware)");
        cmd->add_option("--out", *out, "profile json path (default stdout)");
        cmd->add_option("--csv-out", *csv_out, "also write a k,score csv");
        cmd->callback([=, &run] {
            run = [=] {
                Ckpt ckpt = load_ckpt(*ckpt_path);
                TaskH task = load_task(*task_path);
                const int w = *workers >= 0 ? *workers : env_workers();
                CStr prof;
                ok_or_die(plab_sweep_mask(ckpt.c, task.t, split->c_str(), *sub_n, *sub_seed, w,
                                          &prof.s));
                write_output(*out, prof.str());
                if (!csv_out->empty()) {
                    std::string csv = "k,score\n";
                    // named json: at() into a parse() temporary dangles in a range-for
                    const nlohmann::json prof_json = nlohmann::json::parse(prof.str());
                    for (const auto& p : prof_json.at("points")) {
                        char buf[48];
                        std::snprintf(buf, sizeof buf, "%d,%.9g\n", p.at("k").get<int>(),
                                      p.at("score").get<double>());
                        csv += buf;
                    }
                    write_output(*csv_out, csv);
                }
            };
        });
    }

    // ---- detect-plateau ----
    {
        auto* cmd = app.add_subcommand("detect-plateau",
                                       "segment a sweep profile and locate the knee");
        auto profile = std::make_shared<std::string>();
        auto num_layers = std::make_shared<int>(0);
        auto window = std::make_shared<int>(3);
        auto min_len = std::make_shared<int>(2);
        auto tol = std::make_shared<double>(0.1);
        auto out = std::make_shared<std::string>();
        cmd->add_option("--profile", *profile, "sweep profile json path")->required();
        cmd->add_option("--num-layers", *num_layers, "model depth L")->required();
        cmd->add_option("--window", *window, "smoothing window (odd)");
        cmd->add_option("--min-plateau-len", *min_len, "minimum tail points");
        cmd->add_option("--slope-tol-frac", *tol, "tail slope tolerance as a mid-slope fraction");
        cmd->add_option("--out", *out, "segmentation json path (default stdout)");
        cmd->callback([=, &run] {
            run = [=] {
                const std::string text = read_text_file(*profile);
                CStr seg;
                ok_or_die(plab_detect_plateau(text.c_str(), *num_layers, *window, *min_len,
                                              *tol, &seg.s));
                write_output(*out, seg.str());
            };
        });
    }

    // ---- merge ----
    {
        auto* cmd = app.add_subcommand("merge", "interpolate late-layer weights of two models");
        auto base_path = std::make_shared<std::string>();
        auto vlm_path = std::make_shared<std::string>();
        auto k0 = std::make_shared<int>(0);
        auto layer_hi = std::make_shared<int>(0);
        auto lambda1 = std::make_shared<double>(0.0);
        auto lambda2 = std::make_shared<double>(0.0);
        auto subset = std::make_shared<std::string>("attn_qkvo");
        auto out = std::make_shared<std::string>();
        cmd->add_option("--base", *base_path, "base checkpoint")->required();
        cmd->add_option("--vlm", *vlm_path, "fine-tuned checkpoint")->required();
        cmd->add_option("--k0", *k0, "first merged layer")->required();
        cmd->add_option("--layer-hi", *layer_hi, "last merged layer (default L)");
        cmd->add_option("--lambda1", *lambda1, "base weight coefficient")->required();
        cmd->add_option("--lambda2", *lambda2, "fine-tuned weight coefficient")->required();
        cmd->add_option("--subset", *subset, "attn_qkvo or all_backbone")
            ->check(CLI::IsMember({"attn_qkvo", "all_backbone"}));
        cmd->add_option("--out", *out, "merged checkpoint path")->required();
        cmd->callback([=, &run] {
            run = [=] {
                Ckpt base = load_ckpt(*base_path);
                Ckpt vlm = load_ckpt(*vlm_path);
                std::string kv;
                kv += "merge.layer_lo = " + std::to_string(*k0) + "\n";
                if (*layer_hi > 0) kv += "merge.layer_hi = " + std::to_string(*layer_hi) + "\n";
                kv += "merge.lambda1 = " + std::to_string(*lambda1) + "\n";
                kv += "merge.lambda2 = " + std::to_string(*lambda2) + "\n";
                kv += "merge.subset = " + *subset + "\n";
                Ckpt merged;
                ok_or_die(plab_merge(base.c, vlm.c, kv.c_str(), &merged.c));
                ok_or_die(plab_checkpoint_save(merged.c, out->c_str()));
                CStr digest;
                ok_or_die(plab_checkpoint_digest(merged.c, &digest.s));
                std::cout << "{\"checkpoint\": \"" << *out << "\", \"digest\": \""
                          << digest.str() << "\"}\n";
            };
        });
    }

    // ---- plam ----
    {
        auto* cmd = app.add_subcommand(
            "plam", "full pipeline: sweep, knee, grid search, final merge");
        auto base_path = std::make_shared<std::string>();
        auto vlm_path = std::make_shared<std::string>();
        auto task_path = std::make_shared<std::string>();
        auto config = std::make_shared<std::string>();
        auto workers = std::make_shared<int>(-1);
        auto out_ckpt = std::make_shared<std::string>();
        auto out_report = std::make_shared<std::string>();
        auto run_dir = std::make_shared<std::string>();
        cmd->add_option("--base", *base_path, "base checkpoint")->required();
        cmd->add_option("--vlm", *vlm_path, "fine-tuned checkpoint")->required();
        cmd->add_option("--task", *task_path, "task json")->required();
        cmd->add_option("--config", *config, "plam.* kv config file");
        cmd->add_option("--workers", *workers, "override plam.workers");
        cmd->add_option("--out-ckpt", *out_ckpt, "merged checkpoint path");
        cmd->add_option("--out-report", *out_report, "pipeline report json (default stdout)");
        cmd->add_option("--run-dir", *run_dir,
                        "write config.kv, checkpoints/, profiles/, reports/, logs/ here");
        cmd->callback([=, &run] {
            run = [=] {
                if (out_ckpt->empty() && run_dir->empty())
                    die(PLAB_ERR_INVALID_ARGUMENT, "plam needs --out-ckpt or --run-dir");
                std::string kv = config->empty() ? "" : read_text_file(*config);
                const int w = *workers >= 0 ? *workers : env_workers();
                if (w > 0) kv = kv_override(kv, "plam.workers", std::to_string(w));
                Ckpt base = load_ckpt(*base_path);
                Ckpt vlm = load_ckpt(*vlm_path);
                TaskH task = load_task(*task_path);
                Ckpt merged;
                CStr report;
                ok_or_die(plab_plam_pipeline(base.c, vlm.c, task.t, kv.c_str(), &merged.c,
                                             &report.s));
                if (!out_ckpt->empty())
                    ok_or_die(plab_checkpoint_save(merged.c, out_ckpt->c_str()));
                if (!run_dir->empty()) {
                    for (const char* sub : {"", "/checkpoints", "/profiles", "/reports", "/logs"})
                        std::filesystem::create_directories(*run_dir + sub);
                    write_output(*run_dir + "/config.kv", kv);
                    ok_or_die(plab_checkpoint_save(
                        merged.c, (*run_dir + "/checkpoints/merged.ckpt").c_str()));
                    write_output(*run_dir + "/reports/pipeline.json", report.str());
                    const nlohmann::json rep_json = nlohmann::json::parse(report.str());
                    std::string csv = "k,score\n";
                    for (const auto& p : rep_json.at("sweep").at("points")) {
                        char buf[48];
                        std::snprintf(buf, sizeof buf, "%d,%.9g\n", p.at("k").get<int>(),
                                      p.at("score").get<double>());
                        csv += buf;
                    }
                    write_output(*run_dir + "/profiles/sweep.csv", csv);
                    std::string log = "k_star " + rep_json.at("k_star").dump() +
                                      " fallback " + rep_json.at("plateau_fallback").dump() +
                                      " merged " + rep_json.at("merged_digest").get<std::string>() +
                                      "\n";
                    write_output(*run_dir + "/logs/run.log", log);
                }
                write_output(*out_report, report.str());
            };
        });
    }

    // ---- profile-attention ----
    {
        auto* cmd = app.add_subcommand("profile-attention",
                                       "attention-mass profiles over a split");
        auto ckpt_path = std::make_shared<std::string>();
        auto task_path = std::make_shared<std::string>();
        auto split = std::make_shared<std::string>("val");
        auto stage = std::make_shared<std::string>("prefill");
        auto sources = std::make_shared<std::string>("");
        auto k = std::make_shared<int>(0);
        auto workers = std::make_shared<int>(-1);
        auto out = std::make_shared<std::string>();
        cmd->add_option("--ckpt", *ckpt_path, "checkpoint path")->required();
        cmd->add_option("--task", *task_path, "task json")->required();
        cmd->add_option("--split", *split, "train, val, or test");
        cmd->add_option("--stage", *stage, "prefill or decode")
            ->check(CLI::IsMember({"prefill", "decode"}));
        cmd->add_option("--sources", *sources, "comma list: vis, pre_plus_ins, res (default all)");
        cmd->add_option("--k", *k, "vision mask cut layer (0 = none)");
        cmd->add_option("--workers", *workers, "worker threads (0 = hardware)");
        cmd->add_option("--out", *out, "aggregate json path (default stdout)");
        cmd->callback([=, &run] {
            run = [=] {
                Ckpt ckpt = load_ckpt(*ckpt_path);
                TaskH task = load_task(*task_path);
                const int w = *workers >= 0 ? *workers : env_workers();
                CStr agg;
                ok_or_die(plab_mass_profile(ckpt.c, task.t, split->c_str(), stage->c_str(),
                                            sources->c_str(), *k, w, &agg.s));
                write_output(*out, agg.str());
            };
        });
    }

    // ---- late-vision-mass ----
    {
        auto* cmd = app.add_subcommand(
            "late-vision-mass", "mean instruction-to-vision mass over layers k0..L");
        auto ckpt_path = std::make_shared<std::string>();
        auto task_path = std::make_shared<std::string>();
        auto split = std::make_shared<std::string>("val");
        auto layer_lo = std::make_shared<int>(1);
        auto workers = std::make_shared<int>(-1);
        cmd->add_option("--ckpt", *ckpt_path, "checkpoint path")->required();
        cmd->add_option("--task", *task_path, "task json")->required();
        cmd->add_option("--split", *split, "train, val, or test");
        cmd->add_option("--layer-lo", *layer_lo, "first layer of the late window");
        cmd->add_option("--workers", *workers, "worker threads (0 = hardware)");
        cmd->callback([=, &run] {
            run = [=] {
                Ckpt ckpt = load_ckpt(*ckpt_path);
                TaskH task = load_task(*task_path);
                const int w = *workers >= 0 ? *workers : env_workers();
                double mass = 0.0;
                ok_or_die(plab_late_vision_mass(ckpt.c, task.t, split->c_str(), *layer_lo, w,
                                                &mass));
                char buf[64];
                std::snprintf(buf, sizeof buf, "{\"mean_mass\": %.9g}\n", mass);
                std::cout << buf;
            };
        });
    }

    // ---- heatmap ----
    {
        auto* cmd = app.add_subcommand("heatmap",
                                       "render vision-attention for one example as pgm");
        auto ckpt_path = std::make_shared<std::string>();
        auto task_path = std::make_shared<std::string>();
        auto example = std::make_shared<int>(0);
        auto layer = std::make_shared<int>(1);
        auto head = std::make_shared<int>(-1);
        auto cell_px = std::make_shared<int>(32);
        auto out = std::make_shared<std::string>();
        cmd->add_option("--ckpt", *ckpt_path, "checkpoint path")->required();
        cmd->add_option("--task", *task_path, "grounded task json")->required();
        cmd->add_option("--example", *example, "example index");
        cmd->add_option("--layer", *layer, "layer (1-based)");
        cmd->add_option("--head", *head, "head index (-1 = average)");
        cmd->add_option("--cell-px", *cell_px, "pixels per grid cell");
        cmd->add_option("--out", *out, "pgm path (default stdout)");
        cmd->callback([=, &run] {
            run = [=] {
                Ckpt ckpt = load_ckpt(*ckpt_path);
                TaskH task = load_task(*task_path);
                CStr pgm;
                ok_or_die(plab_heatmap_pgm(ckpt.c, task.t, *example, *layer, *head, *cell_px,
                                           &pgm.s));
                write_output(*out, pgm.str());
            };
        });
    }

    // ---- localization ----
    {
        auto* cmd = app.add_subcommand(
            "localization", "rate of attention peaks landing on the queried cell");
        auto ckpt_path = std::make_shared<std::string>();
        auto task_path = std::make_shared<std::string>();
        auto split = std::make_shared<std::string>("val");
        auto layer = std::make_shared<int>(1);
        auto out = std::make_shared<std::string>();
        cmd->add_option("--ckpt", *ckpt_path, "checkpoint path")->required();
        cmd->add_option("--task", *task_path, "grounded task json")->required();
        cmd->add_option("--split", *split, "train, val, or test");
        cmd->add_option("--layer", *layer, "layer (1-based)");
        cmd->add_option("--out", *out, "output path (default stdout)");
        cmd->callback([=, &run] {
            run = [=] {
                Ckpt ckpt = load_ckpt(*ckpt_path);
                TaskH task = load_task(*task_path);
                CStr rep;
                ok_or_die(plab_localization_rate(ckpt.c, task.t, split->c_str(), *layer,
                                                 &rep.s));
                write_output(*out, rep.str());
            };
        });
    }

    // ---- compare ----
    {
        auto* cmd = app.add_subcommand("compare", "tabulate stored eval reports");
        auto entries = std::make_shared<std::vector<std::string>>();
        auto baseline = std::make_shared<int>(0);
        auto out = std::make_shared<std::string>();
        cmd->add_option("--report", *entries, "label=path, repeatable")->required();
        cmd->add_option("--baseline", *baseline, "index of the baseline report");
        cmd->add_option("--out", *out, "comparison json path (default stdout)");
        cmd->callback([=, &run] {
            run = [=] {
                std::vector<std::string> labels, bodies;
                for (const std::string& e : *entries) {
                    const size_t eq = e.find('=');
                    if (eq == std::string::npos || eq == 0)
                        die(PLAB_ERR_INVALID_ARGUMENT, "--report needs label=path: " + e);
                    labels.push_back(e.substr(0, eq));
                    bodies.push_back(read_text_file(e.substr(eq + 1)));
                }
                std::vector<const char*> lptr, bptr;
                for (size_t i = 0; i < labels.size(); ++i) {
                    lptr.push_back(labels[i].c_str());
                    bptr.push_back(bodies[i].c_str());
                }
                CStr cmp_out;
                ok_or_die(plab_compare(lptr.data(), bptr.data(),
                                       static_cast<int>(lptr.size()), *baseline, &cmp_out.s));
                write_output(*out, cmp_out.str());
            };
        });
    }

    CLI11_PARSE(app, argc, argv);
    run();
    return 0;
}

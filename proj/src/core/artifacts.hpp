#pragma once

#include <string>

#include <json.hpp>

#include "analysis.hpp"
#include "evalharness.hpp"
#include "merging.hpp"
#include "train.hpp"

namespace plab {

// float formatting for CSV cells: 9 significant digits, locale-free
std::string fmt_g9(double v);

// RFC 3339 UTC wall-clock stamp; callers zero it out under --deterministic
std::string iso_utc_now();

// escapes a CSV field (quotes it when it holds commas, quotes, or newlines)
std::string csv_escape(const std::string& s);

// final serialization of any report object: 1-space indent plus newline
std::string dump_json(const nlohmann::json& j);

std::string sweep_profile_csv(const SweepProfile& profile);
nlohmann::json sweep_profile_json(const SweepProfile& profile);
SweepProfile sweep_profile_from_json(const std::string& text);

// header fields only (digest, task, split, metric, score, counts); enough to
// re-load a stored report for comparisons
EvalReport eval_report_from_json(const std::string& text);

// kv keys model.*, train.*, plam.*; absent keys take the defaults above
ModelConfig model_config_from_kv(const class KvConfig& kv);
std::string model_config_kv(const ModelConfig& cfg);
TrainConfig train_config_from_kv(const class KvConfig& kv);
PipelineConfig pipeline_config_from_kv(const class KvConfig& kv);

nlohmann::json segmentation_json(const StageSegmentation& seg, bool fallback_used,
                                 int k_star_used);

nlohmann::json eval_report_json(const EvalReport& rep, bool include_records = true);
std::string eval_records_csv(const EvalReport& rep);

nlohmann::json comparison_json(const Comparison& cmp);
std::string comparison_csv(const Comparison& cmp);

nlohmann::json merge_spec_json(const MergeSpec& spec);
// run-config grammar lines (merge.layer_lo = ..., merge.lambda1 = ..., ...)
std::string merge_spec_kv(const MergeSpec& spec);
MergeSpec merge_spec_from_kv(const class KvConfig& kv, int num_layers);

std::string grid_table_csv(const GridSearchResult& grid);

nlohmann::json k0_search_json(const K0Search& search);
std::string k0_table_csv(const K0Search& search);

nlohmann::json pipeline_report_json(const PipelineReport& rep);

std::string mass_profiles_csv(const std::vector<MassProfile>& profiles);
nlohmann::json mass_profiles_json(const std::vector<MassProfile>& profiles);
nlohmann::json aggregate_mass_json(const AggregateMass& agg);

std::string training_curve_csv(const std::vector<CurvePoint>& curve);

std::string heatmap_csv(const Heatmap& map);

// run directory layout: config.kv, checkpoints/, profiles/, reports/, logs/
struct RunDir {
    std::string root;

    std::string checkpoints() const { return root + "/checkpoints"; }
    std::string profiles() const { return root + "/profiles"; }
    std::string reports() const { return root + "/reports"; }
    std::string logs() const { return root + "/logs"; }
};

// creates the directory tree (idempotent)
RunDir make_run_dir(const std::string& root);

}  // namespace plab

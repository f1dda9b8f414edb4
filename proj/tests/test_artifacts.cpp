#include <doctest.h>

#include <filesystem>

#include "artifacts.hpp"
#include "fsio.hpp"
#include "interventions.hpp"
#include "kvconfig.hpp"
#include "plateau.hpp"

using namespace plab;

TEST_CASE("g9 float formatting") {
    CHECK(fmt_g9(0.0) == "0");
    CHECK(fmt_g9(1.0) == "1");
    CHECK(fmt_g9(0.5) == "0.5");
    CHECK(fmt_g9(-2.25) == "-2.25");
    CHECK(fmt_g9(1.0 / 3.0) == "0.333333333");
}

TEST_CASE("csv escaping") {
    CHECK(csv_escape("plain") == "plain");
    CHECK(csv_escape("a,b") == "\"a,b\"");
    CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
    CHECK(csv_escape("two\nlines") == "\"two\nlines\"");
    CHECK(csv_escape("") == "");
}

TEST_CASE("sweep profile serializations") {
    SweepProfile prof;
    prof.points = {{1, 0.25}, {2, 0.5}, {3, 0.75}};
    CHECK(sweep_profile_csv(prof) == "k,score\n1,0.25\n2,0.5\n3,0.75\n");
    const nlohmann::json j = sweep_profile_json(prof);
    REQUIRE(j.at("points").size() == 3);
    CHECK(j.at("points")[1].at("k") == 2);
    CHECK(j.at("points")[1].at("score") == 0.5);
}

TEST_CASE("segmentation json for found and fallback outcomes") {
    std::vector<SweepPoint> pts;
    // flat .30 through k=4, linear rise to .80 at k=9, flat to k=13
    for (int k = 1; k <= 13; ++k) {
        double v = k <= 4 ? 0.30 : (k >= 9 ? 0.80 : 0.30 + 0.1 * (k - 4));
        pts.push_back({k, v});
    }
    SweepProfile prof{pts};
    const StageSegmentation seg = detect_plateau_onset(prof);
    REQUIRE(seg.plateau_found);
    nlohmann::json j = segmentation_json(seg, false, seg.k_star);
    CHECK(j.at("plateau_found") == true);
    CHECK(j.at("k_star_detected") == 9);
    CHECK(j.at("k_star_used") == 9);
    CHECK(j.at("fallback_used") == false);
    CHECK(j.at("curve_smoothed").size() == 13);

    SweepProfile flat;
    for (int k = 1; k <= 13; ++k) flat.points.push_back({k, 0.4});
    const StageSegmentation none = detect_plateau_onset(flat);
    REQUIRE(!none.plateau_found);
    nlohmann::json jf = segmentation_json(none, true, 9);
    CHECK(jf.at("plateau_found") == false);
    CHECK(jf.at("k_star_detected").is_null());
    CHECK(jf.at("fallback_used") == true);
    CHECK(jf.at("k_star_used") == 9);
}

TEST_CASE("eval report serializations") {
    EvalReport rep;
    rep.model_digest = "abc123";
    rep.task_id = "demo";
    rep.split = Split::val;
    rep.score = 0.75;
    rep.n_examples = 2;
    rep.seed = 5;
    rep.mask_cut_layer = 3;
    rep.per_example = {{0, {1, 2}, {1, 2}, true}, {4, {7}, {9}, false}};

    nlohmann::json j = eval_report_json(rep);
    CHECK(j.at("model_digest") == "abc123");
    CHECK(j.at("split") == "val");
    CHECK(j.at("mask_cut_layer") == 3);
    CHECK(j.at("per_example").size() == 2);
    CHECK(j.at("per_example")[1].at("correct") == false);

    nlohmann::json slim = eval_report_json(rep, false);
    CHECK(!slim.contains("per_example"));
    rep.mask_cut_layer.reset();
    CHECK(eval_report_json(rep).at("mask_cut_layer").is_null());

    CHECK(eval_records_csv(rep) ==
          "example_index,predicted,gold,correct\n"
          "0,1 2,1 2,1\n"
          "4,7,9,0\n");
}

TEST_CASE("comparison serializations") {
    Comparison cmp;
    cmp.task_id = "demo";
    cmp.split = Split::test;
    cmp.metric = "exact_match";
    cmp.baseline_label = "base";
    cmp.rows = {{"base", 0.5, 0.0, false}, {"merged", 0.6, 0.1, true}};
    nlohmann::json j = comparison_json(cmp);
    CHECK(j.at("baseline") == "base");
    CHECK(j.at("rows")[1].at("delta") == 0.1);
    const std::string csv = comparison_csv(cmp);
    CHECK(csv.find("label,score,delta,best") == 0);
    CHECK(csv.find("merged,0.6,0.1,1") != std::string::npos);
}

TEST_CASE("merge spec round-trips through the kv grammar") {
    MergeSpec spec;
    spec.layer_lo = 8;
    spec.layer_hi = 12;
    spec.lambda1 = 0.6;
    spec.lambda2 = 0.4;
    spec.subset = k_subset_attn;
    const std::string text = merge_spec_kv(spec);
    const KvConfig kv = KvConfig::parse_string(text);
    const MergeSpec back = merge_spec_from_kv(kv, 12);
    CHECK(back.layer_lo == spec.layer_lo);
    CHECK(back.layer_hi == spec.layer_hi);
    CHECK(back.lambda1 == spec.lambda1);
    CHECK(back.lambda2 == spec.lambda2);
    CHECK(back.subset == spec.subset);

    // defaults fill in layer_hi and subset
    const KvConfig partial = KvConfig::parse_string(
        "merge.layer_lo = 5\nmerge.lambda1 = 1.0\nmerge.lambda2 = 0.0\n");
    const MergeSpec filled = merge_spec_from_kv(partial, 12);
    CHECK(filled.layer_hi == 12);
    CHECK(filled.subset == k_subset_attn);

    const KvConfig bad = KvConfig::parse_string(
        "merge.layer_lo = 0\nmerge.lambda1 = 1.0\nmerge.lambda2 = 0.0\n");
    CHECK_THROWS_AS(merge_spec_from_kv(bad, 12), Error);

    const nlohmann::json j = merge_spec_json(spec);
    CHECK(j.at("layer_lo") == 8);
    CHECK(j.at("subset") == k_subset_attn);
}

TEST_CASE("grid and k0 tables") {
    GridSearchResult grid;
    GridCell ok_cell;
    ok_cell.spec = {2, 4, 0.5, 0.5, k_subset_attn};
    ok_cell.score = 0.625;
    ok_cell.ok = true;
    GridCell bad_cell;
    bad_cell.spec = {3, 4, 1.0, 0.0, k_subset_attn};
    bad_cell.ok = false;
    bad_cell.error = "eval failed, with a comma";
    grid.table = {ok_cell, bad_cell};
    grid.best = ok_cell.spec;
    grid.best_score = 0.625;
    const std::string csv = grid_table_csv(grid);
    CHECK(csv.find("k0,lambda1,lambda2,subset,score,ok,error") == 0);
    CHECK(csv.find("2,0.5,0.5,attn_qkvo,0.625,1,") != std::string::npos);
    CHECK(csv.find("\"eval failed, with a comma\"") != std::string::npos);

    K0Search search;
    search.k0 = 6;
    search.score = 0.5;
    search.table = {{5, 0.4, true, ""}, {6, 0.5, true, ""}, {7, 0.0, false, "boom"}};
    const nlohmann::json j = k0_search_json(search);
    CHECK(j.at("k0") == 6);
    CHECK(j.at("table").size() == 3);
    CHECK(j.at("table")[2].at("ok") == false);
    const std::string kcsv = k0_table_csv(search);
    CHECK(kcsv.find("k0,score,ok,error") == 0);
    CHECK(kcsv.find("7,0,0,boom") != std::string::npos);
}

TEST_CASE("mass profile serializations") {
    MassProfile p;
    p.stage = "decode";
    p.target = "answer";
    p.source = MassSource::vis;
    p.per_layer = {0.5, 0.25};
    p.per_step = {{0.75, 0.25}, {0.25, 0.25}};
    const std::string csv = mass_profiles_csv({p});
    CHECK(csv.find("layer,source,value,step") == 0);
    CHECK(csv.find("1,vis,0.5,\n") != std::string::npos);   // mean row, blank step
    CHECK(csv.find("1,vis,0.75,0\n") != std::string::npos); // step row
    const nlohmann::json j = mass_profiles_json({p});
    CHECK(j.at("profiles")[0].at("source") == "vis");
    CHECK(j.at("profiles")[0].at("per_layer")[1] == 0.25);

    AggregateMass agg;
    agg.stage = "decode";
    agg.over_all = {p};
    agg.over_correct = {};
    agg.n_all = 4;
    agg.n_correct = 0;
    const nlohmann::json ja = aggregate_mass_json(agg);
    CHECK(ja.at("n_all") == 4);
    CHECK(ja.at("stage") == "decode");
    CHECK(ja.at("over_all").size() == 1);
    CHECK(ja.at("over_correct").empty());
}

TEST_CASE("training curve and heatmap csv") {
    std::vector<CurvePoint> curve = {{0, Split::train, 2.5, 0.1}, {10, Split::val, 1.5, 0.5}};
    CHECK(training_curve_csv(curve) ==
          "step,split,loss,accuracy\n0,train,2.5,0.1\n10,val,1.5,0.5\n");

    Heatmap map;
    map.grid_size = 2;
    map.raw = Tensor({2, 2}, {0.1f, 0.2f, 0.3f, 0.4f});
    map.normalized = map.raw;
    const std::string csv = heatmap_csv(map);
    CHECK(csv.find("0.1") != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
}

TEST_CASE("json dumps are stable and newline-terminated") {
    nlohmann::json j = {{"b", 1}, {"a", 2}};
    const std::string s = dump_json(j);
    CHECK(s.back() == '\n');
    CHECK(dump_json(j) == s);
    CHECK(s.find("\"a\"") < s.find("\"b\""));  // object keys come out sorted
}

TEST_CASE("run directory layout") {
    const std::string root = "artifacts_test_run";
    std::filesystem::remove_all(root);
    const RunDir dir = make_run_dir(root);
    CHECK(std::filesystem::is_directory(dir.checkpoints()));
    CHECK(std::filesystem::is_directory(dir.profiles()));
    CHECK(std::filesystem::is_directory(dir.reports()));
    CHECK(std::filesystem::is_directory(dir.logs()));
    make_run_dir(root);  // idempotent
    std::filesystem::remove_all(root);
}

TEST_CASE("timestamps look like rfc3339 utc") {
    const std::string ts = iso_utc_now();
    REQUIRE(ts.size() == 20);
    CHECK(ts[4] == '-');
    CHECK(ts[10] == 'T');
    CHECK(ts.back() == 'Z');
}

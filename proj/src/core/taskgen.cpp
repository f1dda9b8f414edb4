#include "taskgen.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "fsio.hpp"

namespace plab {

using nlohmann::json;

const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "unknown";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    fail(errc::format, "unknown split: " + s);
}

std::vector<size_t> Task::split_indices(Split s) const {
    std::vector<size_t> idx;
    for (size_t i = 0; i < examples.size(); ++i)
        if (examples[i].split == s) idx.push_back(i);
    return idx;
}

void Task::validate() const {
    check(kind == "text" || kind == "grounded", errc::format, "unknown task kind: " + kind);
    check(!examples.empty(), errc::invalid_argument, "task has no examples");
    for (const auto& ex : examples) {
        check(0 <= ex.target_start && ex.target_start < ex.target_end &&
                  ex.target_end == static_cast<int>(ex.tokens.size()),
              errc::format, "bad target span");
        check(ex.n_pre >= 0 && ex.n_ins >= 0 && ex.n_pre + ex.n_ins == ex.target_start,
              errc::format, "prompt spans must cover exactly the non-target tokens");
        for (int t : ex.tokens) check(t >= 0, errc::format, "negative token id");
        if (kind == "text") {
            check(ex.n_vis() == 0, errc::format, "text example carries vision features");
        } else {
            check(ex.n_vis() > 0, errc::format, "grounded example lacks vision features");
            check(ex.vision.cols() == vision_feature_dim, errc::format,
                  "vision feature width disagrees with task");
        }
    }
    for (Split s : {Split::train, Split::val, Split::test})
        check(!split_indices(s).empty(), errc::invalid_argument,
              std::string("empty split: ") + to_string(s));
}

namespace {

struct SplitPlan {
    int n_train, n_val, n_test;
};

SplitPlan plan_splits(int n) {
    check(n >= 10, errc::invalid_argument, "need at least 10 examples for 80/10/10 splits");
    SplitPlan p;
    p.n_val = std::max(1, n / 10);
    p.n_test = std::max(1, n / 10);
    p.n_train = n - p.n_val - p.n_test;
    return p;
}

Split split_of(int i, const SplitPlan& p) {
    if (i < p.n_train) return Split::train;
    if (i < p.n_train + p.n_val) return Split::val;
    return Split::test;
}

uint64_t example_fingerprint(const std::vector<int>& ints) {
    return fnv1a(ints.data(), ints.size() * sizeof(int));
}

}  // namespace

Task gen_text_task(uint64_t seed, int n, const std::string& skill) {
    Task task;
    task.kind = "text";
    task.skill = skill;
    task.task_id = "text-" + skill + "-s" + std::to_string(seed) + "-n" + std::to_string(n);
    SplitPlan plan = plan_splits(n);
    Rng rng = Rng(seed).fork(fnv1a(skill.data(), skill.size()));

    std::vector<std::vector<int>> pool;
    if (skill == "modular-sum") {
        for (int a = 0; a < 10; ++a)
            for (int b = 0; b < 10; ++b) pool.push_back({a, b});
    } else if (skill == "copy-with-transform") {
        for (int a = 0; a < 10; ++a)
            for (int b = 0; b < 10; ++b)
                for (int c = 0; c < 10; ++c) pool.push_back({a, b, c});
    } else {
        fail(errc::invalid_argument, "unknown text skill: " + skill);
    }
    check(n <= static_cast<int>(pool.size()), errc::invalid_argument,
          "n exceeds the distinct example pool for skill " + skill);

    // seeded Fisher-Yates, then the first n entries
    for (size_t i = pool.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.uniform_int(i));
        std::swap(pool[i - 1], pool[j]);
    }

    for (int i = 0; i < n; ++i) {
        const std::vector<int>& digits = pool[static_cast<size_t>(i)];
        TaskExample ex;
        ex.tokens.push_back(TOK_BOS);
        for (int d : digits) ex.tokens.push_back(TOK_DIGIT0 + d);
        ex.tokens.push_back(TOK_SEP);
        if (skill == "modular-sum") {
            ex.tokens.push_back(TOK_DIGIT0 + (digits[0] + digits[1]) % 10);
        } else {
            for (int d : digits) ex.tokens.push_back(TOK_DIGIT0 + (d + 1) % 10);
        }
        ex.target_start = static_cast<int>(digits.size()) + 2;
        ex.target_end = static_cast<int>(ex.tokens.size());
        ex.n_pre = ex.target_start;
        ex.n_ins = 0;
        ex.split = split_of(i, plan);
        task.examples.push_back(std::move(ex));
    }
    task.validate();
    return task;
}

Task gen_grounded_task(uint64_t seed, int n, int grid_size, int n_attributes,
                       int vision_feature_dim) {
    const int n_cells = grid_size * grid_size;
    check(grid_size >= 2, errc::invalid_argument, "grid_size must be >= 2");
    check(n_attributes >= 2, errc::invalid_argument,
          "n_attributes < 2 makes the answer inferable without the image");
    check(n_attributes <= 10, errc::invalid_argument, "attributes must map onto digit tokens");
    check(vision_feature_dim >= n_cells + n_attributes, errc::invalid_argument,
          "vision_feature_dim too small for onehot(cell) ++ onehot(attribute)");

    Task task;
    task.kind = "grounded";
    task.skill = "grid-attr-qa";
    task.grid_size = grid_size;
    task.n_attributes = n_attributes;
    task.vision_feature_dim = vision_feature_dim;
    task.task_id = "grounded-grid-attr-qa-s" + std::to_string(seed) + "-n" + std::to_string(n) +
                   "-g" + std::to_string(grid_size) + "a" + std::to_string(n_attributes);
    SplitPlan plan = plan_splits(n);
    Rng rng = Rng(seed).fork(0x67726964);

    std::set<uint64_t> seen;
    for (int i = 0; i < n; ++i) {
        // balance answers within the example stream so no split has a
        // dominant class
        const int answer = i % n_attributes;
        TaskExample ex;
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            std::vector<int> attrs(static_cast<size_t>(n_cells));
            for (auto& a : attrs) a = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n_attributes)));
            const int cell = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n_cells)));
            attrs[static_cast<size_t>(cell)] = answer;

            std::vector<int> fp = attrs;
            fp.push_back(cell);
            if (!seen.insert(example_fingerprint(fp)).second) continue;

            ex.vision = Tensor::zeros({n_cells, vision_feature_dim});
            for (int c = 0; c < n_cells; ++c) {
                ex.vision.at(c, c) = 1.0f;
                ex.vision.at(c, n_cells + attrs[static_cast<size_t>(c)]) = 1.0f;
            }
            ex.tokens = {TOK_BOS, TOK_ASK, TOK_CELL0 + cell, TOK_DIGIT0 + answer};
            ex.target_start = 3;
            ex.target_end = 4;
            ex.n_pre = 1;
            ex.n_ins = 2;
            ex.split = split_of(i, plan);
            placed = true;
        }
        check(placed, errc::invalid_argument, "could not generate enough distinct grounded examples");
        task.examples.push_back(std::move(ex));
    }
    task.validate();
    return task;
}

namespace {

json example_to_json(const TaskExample& ex) {
    json j;
    j["tokens"] = ex.tokens;
    j["target_start"] = ex.target_start;
    j["target_end"] = ex.target_end;
    j["n_pre"] = ex.n_pre;
    j["n_ins"] = ex.n_ins;
    j["split"] = to_string(ex.split);
    if (ex.n_vis() > 0) {
        json rows = json::array();
        for (int r = 0; r < ex.vision.rows(); ++r) {
            json row = json::array();
            for (int c = 0; c < ex.vision.cols(); ++c) row.push_back(ex.vision.at(r, c));
            rows.push_back(std::move(row));
        }
        j["vision"] = std::move(rows);
    }
    return j;
}

TaskExample example_from_json(const json& j) {
    TaskExample ex;
    ex.tokens = j.at("tokens").get<std::vector<int>>();
    ex.target_start = j.at("target_start").get<int>();
    ex.target_end = j.at("target_end").get<int>();
    ex.n_pre = j.at("n_pre").get<int>();
    ex.n_ins = j.at("n_ins").get<int>();
    ex.split = split_from_string(j.at("split").get<std::string>());
    if (j.contains("vision")) {
        const auto& rows = j.at("vision");
        check(rows.is_array() && !rows.empty(), errc::format, "bad vision block");
        const int r = static_cast<int>(rows.size());
        const int c = static_cast<int>(rows.at(0).size());
        ex.vision = Tensor::zeros({r, c});
        for (int i = 0; i < r; ++i) {
            const auto& row = rows.at(static_cast<size_t>(i));
            check(static_cast<int>(row.size()) == c, errc::format, "ragged vision block");
            for (int k = 0; k < c; ++k) ex.vision.at(i, k) = row.at(static_cast<size_t>(k)).get<float>();
        }
    }
    return ex;
}

}  // namespace

void save_task(const std::string& path, const Task& task) {
    task.validate();
    json j;
    j["task_id"] = task.task_id;
    j["kind"] = task.kind;
    j["skill"] = task.skill;
    j["grid_size"] = task.grid_size;
    j["n_attributes"] = task.n_attributes;
    j["vision_feature_dim"] = task.vision_feature_dim;
    json exs = json::array();
    for (const auto& ex : task.examples) exs.push_back(example_to_json(ex));
    j["examples"] = std::move(exs);

    write_file_atomic(path, j.dump(1) + "\n");
}

Task load_task(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), errc::io, "cannot open task: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail(errc::format, std::string("bad task JSON: ") + e.what());
    }
    Task task;
    try {
        task.task_id = j.at("task_id").get<std::string>();
        task.kind = j.at("kind").get<std::string>();
        task.skill = j.at("skill").get<std::string>();
        task.grid_size = j.at("grid_size").get<int>();
        task.n_attributes = j.at("n_attributes").get<int>();
        task.vision_feature_dim = j.at("vision_feature_dim").get<int>();
        for (const auto& je : j.at("examples")) task.examples.push_back(example_from_json(je));
    } catch (const json::exception& e) {
        fail(errc::format, std::string("bad task JSON: ") + e.what());
    }
    task.validate();
    return task;
}

}  // namespace plab

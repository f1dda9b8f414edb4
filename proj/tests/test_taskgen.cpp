#include <doctest.h>

#include <cstdio>
#include <map>
#include <set>

#include "taskgen.hpp"

using namespace plab;

namespace {

bool tasks_equal(const Task& a, const Task& b) {
    if (a.task_id != b.task_id || a.kind != b.kind || a.skill != b.skill) return false;
    if (a.grid_size != b.grid_size || a.n_attributes != b.n_attributes ||
        a.vision_feature_dim != b.vision_feature_dim)
        return false;
    if (a.examples.size() != b.examples.size()) return false;
    for (size_t i = 0; i < a.examples.size(); ++i) {
        const auto& x = a.examples[i];
        const auto& y = b.examples[i];
        if (x.tokens != y.tokens || x.target_start != y.target_start ||
            x.target_end != y.target_end || x.n_pre != y.n_pre || x.n_ins != y.n_ins ||
            x.split != y.split)
            return false;
        if (x.vision.shape != y.vision.shape || x.vision.data != y.vision.data) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("task generation is deterministic for a fixed seed") {
    CHECK(tasks_equal(gen_text_task(7, 100), gen_text_task(7, 100)));
    CHECK(tasks_equal(gen_grounded_task(7, 100), gen_grounded_task(7, 100)));
    CHECK(!tasks_equal(gen_grounded_task(7, 100), gen_grounded_task(8, 100)));
}

TEST_CASE("modular-sum follows the rule, including (3, 4) -> 7") {
    Task task = gen_text_task(7, 100, "modular-sum");
    bool saw_3_4 = false;
    for (const auto& ex : task.examples) {
        REQUIRE(ex.tokens.size() == 5);
        CHECK(ex.tokens[0] == TOK_BOS);
        CHECK(ex.tokens[3] == TOK_SEP);
        const int a = ex.tokens[1], b = ex.tokens[2];
        CHECK(ex.tokens[4] == (a + b) % 10);
        if (a == 3 && b == 4) {
            saw_3_4 = true;
            CHECK(ex.tokens[4] == 7);
        }
    }
    CHECK(saw_3_4);  // n = 100 draws the whole pool
}

TEST_CASE("copy-with-transform shifts every digit by one") {
    Task task = gen_text_task(3, 200, "copy-with-transform");
    for (const auto& ex : task.examples) {
        REQUIRE(ex.tokens.size() == 8);
        CHECK(ex.tokens[0] == TOK_BOS);
        CHECK(ex.tokens[4] == TOK_SEP);
        for (int i = 0; i < 3; ++i) CHECK(ex.tokens[5 + i] == (ex.tokens[1 + i] + 1) % 10);
        CHECK(ex.target_start == 5);
        CHECK(ex.target_end == 8);
    }
}

TEST_CASE("splits are disjoint and examples are unique") {
    Task text = gen_text_task(11, 100);
    std::set<std::pair<int, int>> pairs;
    for (const auto& ex : text.examples) pairs.insert({ex.tokens[1], ex.tokens[2]});
    CHECK(pairs.size() == text.examples.size());

    Task grounded = gen_grounded_task(11, 300);
    std::set<std::vector<float>> images;
    for (const auto& ex : grounded.examples) {
        std::vector<float> key = ex.vision.data;
        key.push_back(static_cast<float>(ex.tokens[2]));
        images.insert(std::move(key));
    }
    CHECK(images.size() == grounded.examples.size());

    auto tr = grounded.split_indices(Split::train);
    auto va = grounded.split_indices(Split::val);
    auto te = grounded.split_indices(Split::test);
    CHECK(tr.size() + va.size() + te.size() == grounded.examples.size());
    CHECK(tr.size() == 240);
    CHECK(va.size() == 30);
    CHECK(te.size() == 30);
}

TEST_CASE("grounded features encode the grid and answers stay balanced") {
    const int gs = 4, na = 10, vdim = 32;
    Task task = gen_grounded_task(21, 400, gs, na, vdim);
    const int n_cells = gs * gs;
    for (const auto& ex : task.examples) {
        REQUIRE(ex.vision.rows() == n_cells);
        REQUIRE(ex.vision.cols() == vdim);
        REQUIRE(ex.tokens.size() == 4);
        CHECK(ex.tokens[0] == TOK_BOS);
        CHECK(ex.tokens[1] == TOK_ASK);
        const int cell = ex.tokens[2] - TOK_CELL0;
        REQUIRE(cell >= 0);
        REQUIRE(cell < n_cells);
        const int answer = ex.tokens[3];
        for (int c = 0; c < n_cells; ++c) {
            int attr = -1;
            for (int j = 0; j < vdim; ++j) {
                const float v = ex.vision.at(c, j);
                REQUIRE((v == 0.0f || v == 1.0f));
                if (j < n_cells) {
                    CHECK(v == (j == c ? 1.0f : 0.0f));
                } else if (j < n_cells + na && v == 1.0f) {
                    CHECK(attr == -1);  // exactly one attribute bit
                    attr = j - n_cells;
                } else if (j >= n_cells + na) {
                    CHECK(v == 0.0f);  // padding
                }
            }
            REQUIRE(attr >= 0);
            if (c == cell) CHECK(attr == answer);
        }
    }
    // per-split answer histograms stay within one of uniform
    for (Split s : {Split::train, Split::val, Split::test}) {
        std::map<int, int> hist;
        auto idx = task.split_indices(s);
        for (size_t i : idx) hist[task.examples[i].tokens[3]]++;
        const double expect = static_cast<double>(idx.size()) / na;
        for (const auto& [answer, count] : hist) CHECK(std::abs(count - expect) <= 1.0);
    }
}

TEST_CASE("text-only majority predictor stays at chance on grounded data") {
    Task task = gen_grounded_task(5, 500);
    std::map<int, int> train_hist;
    for (size_t i : task.split_indices(Split::train)) train_hist[task.examples[i].tokens[3]]++;
    int majority = -1, best = -1;
    for (const auto& [ans, count] : train_hist) {
        if (count > best) {
            best = count;
            majority = ans;
        }
    }
    auto test_idx = task.split_indices(Split::test);
    int hits = 0;
    for (size_t i : test_idx)
        if (task.examples[i].tokens[3] == majority) ++hits;
    const double acc = static_cast<double>(hits) / static_cast<double>(test_idx.size());
    CHECK(acc <= 1.0 / 10 + 0.05);
}

TEST_CASE("generator rejects degenerate parameters") {
    CHECK_THROWS_AS(gen_text_task(1, 101, "modular-sum"), Error);      // pool exhausted
    CHECK_THROWS_AS(gen_text_task(1, 100, "unknown-skill"), Error);
    CHECK_THROWS_AS(gen_text_task(1, 5), Error);                       // too few for splits
    CHECK_THROWS_AS(gen_grounded_task(1, 100, 4, 1, 32), Error);       // answer inferable
    CHECK_THROWS_AS(gen_grounded_task(1, 100, 4, 11, 32), Error);      // beyond digit tokens
    CHECK_THROWS_AS(gen_grounded_task(1, 100, 4, 10, 20), Error);      // feature dim too small
    CHECK_THROWS_AS(gen_grounded_task(1, 100, 1, 10, 32), Error);      // degenerate grid
}

TEST_CASE("task JSON round trips exactly") {
    const std::string path = "/tmp/plab_test_task.json";
    Task text = gen_text_task(9, 60);
    save_task(path, text);
    CHECK(tasks_equal(load_task(path), text));
    Task grounded = gen_grounded_task(9, 50);
    save_task(path, grounded);
    CHECK(tasks_equal(load_task(path), grounded));
    std::remove(path.c_str());
}

TEST_CASE("full_position accounts for the vision span") {
    Task task = gen_grounded_task(2, 20);
    const auto& ex = task.examples[0];
    CHECK(ex.n_vis() == 16);
    CHECK(ex.full_position(0) == 0);    // BOS before the image
    CHECK(ex.full_position(1) == 17);   // ASK after 16 vision rows
    CHECK(ex.full_position(3) == 19);   // answer slot
    CHECK(ex.full_length() == 20);
}

#include <doctest.h>

#include <algorithm>

#include "ckpt_io.hpp"
#include "evalharness.hpp"

using namespace plab;

namespace {

ModelConfig echo_cfg() {
    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.hidden_dim = 16;
    cfg.num_heads = 2;
    cfg.vocab_size = 14;
    cfg.max_seq_len = 8;
    cfg.vision_feature_dim = 4;
    cfg.ffn_dim = 16;
    return cfg;
}

// [BOS d d]: the answer repeats the instruction digit
Task echo_task() {
    Task t;
    t.task_id = "echo-v1";
    t.kind = "text";
    t.skill = "echo";
    for (int d = 0; d < 10; ++d) {
        TaskExample ex;
        ex.tokens = {TOK_BOS, d, d};
        ex.target_start = 2;
        ex.target_end = 3;
        ex.n_pre = 1;
        ex.n_ins = 1;
        ex.split = d < 6 ? Split::train : (d < 8 ? Split::val : Split::test);
        t.examples.push_back(std::move(ex));
    }
    t.validate();
    return t;
}

// every block contributes zero, the residual stream stays the token one-hot,
// and the unembedding reads it back, so the model echoes its last input token
Checkpoint echo_oracle_ckpt() {
    const ModelConfig cfg = echo_cfg();
    Checkpoint c = Checkpoint::init_random(cfg, CkptKind::base_lm, 7);
    c.tensors["embed.pos"] = Tensor::zeros({cfg.max_seq_len, cfg.hidden_dim});
    Tensor tok = Tensor::zeros({cfg.vocab_size, cfg.hidden_dim});
    Tensor unembed = Tensor::zeros({cfg.hidden_dim, cfg.vocab_size});
    for (int i = 0; i < cfg.vocab_size; ++i) {
        tok.at(i, i) = 1.0f;
        unembed.at(i, i) = 1.0f;
    }
    c.tensors["embed.tok"] = std::move(tok);
    c.tensors["unembed"] = std::move(unembed);
    for (int l = 1; l <= cfg.num_layers; ++l) {
        c.tensors[layer_param_name(l, "attn.o")] =
            Tensor::zeros({cfg.hidden_dim, cfg.hidden_dim});
        c.tensors[layer_param_name(l, "ffn.down")] =
            Tensor::zeros({cfg.ffn_dim, cfg.hidden_dim});
    }
    c.validate();
    return c;
}

ModelConfig grounded_cfg() {
    ModelConfig cfg;
    cfg.num_layers = 3;
    cfg.hidden_dim = 16;
    cfg.num_heads = 2;
    cfg.vocab_size = 32;
    cfg.max_seq_len = 24;
    cfg.vision_feature_dim = 8;
    cfg.ffn_dim = 32;
    return cfg;
}

}  // namespace

TEST_CASE("a constructed echo model scores a perfect exact match") {
    const Checkpoint ckpt = echo_oracle_ckpt();
    const Task task = echo_task();
    for (Split s : {Split::train, Split::val, Split::test}) {
        const EvalReport rep = evaluate(ckpt, task, s);
        CHECK(rep.score == 1.0);
        CHECK(rep.n_examples == static_cast<int>(task.split_indices(s).size()));
        for (const auto& r : rep.per_example) {
            CHECK(r.correct);
            CHECK(r.predicted == r.gold);
        }
    }
}

TEST_CASE("uniform logits collapse greedy decoding onto token zero") {
    ModelConfig cfg = grounded_cfg();
    cfg.vision_feature_dim = 16;  // onehot(4 cells) ++ onehot(10 attributes)
    Checkpoint ckpt = Checkpoint::init_random(cfg, CkptKind::mllm, 11);
    ckpt.tensors["unembed"] = Tensor::zeros({cfg.hidden_dim, cfg.vocab_size});
    const Task task = gen_grounded_task(12, 300, 2, 10, 16);

    const EvalReport rep = evaluate(ckpt, task, Split::val);
    int zero_answers = 0;
    for (const auto& r : rep.per_example) {
        REQUIRE(r.predicted.size() == 1);
        CHECK(r.predicted[0] == 0);  // argmax tie breaks toward the lowest id
        zero_answers += r.gold == std::vector<int>{0} ? 1 : 0;
    }
    // answers are balanced within the split, so token 0 is gold exactly n/10 times
    CHECK(rep.n_examples == 30);
    CHECK(zero_answers == 3);
    CHECK(rep.score == 3.0 / 30.0);
}

TEST_CASE("evaluation is deterministic and worker-count invariant") {
    const Checkpoint ckpt = Checkpoint::init_random(grounded_cfg(), CkptKind::mllm, 13);
    const Task task = gen_grounded_task(14, 60, 2, 4, 8);
    const EvalReport a = evaluate(ckpt, task, Split::val, std::nullopt, 1);
    const EvalReport b = evaluate(ckpt, task, Split::val, std::nullopt, 4);
    const EvalReport c = evaluate(ckpt, task, Split::val, std::nullopt, 4);
    CHECK(a.score == b.score);
    CHECK(b.score == c.score);
    REQUIRE(a.per_example.size() == b.per_example.size());
    for (size_t i = 0; i < a.per_example.size(); ++i) {
        CHECK(a.per_example[i].example_index == b.per_example[i].example_index);
        CHECK(a.per_example[i].predicted == b.per_example[i].predicted);
        CHECK(a.per_example[i].correct == b.per_example[i].correct);
    }
}

TEST_CASE("report carries the model digest and the mask layer") {
    Checkpoint ckpt = Checkpoint::init_random(grounded_cfg(), CkptKind::mllm, 15);
    const Task task = gen_grounded_task(16, 40, 2, 4, 8);
    const EvalReport plain = evaluate(ckpt, task, Split::val);
    CHECK(plain.model_digest == checkpoint_digest(ckpt));
    CHECK(!plain.mask_cut_layer.has_value());
    CHECK(plain.metric == "exact_match");

    const EvalReport masked = evaluate(ckpt, task, Split::val, MaskSpec{2});
    REQUIRE(masked.mask_cut_layer.has_value());
    CHECK(*masked.mask_cut_layer == 2);

    ckpt.tensors["unembed"].data[0] += 1.0f;
    CHECK(evaluate(ckpt, task, Split::val).model_digest != plain.model_digest);
}

TEST_CASE("index subsets restrict and order the evaluation") {
    const Checkpoint ckpt = Checkpoint::init_random(grounded_cfg(), CkptKind::mllm, 17);
    const Task task = gen_grounded_task(18, 60, 2, 4, 8);
    const auto val = task.split_indices(Split::val);
    REQUIRE(val.size() >= 4);
    std::vector<size_t> pick = {val[3], val[0], val[2]};  // deliberately unsorted
    const EvalReport rep = evaluate(ckpt, task, Split::val, std::nullopt, 0, &pick);
    REQUIRE(rep.n_examples == 3);
    CHECK(rep.per_example[0].example_index == static_cast<int>(val[0]));
    CHECK(rep.per_example[1].example_index == static_cast<int>(val[2]));
    CHECK(rep.per_example[2].example_index == static_cast<int>(val[3]));

    const EvalReport slim = evaluate(ckpt, task, Split::val, std::nullopt, 0, &pick, false);
    CHECK(slim.per_example.empty());
    CHECK(slim.score == rep.score);
}

TEST_CASE("evaluate rejects bad inputs") {
    const Checkpoint ckpt = Checkpoint::init_random(grounded_cfg(), CkptKind::mllm, 19);
    const Task task = gen_grounded_task(20, 40, 2, 4, 8);

    std::vector<size_t> wrong_split = {task.split_indices(Split::train)[0]};
    CHECK_THROWS_AS(evaluate(ckpt, task, Split::val, std::nullopt, 0, &wrong_split), Error);
    std::vector<size_t> oob = {task.examples.size()};
    CHECK_THROWS_AS(evaluate(ckpt, task, Split::val, std::nullopt, 0, &oob), Error);
    std::vector<size_t> none;
    CHECK_THROWS_AS(evaluate(ckpt, task, Split::val, std::nullopt, 0, &none), Error);

    // model whose vision width disagrees with the task
    ModelConfig narrow = grounded_cfg();
    narrow.vision_feature_dim = 6;
    const Checkpoint bad_vis = Checkpoint::init_random(narrow, CkptKind::mllm, 21);
    CHECK_THROWS_AS(evaluate(bad_vis, task, Split::val), Error);

    // model whose vocab cannot hold the task's cell tokens
    ModelConfig tiny_vocab = grounded_cfg();
    tiny_vocab.vocab_size = 13;
    const Checkpoint bad_vocab = Checkpoint::init_random(tiny_vocab, CkptKind::mllm, 22);
    CHECK_THROWS_AS(evaluate(bad_vocab, task, Split::val), Error);
}

TEST_CASE("subsample indices are a fixed sorted subset") {
    const Task task = gen_grounded_task(23, 200, 2, 4, 8);
    const auto val = task.split_indices(Split::val);
    const auto small = subsample_indices(task, Split::val, 8, 99);
    REQUIRE(small.size() == 8);
    CHECK(std::is_sorted(small.begin(), small.end()));
    CHECK(std::adjacent_find(small.begin(), small.end()) == small.end());
    for (size_t i : small) CHECK(std::find(val.begin(), val.end(), i) != val.end());

    CHECK(subsample_indices(task, Split::val, 8, 99) == small);
    CHECK(subsample_indices(task, Split::val, 8, 100) != small);
    CHECK(subsample_indices(task, Split::val, 10000, 99) == val);
    CHECK_THROWS_AS(subsample_indices(task, Split::val, 0, 99), Error);
}

TEST_CASE("comparisons take deltas against the chosen baseline") {
    auto rep = [](double score) {
        EvalReport r;
        r.task_id = "t";
        r.split = Split::val;
        r.score = score;
        r.n_examples = 10;
        return r;
    };
    const Comparison cmp =
        compare({{"base", rep(0.5)}, {"vlm", rep(0.6)}, {"merged", rep(0.4)}}, 0);
    CHECK(cmp.baseline_label == "base");
    CHECK(cmp.rows[0].delta == 0.0);
    CHECK(cmp.rows[1].delta == doctest::Approx(0.1));
    CHECK(cmp.rows[2].delta == doctest::Approx(-0.1));
    CHECK(!cmp.rows[0].best);
    CHECK(cmp.rows[1].best);
    CHECK(!cmp.rows[2].best);

    // ties for the top score all get the best flag
    const Comparison tie = compare({{"a", rep(0.7)}, {"b", rep(0.7)}}, 1);
    CHECK(tie.rows[0].best);
    CHECK(tie.rows[1].best);
    CHECK(tie.baseline_label == "b");

    EvalReport other = rep(0.5);
    other.task_id = "u";
    CHECK_THROWS_AS(compare({{"a", rep(0.5)}, {"b", other}}, 0), Error);
    EvalReport other_split = rep(0.5);
    other_split.split = Split::test;
    CHECK_THROWS_AS(compare({{"a", rep(0.5)}, {"b", other_split}}, 0), Error);
    EvalReport other_metric = rep(0.5);
    other_metric.metric = "loss";
    CHECK_THROWS_AS(compare({{"a", rep(0.5)}, {"b", other_metric}}, 0), Error);
    CHECK_THROWS_AS(compare({}, 0), Error);
    CHECK_THROWS_AS(compare({{"a", rep(0.5)}}, 1), Error);
}

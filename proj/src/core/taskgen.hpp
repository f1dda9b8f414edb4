#pragma once

#include <string>
#include <vector>

#include "model.hpp"

namespace plab {

// Token id conventions shared by every task. Digits double as answer tokens.
inline constexpr int TOK_DIGIT0 = 0;  // 0..9
inline constexpr int TOK_BOS = 10;
inline constexpr int TOK_SEP = 11;
inline constexpr int TOK_ASK = 12;
inline constexpr int TOK_CELL0 = 13;  // 13 .. 13 + grid_size^2 - 1

enum class Split { train = 0, val = 1, test = 2 };

const char* to_string(Split s);
Split split_from_string(const std::string& s);

// One training/eval example. `tokens` are the text tokens only; for grounded
// examples the vision rows sit between the first n_pre and the following
// n_ins text tokens. target span [target_start, target_end) indexes into
// `tokens`.
struct TaskExample {
    std::vector<int> tokens;
    int target_start = 0;
    int target_end = 0;
    Tensor vision;  // empty for text tasks
    int n_pre = 0;
    int n_ins = 0;
    Split split = Split::train;

    int n_vis() const { return vision.numel() == 0 ? 0 : vision.rows(); }
    // position of a text token in the full multimodal sequence
    int full_position(int text_idx) const { return text_idx < n_pre ? text_idx : text_idx + n_vis(); }
    int full_length() const { return static_cast<int>(tokens.size()) + n_vis(); }
};

struct Task {
    std::string task_id;
    std::string kind;   // "text" or "grounded"
    std::string skill;  // modular-sum, copy-with-transform, grid-attr-qa
    int grid_size = 0;
    int n_attributes = 0;
    int vision_feature_dim = 0;
    std::vector<TaskExample> examples;

    std::vector<size_t> split_indices(Split s) const;
    void validate() const;
};

// Text task over digit arithmetic. skill = "modular-sum" emits
// [BOS a b SEP ans] with ans = (a+b) mod 10 over the 100-pair pool;
// skill = "copy-with-transform" emits [BOS d1 d2 d3 SEP t1 t2 t3] with
// ti = (di+1) mod 10 over the 1000-triple pool. n examples are drawn
// without replacement and split 80/10/10.
Task gen_text_task(uint64_t seed, int n, const std::string& skill = "modular-sum");

// Grounded QA over a grid_size x grid_size symbolic image. Each cell carries
// one of n_attributes attributes; the vision feature of cell c is
// onehot(c) ++ onehot(attr(c)) zero-padded to vision_feature_dim. The
// question asks one cell, the answer is that cell's attribute digit, which
// is never derivable from the text alone. Answers are balanced within each
// split so a text-only majority predictor stays at chance.
Task gen_grounded_task(uint64_t seed, int n, int grid_size = 4, int n_attributes = 10,
                       int vision_feature_dim = 32);

// JSON on disk; loading validates structure and determinism-relevant fields.
void save_task(const std::string& path, const Task& task);
Task load_task(const std::string& path);

}  // namespace plab

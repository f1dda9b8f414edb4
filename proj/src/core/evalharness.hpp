#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "model.hpp"
#include "taskgen.hpp"

namespace plab {

struct EvalRecord {
    int example_index = 0;  // index into the task's example list
    std::vector<int> predicted;
    std::vector<int> gold;
    bool correct = false;
};

struct EvalReport {
    std::string model_digest;
    std::string task_id;
    Split split = Split::val;
    std::string metric = "exact_match";
    double score = 0.0;
    int n_examples = 0;
    std::vector<EvalRecord> per_example;
    uint64_t seed = 0;
    std::string timestamp;               // left empty by evaluate; callers stamp it
    std::optional<int> mask_cut_layer;   // present when a vision cut was applied
};

// Greedy-decodes each example of the split and scores exact match over the
// full answer span. `indices` restricts evaluation to a subset of example
// indices (each must belong to the split). Results are ordered by example
// index and identical for any worker count.
EvalReport evaluate(const Checkpoint& ckpt, const Task& task, Split split,
                    const std::optional<MaskSpec>& mask = std::nullopt, int workers = 0,
                    const std::vector<size_t>* indices = nullptr, bool keep_records = true);

// Fixed deterministic subsample of a split: seeded shuffle of the split's
// example indices, first n kept, returned ascending. n covering the whole
// split returns every index.
std::vector<size_t> subsample_indices(const Task& task, Split split, int n, uint64_t seed);

struct ComparisonRow {
    std::string label;
    double score = 0.0;
    double delta = 0.0;  // vs the baseline row
    bool best = false;   // attains the maximum score
};

struct Comparison {
    std::string task_id;
    Split split = Split::val;
    std::string metric;
    std::string baseline_label;
    std::vector<ComparisonRow> rows;
};

// Reports must agree on task, split, and metric; deltas are taken against
// the report at baseline_index.
Comparison compare(const std::vector<std::pair<std::string, EvalReport>>& reports,
                   size_t baseline_index);

}  // namespace plab

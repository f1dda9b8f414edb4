#pragma once

#include <optional>
#include <string>
#include <vector>

#include "model.hpp"
#include "taskgen.hpp"

namespace plab {

// source partition for attention mass: vision span, prompt text (pre + ins),
// generated tokens (res)
enum class MassSource { vis = 0, pre_plus_ins = 1, res = 2 };

const char* to_string(MassSource s);
MassSource mass_source_from_string(const std::string& s);

const std::vector<MassSource>& all_mass_sources();

// column index sets for one source span; n_keys limits the res span when
// only part of the sequence exists yet
std::vector<int> source_columns(const SequenceLayout& layout, MassSource source, int n_keys);

// Head-averaged attention mass at one layer: mean over target rows of the
// summed attention they place on the source columns.
double attention_mass(const ForwardTrace& trace, const std::vector<int>& target_rows,
                      const std::vector<int>& source_cols, int layer);

// Same for a single decoded row, given the per-head 1 x n_keys grids.
double attention_mass_row(const std::vector<Tensor>& head_rows, const std::vector<int>& source_cols);

struct MassProfile {
    std::string stage;   // "prefill" or "decode"
    std::string target;  // "ins" or "res"
    MassSource source = MassSource::vis;
    std::vector<double> per_layer;              // length L; decode: mean over steps
    std::vector<std::vector<double>> per_step;  // decode only: [step][layer]
};

// Prefill-stage profile over the example's prompt: target = instruction rows.
std::vector<MassProfile> mass_profile_prefill(const Checkpoint& ckpt, const TaskExample& ex,
                                              const std::optional<MaskSpec>& mask,
                                              const std::vector<MassSource>& sources);

// Decode-stage profile: target = each generated row in turn; per-step values
// plus their unweighted mean. Generates as many tokens as the answer span.
std::vector<MassProfile> mass_profile_decode(const Checkpoint& ckpt, const TaskExample& ex,
                                             const std::optional<MaskSpec>& mask,
                                             const std::vector<MassSource>& sources);

// mean over the split's examples of the prefill Mass(ins -> vis) averaged
// across layers [layer_lo, L]; the late-layer vision-attention summary
double mean_late_mass_ins_to_vis(const Checkpoint& ckpt, const Task& task, Split split,
                                 int layer_lo, int workers = 0);

struct AggregateMass {
    std::string stage;
    std::vector<MassProfile> over_all;      // averaged over every example
    std::vector<MassProfile> over_correct;  // averaged over correctly answered ones
    int n_all = 0;
    int n_correct = 0;
};

// Split-level average of per-example profiles, reported both over all
// examples and over the correctly answered subset (greedy decode decides
// correctness). stage is "prefill" or "decode".
AggregateMass aggregate_mass_profiles(const Checkpoint& ckpt, const Task& task, Split split,
                                      const std::string& stage,
                                      const std::optional<MaskSpec>& mask,
                                      const std::vector<MassSource>& sources, int workers = 0);

struct Heatmap {
    int grid_size = 0;
    int layer = 0;
    int head = -1;      // -1 = head average
    Tensor raw;         // grid_size x grid_size attention received
    Tensor normalized;  // raw scaled so the peak is 1 (all-zero map stays 0)
};

// Per-vision-token attention received from the query rows, reshaped to the
// task grid. head = -1 averages heads.
Heatmap vision_heatmap(const ForwardTrace& trace, const SequenceLayout& layout, int layer,
                       int head, const std::vector<int>& query_rows, int grid_size);

// ASCII portable graymap render of the normalized map, cell_px pixels per cell
std::string heatmap_to_pgm(const Heatmap& map, int cell_px = 32);

struct LocalizationReport {
    int layer = 0;
    int n = 0;
    int hits = 0;
    double rate = 0.0;
};

// Fraction of split examples whose head-averaged prefill heatmap (queries =
// instruction rows) peaks at the queried grid cell.
LocalizationReport localization_rate(const Checkpoint& ckpt, const Task& task, Split split,
                                     int layer, const std::optional<MaskSpec>& mask = std::nullopt,
                                     int workers = 0);

}  // namespace plab

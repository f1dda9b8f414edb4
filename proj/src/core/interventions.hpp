#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "model.hpp"

namespace plab {

// Builds the attention mask for one layer: causal structure for a block of
// n_query rows whose absolute positions start at query_pos0, attending over
// n_key cached keys, with every vision key banned for every query when the
// depth cut is active at this layer.
AttnMask apply_mask(int n_query, int n_key, int query_pos0, const SequenceLayout& layout,
                    const std::optional<MaskSpec>& mask, int layer);

// Forward pass that physically removes the vision rows at the cut layer
// instead of masking them. Layers below the cut run on the full sequence;
// at the cut the vision rows are dropped (positions of surviving rows are
// unchanged) and the remaining layers run on the shorter sequence. Returns
// logits for the surviving rows only, in original order.
Tensor prune_equivalent_forward(const Checkpoint& ckpt, const Tensor& x0,
                                const SequenceLayout& layout, const MaskSpec& mask);

struct SweepPoint {
    int k = 0;
    double score = 0.0;
};

struct SweepProfile {
    std::vector<SweepPoint> points;  // ascending k
};

// Evaluates score(k) for each cut layer in k_values via the supplied
// callback. k = num_layers + 1 means no masking.
SweepProfile mask_sweep(const std::function<double(const std::optional<MaskSpec>&)>& eval_fn,
                        const std::vector<int>& k_values, int num_layers);

std::vector<int> full_sweep_range(int num_layers);  // 1..L+1

}  // namespace plab

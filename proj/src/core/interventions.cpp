#include "interventions.hpp"

namespace plab {

AttnMask apply_mask(int n_query, int n_key, int query_pos0, const SequenceLayout& layout,
                    const std::optional<MaskSpec>& mask, int layer) {
    check(n_query >= 1 && n_key >= 1, errc::invalid_argument, "mask geometry must be positive");
    check(query_pos0 + n_query == n_key, errc::invalid_argument,
          "query block must end at the last key");
    AttnMask m = AttnMask::causal_block(n_query, n_key, query_pos0);
    if (mask && mask->active_at(layer)) {
        for (int j = layout.vis_begin(); j < layout.vis_end && j < n_key; ++j)
            m.ban_key_for_all_queries(j);
    }
    return m;
}

Tensor prune_equivalent_forward(const Checkpoint& ckpt, const Tensor& x0,
                                const SequenceLayout& layout, const MaskSpec& mask) {
    const ModelConfig& cfg = ckpt.config;
    mask.validate(cfg.num_layers);
    layout.validate(x0.rows());
    const int n = x0.rows();
    const int k = mask.cut_layer;

    // below the cut the mask is inactive, so this equals the masked pass
    Tensor x = forward_layer_range(ckpt, x0, layout, mask, 1, k - 1);

    Tensor pruned = Tensor::zeros({n - layout.n_vis(), cfg.hidden_dim});
    int r = 0;
    for (int i = 0; i < n; ++i) {
        if (layout.in_vis(i)) continue;
        const float* src = x.row(i);
        float* dst = pruned.row(r++);
        for (int j = 0; j < cfg.hidden_dim; ++j) dst[j] = src[j];
    }

    // survivors keep their relative order, so plain causal attention over the
    // shorter sequence reproduces the masked attention pattern exactly
    SequenceLayout pruned_layout;
    pruned_layout.pre_end = layout.pre_end;
    pruned_layout.vis_end = layout.pre_end;
    pruned_layout.ins_end = layout.ins_end - layout.n_vis();
    pruned_layout.res_start = layout.res_start - layout.n_vis();
    Tensor out = forward_layer_range(ckpt, pruned, pruned_layout, std::nullopt, k, cfg.num_layers);
    return matmul(out, ckpt.get("unembed"));
}

SweepProfile mask_sweep(const std::function<double(const std::optional<MaskSpec>&)>& eval_fn,
                        const std::vector<int>& k_values, int num_layers) {
    check(!k_values.empty(), errc::invalid_argument, "mask sweep needs at least one cut layer");
    SweepProfile profile;
    for (int k : k_values) {
        MaskSpec spec{k};
        spec.validate(num_layers);
        SweepPoint p;
        p.k = k;
        p.score = eval_fn(spec);
        profile.points.push_back(p);
    }
    return profile;
}

std::vector<int> full_sweep_range(int num_layers) {
    std::vector<int> ks;
    for (int k = 1; k <= num_layers + 1; ++k) ks.push_back(k);
    return ks;
}

}  // namespace plab

#include "model.hpp"

#include <cmath>

#include "interventions.hpp"

namespace plab {

void ModelConfig::validate() const {
    check(num_layers >= 2, errc::invalid_argument, "num_layers must be >= 2");
    check(hidden_dim > 0 && num_heads > 0, errc::invalid_argument, "hidden_dim/num_heads must be positive");
    check(hidden_dim % num_heads == 0, errc::invalid_argument, "hidden_dim must be divisible by num_heads");
    check(vocab_size > 0, errc::invalid_argument, "vocab_size must be positive");
    check(max_seq_len > 0, errc::invalid_argument, "max_seq_len must be positive");
    check(vision_feature_dim > 0, errc::invalid_argument, "vision_feature_dim must be positive");
    check(ffn_dim > 0, errc::invalid_argument, "ffn_dim must be positive");
}

void SequenceLayout::validate(int n_total) const {
    check(0 <= pre_end && pre_end <= vis_end && vis_end <= ins_end, errc::invalid_argument,
          "layout spans must be ordered");
    check(res_start == ins_end, errc::invalid_argument, "res span must start at ins_end");
    check(res_start <= n_total, errc::invalid_argument, "layout exceeds sequence length");
}

const char* to_string(CkptKind k) {
    switch (k) {
        case CkptKind::base_lm: return "base_lm";
        case CkptKind::mllm: return "mllm";
        case CkptKind::merged: return "merged";
    }
    return "unknown";
}

CkptKind ckpt_kind_from_string(const std::string& s) {
    if (s == "base_lm") return CkptKind::base_lm;
    if (s == "mllm") return CkptKind::mllm;
    if (s == "merged") return CkptKind::merged;
    fail(errc::format, "unknown checkpoint kind: " + s);
}

std::string layer_param_name(int layer, const std::string& slot) {
    return "layers." + std::to_string(layer) + "." + slot;
}

const std::vector<std::string>& layer_slots() {
    static const std::vector<std::string> slots = {"attn.q", "attn.k", "attn.v", "attn.o",
                                                   "ffn.up", "ffn.down", "norm.attn", "norm.ffn"};
    return slots;
}

const std::vector<std::string>& attn_slots() {
    static const std::vector<std::string> slots = {"attn.q", "attn.k", "attn.v", "attn.o"};
    return slots;
}

const Tensor& Checkpoint::get(const std::string& name) const {
    auto it = tensors.find(name);
    check(it != tensors.end(), errc::invalid_argument, "checkpoint is missing tensor " + name);
    return it->second;
}

static void check_shape(const Checkpoint& c, const std::string& name, std::vector<int> want) {
    const Tensor& t = c.get(name);
    check(t.shape == want, errc::invalid_argument, "checkpoint tensor " + name + " has wrong shape");
}

void Checkpoint::validate() const {
    config.validate();
    const int d = config.hidden_dim;
    size_t expected = 0;
    for (int l = 1; l <= config.num_layers; ++l) {
        check_shape(*this, layer_param_name(l, "attn.q"), {d, d});
        check_shape(*this, layer_param_name(l, "attn.k"), {d, d});
        check_shape(*this, layer_param_name(l, "attn.v"), {d, d});
        check_shape(*this, layer_param_name(l, "attn.o"), {d, d});
        check_shape(*this, layer_param_name(l, "ffn.up"), {d, config.ffn_dim});
        check_shape(*this, layer_param_name(l, "ffn.down"), {config.ffn_dim, d});
        check_shape(*this, layer_param_name(l, "norm.attn"), {d});
        check_shape(*this, layer_param_name(l, "norm.ffn"), {d});
        expected += 8;
    }
    check_shape(*this, "embed.tok", {config.vocab_size, d});
    check_shape(*this, "embed.pos", {config.max_seq_len, d});
    check_shape(*this, "unembed", {d, config.vocab_size});
    expected += 3;
    if (kind != CkptKind::base_lm) {
        check_shape(*this, "projector", {config.vision_feature_dim, d});
        expected += 1;
    }
    check(tensors.size() == expected, errc::invalid_argument,
          "checkpoint has unexpected extra or missing tensors");
}

Checkpoint Checkpoint::init_random(const ModelConfig& cfg, CkptKind kind, uint64_t seed,
                                   float init_std) {
    cfg.validate();
    Checkpoint c;
    c.config = cfg;
    c.kind = kind;
    Rng root(seed);
    const int d = cfg.hidden_dim;
    auto put_randn = [&](const std::string& name, std::vector<int> shape) {
        Rng r = root.fork(fnv1a(name.data(), name.size()));
        c.tensors[name] = Tensor::randn(shape, r, init_std);
    };
    for (int l = 1; l <= cfg.num_layers; ++l) {
        put_randn(layer_param_name(l, "attn.q"), {d, d});
        put_randn(layer_param_name(l, "attn.k"), {d, d});
        put_randn(layer_param_name(l, "attn.v"), {d, d});
        put_randn(layer_param_name(l, "attn.o"), {d, d});
        put_randn(layer_param_name(l, "ffn.up"), {d, cfg.ffn_dim});
        put_randn(layer_param_name(l, "ffn.down"), {cfg.ffn_dim, d});
        c.tensors[layer_param_name(l, "norm.attn")] = Tensor::full({d}, 1.0f);
        c.tensors[layer_param_name(l, "norm.ffn")] = Tensor::full({d}, 1.0f);
    }
    put_randn("embed.tok", {cfg.vocab_size, d});
    put_randn("embed.pos", {cfg.max_seq_len, d});
    put_randn("unembed", {d, cfg.vocab_size});
    if (kind != CkptKind::base_lm) put_randn("projector", {cfg.vision_feature_dim, d});
    return c;
}

void MaskSpec::validate(int num_layers) const {
    check(cut_layer >= 1 && cut_layer <= num_layers + 1, errc::invalid_argument,
          "mask cut layer must lie in [1, L+1]");
}

std::pair<Tensor, SequenceLayout> embed_multimodal(const Checkpoint& ckpt,
                                                   const Tensor& vision_features,
                                                   const std::vector<int>& text_tokens,
                                                   int n_pre, int n_ins) {
    const ModelConfig& cfg = ckpt.config;
    const int d = cfg.hidden_dim;
    const int n_vis = vision_features.numel() == 0 ? 0 : vision_features.rows();
    check(n_pre >= 0 && n_ins >= 0 && n_pre + n_ins <= static_cast<int>(text_tokens.size()),
          errc::invalid_argument, "text span lengths exceed token count");
    if (n_vis > 0) {
        check(ckpt.kind != CkptKind::base_lm, errc::invalid_argument,
              "base_lm checkpoint has no projector for vision features");
        check(vision_features.cols() == cfg.vision_feature_dim, errc::dim_mismatch,
              "vision feature width does not match config");
    }
    const int n_text = static_cast<int>(text_tokens.size());
    const int n_total = n_text + n_vis;
    check(n_total <= cfg.max_seq_len, errc::invalid_argument, "sequence exceeds max_seq_len");

    SequenceLayout layout;
    layout.pre_end = n_pre;
    layout.vis_end = n_pre + n_vis;
    layout.ins_end = layout.vis_end + n_ins;
    layout.res_start = layout.ins_end;
    layout.validate(n_total);

    const Tensor& tok = ckpt.get("embed.tok");
    const Tensor& pos = ckpt.get("embed.pos");
    Tensor x = Tensor::zeros({n_total, d});

    Tensor vis_rows;
    if (n_vis > 0) vis_rows = matmul(vision_features, ckpt.get("projector"));

    int text_idx = 0;
    for (int i = 0; i < n_total; ++i) {
        float* out = x.row(i);
        if (layout.in_vis(i)) {
            const float* v = vis_rows.row(i - layout.vis_begin());
            for (int j = 0; j < d; ++j) out[j] = v[j];
        } else {
            const int t = text_tokens[static_cast<size_t>(text_idx++)];
            check(t >= 0 && t < cfg.vocab_size, errc::invalid_argument, "token id out of range");
            const float* e = tok.row(t);
            for (int j = 0; j < d; ++j) out[j] = e[j];
        }
        const float* p = pos.row(i);
        for (int j = 0; j < d; ++j) out[j] += p[j];
    }
    return {std::move(x), layout};
}

namespace {

// per-layer KV cache of already-processed rows
struct LayerCache {
    Tensor k;  // n x d
    Tensor v;  // n x d
};

Tensor slice_cols(const Tensor& t, int c0, int width) {
    Tensor out = Tensor::zeros({t.rows(), width});
    for (int i = 0; i < t.rows(); ++i) {
        const float* src = t.row(i) + c0;
        float* dst = out.row(i);
        for (int j = 0; j < width; ++j) dst[j] = src[j];
    }
    return out;
}

void append_rows(Tensor& dst, const Tensor& src) {
    if (dst.numel() == 0) {
        dst = src;
        return;
    }
    check(dst.cols() == src.cols(), errc::dim_mismatch, "append_rows width mismatch");
    dst.data.insert(dst.data.end(), src.data.begin(), src.data.end());
    dst.shape[0] += src.rows();
}

// Processes `m` new rows whose absolute positions start at `pos0`, attending
// over everything already in `caches` plus their own causal prefix, through
// layers [l_begin, l_end]. Returns the transformed rows; appends this block's
// K/V to the caches (indexed l - l_begin). One code path serves the full
// forward pass (pos0 = 0, m = N), incremental decoding (m = 1), and the
// layer-range segments of the prune-equivalent pass, so all of them are
// arithmetically identical row for row.
Tensor transformer_rows(const Checkpoint& ckpt, const Tensor& x_in, int pos0,
                        const SequenceLayout& layout, const std::optional<MaskSpec>& mask_spec,
                        int l_begin, int l_end, std::vector<LayerCache>& caches,
                        bool capture_attention, std::vector<std::vector<Tensor>>* attn_out,
                        std::vector<std::vector<float>>* hidden_norms_out) {
    const ModelConfig& cfg = ckpt.config;
    const int d = cfg.hidden_dim;
    const int hd = cfg.head_dim();
    const int m = x_in.rows();
    const int n_span = l_end - l_begin + 1;
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

    Tensor x = x_in;
    if (attn_out) attn_out->assign(static_cast<size_t>(n_span), {});
    if (hidden_norms_out) hidden_norms_out->assign(static_cast<size_t>(n_span), {});

    for (int l = l_begin; l <= l_end; ++l) {
        LayerCache& cache = caches[static_cast<size_t>(l - l_begin)];
        const int n_prev = cache.k.numel() == 0 ? 0 : cache.k.rows();
        const int n_keys = n_prev + m;

        Tensor h = rms_norm(x, ckpt.get(layer_param_name(l, "norm.attn")));
        Tensor q = matmul(h, ckpt.get(layer_param_name(l, "attn.q")));
        Tensor k_new = matmul(h, ckpt.get(layer_param_name(l, "attn.k")));
        Tensor v_new = matmul(h, ckpt.get(layer_param_name(l, "attn.v")));
        append_rows(cache.k, k_new);
        append_rows(cache.v, v_new);

        AttnMask mask = apply_mask(m, n_keys, pos0, layout, mask_spec, l);

        Tensor ctx = Tensor::zeros({m, d});
        if (capture_attention && attn_out)
            (*attn_out)[static_cast<size_t>(l - l_begin)].reserve(static_cast<size_t>(cfg.num_heads));
        for (int head = 0; head < cfg.num_heads; ++head) {
            const int c0 = head * hd;
            Tensor q_h = slice_cols(q, c0, hd);
            Tensor k_h = slice_cols(cache.k, c0, hd);
            Tensor v_h = slice_cols(cache.v, c0, hd);
            Tensor scores = matmul(q_h, transpose2d(k_h));
            for (auto& s : scores.data) s *= scale;
            Tensor probs = masked_softmax(scores, mask);
            Tensor ctx_h = matmul(probs, v_h);
            for (int i = 0; i < m; ++i) {
                const float* src = ctx_h.row(i);
                float* dst = ctx.row(i) + c0;
                for (int j = 0; j < hd; ++j) dst[j] = src[j];
            }
            if (capture_attention && attn_out)
                (*attn_out)[static_cast<size_t>(l - l_begin)].push_back(std::move(probs));
        }
        Tensor attn_proj = matmul(ctx, ckpt.get(layer_param_name(l, "attn.o")));
        x = add(x, attn_proj);

        Tensor h2 = rms_norm(x, ckpt.get(layer_param_name(l, "norm.ffn")));
        Tensor up = silu(matmul(h2, ckpt.get(layer_param_name(l, "ffn.up"))));
        Tensor down = matmul(up, ckpt.get(layer_param_name(l, "ffn.down")));
        x = add(x, down);
        ensure_finite(x, "transformer layer output");

        if (hidden_norms_out) {
            auto& norms = (*hidden_norms_out)[static_cast<size_t>(l - l_begin)];
            norms.resize(static_cast<size_t>(m));
            for (int i = 0; i < m; ++i) {
                double ss = 0.0;
                const float* r = x.row(i);
                for (int j = 0; j < d; ++j) ss += static_cast<double>(r[j]) * r[j];
                norms[static_cast<size_t>(i)] = static_cast<float>(std::sqrt(ss));
            }
        }
    }
    return x;
}

}  // namespace

ForwardTrace forward(const Checkpoint& ckpt, const Tensor& x0, const SequenceLayout& layout,
                     const std::optional<MaskSpec>& mask_spec, bool capture_attention,
                     bool capture_hidden_norms) {
    const ModelConfig& cfg = ckpt.config;
    check(x0.ndim() == 2 && x0.cols() == cfg.hidden_dim, errc::dim_mismatch,
          "forward input must be N x hidden_dim");
    if (mask_spec) mask_spec->validate(cfg.num_layers);
    layout.validate(x0.rows());

    ForwardTrace trace;
    std::vector<LayerCache> caches(static_cast<size_t>(cfg.num_layers));
    Tensor x = transformer_rows(ckpt, x0, 0, layout, mask_spec, 1, cfg.num_layers, caches,
                                capture_attention, capture_attention ? &trace.attn : nullptr,
                                capture_hidden_norms ? &trace.hidden_norms : nullptr);
    trace.logits = matmul(x, ckpt.get("unembed"));
    trace.attention_captured = capture_attention;
    return trace;
}

Tensor forward_layer_range(const Checkpoint& ckpt, const Tensor& x0, const SequenceLayout& layout,
                           const std::optional<MaskSpec>& mask_spec, int l_begin, int l_end) {
    const ModelConfig& cfg = ckpt.config;
    check(x0.ndim() == 2 && x0.cols() == cfg.hidden_dim, errc::dim_mismatch,
          "forward input must be N x hidden_dim");
    check(1 <= l_begin && l_end <= cfg.num_layers, errc::invalid_argument,
          "layer range out of bounds");
    layout.validate(x0.rows());
    if (l_begin > l_end) return x0;
    std::vector<LayerCache> caches(static_cast<size_t>(l_end - l_begin + 1));
    return transformer_rows(ckpt, x0, 0, layout, mask_spec, l_begin, l_end, caches, false,
                            nullptr, nullptr);
}

DecodeResult decode_greedy(const Checkpoint& ckpt, const Tensor& vision_features,
                           const std::vector<int>& text_tokens, int n_pre, int n_ins,
                           const std::optional<MaskSpec>& mask_spec, int max_new,
                           bool capture_attention) {
    const ModelConfig& cfg = ckpt.config;
    check(max_new >= 1, errc::invalid_argument, "max_new must be >= 1");
    if (mask_spec) mask_spec->validate(cfg.num_layers);

    auto [x0, layout] = embed_multimodal(ckpt, vision_features, text_tokens, n_pre, n_ins);
    const int n_prompt = x0.rows();
    check(layout.res_start == n_prompt, errc::invalid_argument,
          "decode prompt must not already contain response tokens");
    check(n_prompt + max_new <= cfg.max_seq_len, errc::invalid_argument,
          "decode would overflow max_seq_len");

    DecodeResult result;
    result.layout = layout;
    result.attention_captured = capture_attention;

    std::vector<LayerCache> caches(static_cast<size_t>(cfg.num_layers));
    Tensor x = transformer_rows(ckpt, x0, 0, layout, mask_spec, 1, cfg.num_layers, caches, false,
                                nullptr, nullptr);
    Tensor last_logits = matmul(Tensor({1, cfg.hidden_dim},
                                       std::vector<float>(x.row(n_prompt - 1), x.row(n_prompt - 1) + cfg.hidden_dim)),
                                ckpt.get("unembed"));
    int next = argmax_row(last_logits, 0);

    const Tensor& tok = ckpt.get("embed.tok");
    const Tensor& pos = ckpt.get("embed.pos");
    for (int step = 0; step < max_new; ++step) {
        result.tokens.push_back(next);
        const int position = n_prompt + step;
        result.layout.validate(position + 1);
        const bool last = step == max_new - 1;
        if (last && !capture_attention) break;

        // feed the token we just emitted; its attention rows are captured here
        Tensor row = Tensor::zeros({1, cfg.hidden_dim});
        const float* e = tok.row(next);
        const float* p = pos.row(position);
        for (int j = 0; j < cfg.hidden_dim; ++j) row.data[static_cast<size_t>(j)] = e[j] + p[j];

        std::vector<std::vector<Tensor>> step_attn;
        Tensor out = transformer_rows(ckpt, row, position, result.layout, mask_spec, 1,
                                      cfg.num_layers, caches, capture_attention,
                                      capture_attention ? &step_attn : nullptr, nullptr);
        if (capture_attention) result.step_attn.push_back(std::move(step_attn));
        if (last) break;
        Tensor logits = matmul(out, ckpt.get("unembed"));
        next = argmax_row(logits, 0);
    }
    return result;
}

}  // namespace plab

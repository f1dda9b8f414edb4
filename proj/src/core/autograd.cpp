#include "autograd.hpp"

#include <cmath>

namespace plab {

template <typename T>
MatT<T> mat_from_tensor(const Tensor& t) {
    check(t.ndim() == 1 || t.ndim() == 2, errc::dim_mismatch, "expected 1-D or 2-D tensor");
    MatT<T> m;
    if (t.ndim() == 1) {
        m.rows = 1;
        m.cols = t.dim(0);
    } else {
        m.rows = t.dim(0);
        m.cols = t.dim(1);
    }
    m.data.resize(t.data.size());
    for (size_t i = 0; i < t.data.size(); ++i) m.data[i] = static_cast<T>(t.data[i]);
    return m;
}

template <typename T>
Tensor tensor_from_mat(const MatT<T>& m, const std::vector<int>& shape) {
    Tensor t;
    t.shape = shape;
    t.data.resize(m.data.size());
    check(t.numel() == static_cast<int64_t>(m.data.size()), errc::dim_mismatch,
          "shape disagrees with matrix size");
    for (size_t i = 0; i < m.data.size(); ++i) t.data[i] = static_cast<float>(m.data[i]);
    return t;
}

template <typename T>
ParamsT<T> params_from_checkpoint(const Checkpoint& ckpt) {
    ckpt.validate();
    ParamsT<T> out;
    for (const auto& [name, t] : ckpt.tensors) out.p.emplace(name, mat_from_tensor<T>(t));
    return out;
}

template <typename T>
Checkpoint params_to_checkpoint(const ParamsT<T>& params, const ModelConfig& cfg, CkptKind kind) {
    Checkpoint ckpt;
    ckpt.config = cfg;
    ckpt.kind = kind;
    const int d = cfg.hidden_dim;
    auto shape_of = [&](const std::string& name, const MatT<T>& m) -> std::vector<int> {
        if (name.find("norm.") != std::string::npos) return {d};
        return {m.rows, m.cols};
    };
    for (const auto& [name, m] : params.p) ckpt.tensors.emplace(name, tensor_from_mat(m, shape_of(name, m)));
    ckpt.validate();
    return ckpt;
}

template <typename T>
MatT<T>& GradsT<T>::at_like(const std::string& name, int rows, int cols) {
    auto it = g.find(name);
    if (it == g.end()) it = g.emplace(name, MatT<T>::zeros(rows, cols)).first;
    return it->second;
}

template <typename T>
void GradsT<T>::add(const GradsT<T>& other) {
    for (const auto& [name, m] : other.g) {
        auto& mine = at_like(name, m.rows, m.cols);
        check(mine.rows == m.rows && mine.cols == m.cols, errc::dim_mismatch,
              "gradient shape mismatch for " + name);
        for (size_t i = 0; i < m.data.size(); ++i) mine.data[i] += m.data[i];
    }
}

template <typename T>
void GradsT<T>::scale(T s) {
    for (auto& [name, m] : g)
        for (auto& v : m.data) v *= s;
}

template <typename T>
double GradsT<T>::l2_norm() const {
    double ss = 0.0;
    for (const auto& [name, m] : g)
        for (T v : m.data) ss += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(ss);
}

namespace {

template <typename T>
MatT<T> mm(const MatT<T>& a, const MatT<T>& b) {
    check(a.cols == b.rows, errc::dim_mismatch, "mm inner dims disagree");
    MatT<T> c = MatT<T>::zeros(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const T* ar = a.row(i);
        T* cr = c.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const T av = ar[k];
            const T* br = b.row(k);
            for (int j = 0; j < b.cols; ++j) cr[j] += av * br[j];
        }
    }
    return c;
}

// A^T B without materializing the transpose
template <typename T>
MatT<T> mm_AtB(const MatT<T>& a, const MatT<T>& b) {
    check(a.rows == b.rows, errc::dim_mismatch, "mm_AtB outer dims disagree");
    MatT<T> c = MatT<T>::zeros(a.cols, b.cols);
    for (int k = 0; k < a.rows; ++k) {
        const T* ar = a.row(k);
        const T* br = b.row(k);
        for (int i = 0; i < a.cols; ++i) {
            const T av = ar[i];
            T* cr = c.row(i);
            for (int j = 0; j < b.cols; ++j) cr[j] += av * br[j];
        }
    }
    return c;
}

// A B^T
template <typename T>
MatT<T> mm_ABt(const MatT<T>& a, const MatT<T>& b) {
    check(a.cols == b.cols, errc::dim_mismatch, "mm_ABt inner dims disagree");
    MatT<T> c = MatT<T>::zeros(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const T* ar = a.row(i);
        T* cr = c.row(i);
        for (int j = 0; j < b.rows; ++j) {
            const T* br = b.row(j);
            T acc = T(0);
            for (int k = 0; k < a.cols; ++k) acc += ar[k] * br[k];
            cr[j] = acc;
        }
    }
    return c;
}

template <typename T>
void add_inplace(MatT<T>& a, const MatT<T>& b) {
    check(a.rows == b.rows && a.cols == b.cols, errc::dim_mismatch, "add shape mismatch");
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

template <typename T>
MatT<T> slice_head(const MatT<T>& m, int c0, int width) {
    MatT<T> out = MatT<T>::zeros(m.rows, width);
    for (int i = 0; i < m.rows; ++i) {
        const T* src = m.row(i) + c0;
        T* dst = out.row(i);
        for (int j = 0; j < width; ++j) dst[j] = src[j];
    }
    return out;
}

template <typename T>
void paste_head(MatT<T>& m, const MatT<T>& part, int c0) {
    for (int i = 0; i < m.rows; ++i) {
        const T* src = part.row(i);
        T* dst = m.row(i) + c0;
        for (int j = 0; j < part.cols; ++j) dst[j] = src[j];
    }
}

template <typename T>
MatT<T> rms_fwd(const MatT<T>& x, const MatT<T>& gain, std::vector<T>& inv_r) {
    const int d = x.cols;
    MatT<T> h = MatT<T>::zeros(x.rows, d);
    inv_r.resize(static_cast<size_t>(x.rows));
    const T* g = gain.data.data();
    for (int i = 0; i < x.rows; ++i) {
        const T* xr = x.row(i);
        T ss = T(0);
        for (int j = 0; j < d; ++j) ss += xr[j] * xr[j];
        const T ir = T(1) / std::sqrt(ss / T(d) + T(1e-6));
        inv_r[static_cast<size_t>(i)] = ir;
        T* hr = h.row(i);
        for (int j = 0; j < d; ++j) hr[j] = g[j] * xr[j] * ir;
    }
    return h;
}

// accumulates dx into dst and the gain gradient into dgain
template <typename T>
void rms_bwd(const MatT<T>& dh, const MatT<T>& x, const MatT<T>& gain,
             const std::vector<T>& inv_r, MatT<T>& dst, MatT<T>& dgain) {
    const int d = x.cols;
    const T* g = gain.data.data();
    for (int i = 0; i < x.rows; ++i) {
        const T* dhr = dh.row(i);
        const T* xr = x.row(i);
        const T ir = inv_r[static_cast<size_t>(i)];
        T dot = T(0);
        for (int j = 0; j < d; ++j) {
            dot += dhr[j] * g[j] * xr[j];
            dgain.data[static_cast<size_t>(j)] += dhr[j] * xr[j] * ir;
        }
        const T coef = dot * ir * ir * ir / T(d);
        T* dr = dst.row(i);
        for (int j = 0; j < d; ++j) dr[j] += g[j] * dhr[j] * ir - xr[j] * coef;
    }
}

template <typename T>
T sigmoid(T v) {
    return T(1) / (T(1) + std::exp(-v));
}

struct SupervisedSlot {
    int logits_row;
    int gold;
};

}  // namespace

template <typename T>
LossStats example_loss(const ParamsT<T>& params, const ModelConfig& cfg, const TaskExample& ex,
                       GradsT<T>* grads) {
    const int d = cfg.hidden_dim;
    const int hd = cfg.head_dim();
    const int n_vis = ex.n_vis();
    const int n = ex.full_length();
    check(n <= cfg.max_seq_len, errc::invalid_argument, "example exceeds max_seq_len");
    check(n_vis == 0 || params.has("projector"), errc::invalid_argument,
          "vision example requires a projector");
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));

    const MatT<T>& tok = params.get("embed.tok");
    const MatT<T>& pos = params.get("embed.pos");

    // embedding; remember which token produced each text row
    MatT<T> x = MatT<T>::zeros(n, d);
    MatT<T> vis_feats;
    std::vector<int> row_token(static_cast<size_t>(n), -1);
    {
        const int vis_begin = ex.n_pre;
        if (n_vis > 0) vis_feats = mat_from_tensor<T>(ex.vision);
        int text_idx = 0;
        for (int i = 0; i < n; ++i) {
            T* xr = x.row(i);
            if (i >= vis_begin && i < vis_begin + n_vis) {
                const MatT<T>& proj = params.get("projector");
                const T* f = vis_feats.row(i - vis_begin);
                for (int fdim = 0; fdim < vis_feats.cols; ++fdim) {
                    const T fv = f[fdim];
                    if (fv == T(0)) continue;
                    const T* pr = proj.row(fdim);
                    for (int j = 0; j < d; ++j) xr[j] += fv * pr[j];
                }
            } else {
                const int t = ex.tokens[static_cast<size_t>(text_idx++)];
                check(t >= 0 && t < cfg.vocab_size, errc::invalid_argument, "token id out of range");
                row_token[static_cast<size_t>(i)] = t;
                const T* er = tok.row(t);
                for (int j = 0; j < d; ++j) xr[j] = er[j];
            }
            const T* p = pos.row(i);
            for (int j = 0; j < d; ++j) xr[j] += p[j];
        }
    }

    struct LayerCache {
        MatT<T> x_in, h, q, k, v, ctx, x_mid, h2, up_pre, up_act;
        std::vector<T> inv_r_attn, inv_r_ffn;
        std::vector<MatT<T>> probs;
    };
    std::vector<LayerCache> caches(static_cast<size_t>(cfg.num_layers));

    for (int l = 1; l <= cfg.num_layers; ++l) {
        LayerCache& c = caches[static_cast<size_t>(l - 1)];
        c.x_in = x;
        c.h = rms_fwd(c.x_in, params.get(layer_param_name(l, "norm.attn")), c.inv_r_attn);
        c.q = mm(c.h, params.get(layer_param_name(l, "attn.q")));
        c.k = mm(c.h, params.get(layer_param_name(l, "attn.k")));
        c.v = mm(c.h, params.get(layer_param_name(l, "attn.v")));
        c.ctx = MatT<T>::zeros(n, d);
        c.probs.resize(static_cast<size_t>(cfg.num_heads));
        for (int head = 0; head < cfg.num_heads; ++head) {
            const int c0 = head * hd;
            MatT<T> q_h = slice_head(c.q, c0, hd);
            MatT<T> k_h = slice_head(c.k, c0, hd);
            MatT<T> v_h = slice_head(c.v, c0, hd);
            MatT<T> s = mm_ABt(q_h, k_h);
            for (auto& v2 : s.data) v2 *= scale;
            // causal softmax row by row
            MatT<T> p = MatT<T>::zeros(n, n);
            for (int i = 0; i < n; ++i) {
                const T* sr = s.row(i);
                T* pr = p.row(i);
                T mx = sr[0];
                for (int j = 1; j <= i; ++j) mx = std::max(mx, sr[j]);
                T z = T(0);
                for (int j = 0; j <= i; ++j) {
                    pr[j] = std::exp(sr[j] - mx);
                    z += pr[j];
                }
                for (int j = 0; j <= i; ++j) pr[j] /= z;
            }
            MatT<T> ctx_h = mm(p, v_h);
            paste_head(c.ctx, ctx_h, c0);
            c.probs[static_cast<size_t>(head)] = std::move(p);
        }
        MatT<T> ao = mm(c.ctx, params.get(layer_param_name(l, "attn.o")));
        c.x_mid = c.x_in;
        add_inplace(c.x_mid, ao);
        c.h2 = rms_fwd(c.x_mid, params.get(layer_param_name(l, "norm.ffn")), c.inv_r_ffn);
        c.up_pre = mm(c.h2, params.get(layer_param_name(l, "ffn.up")));
        c.up_act = c.up_pre;
        for (auto& v2 : c.up_act.data) v2 *= sigmoid(v2);
        MatT<T> down = mm(c.up_act, params.get(layer_param_name(l, "ffn.down")));
        x = c.x_mid;
        add_inplace(x, down);
    }

    // supervised slots: the row before each target token predicts it
    std::vector<SupervisedSlot> slots;
    for (int t = ex.target_start; t < ex.target_end; ++t) {
        SupervisedSlot s;
        s.logits_row = ex.full_position(t) - 1;
        s.gold = ex.tokens[static_cast<size_t>(t)];
        check(s.logits_row >= 0 && s.logits_row < n, errc::invalid_argument, "bad target position");
        slots.push_back(s);
    }
    check(!slots.empty(), errc::invalid_argument, "example has no supervised targets");

    const MatT<T>& unembed = params.get("unembed");
    MatT<T> logits = mm(x, unembed);

    LossStats stats;
    stats.n_targets = static_cast<int>(slots.size());
    MatT<T> dlogits;
    if (grads) dlogits = MatT<T>::zeros(n, cfg.vocab_size);
    for (const auto& slot : slots) {
        const T* zr = logits.row(slot.logits_row);
        T mx = zr[0];
        int arg = 0;
        for (int j = 1; j < cfg.vocab_size; ++j) {
            if (zr[j] > mx) {
                mx = zr[j];
                arg = j;
            }
        }
        T z = T(0);
        for (int j = 0; j < cfg.vocab_size; ++j) z += std::exp(zr[j] - mx);
        stats.loss += static_cast<double>(mx) + std::log(static_cast<double>(z)) -
                      static_cast<double>(zr[slot.gold]);
        if (arg == slot.gold) ++stats.n_correct;
        if (grads) {
            T* dr = dlogits.row(slot.logits_row);
            for (int j = 0; j < cfg.vocab_size; ++j) dr[j] += std::exp(zr[j] - mx) / z;
            dr[slot.gold] -= T(1);
        }
    }
    check(std::isfinite(stats.loss), errc::numeric, "non-finite training loss");
    if (!grads) return stats;

    // accumulate into a fresh map and merge once at the end, so feeding the
    // same example twice yields exactly twice the gradient
    GradsT<T> G;
    add_inplace(G.at_like("unembed", d, cfg.vocab_size), mm_AtB(x, dlogits));
    MatT<T> dx = mm_ABt(dlogits, unembed);

    for (int l = cfg.num_layers; l >= 1; --l) {
        LayerCache& c = caches[static_cast<size_t>(l - 1)];
        // ffn block: dx is the gradient at x_out
        add_inplace(G.at_like(layer_param_name(l, "ffn.down"), cfg.ffn_dim, d),
                    mm_AtB(c.up_act, dx));
        MatT<T> da = mm_ABt(dx, params.get(layer_param_name(l, "ffn.down")));
        MatT<T> du = std::move(da);
        for (size_t i = 0; i < du.data.size(); ++i) {
            const T u = c.up_pre.data[i];
            const T sg = sigmoid(u);
            du.data[i] *= sg * (T(1) + u * (T(1) - sg));
        }
        add_inplace(G.at_like(layer_param_name(l, "ffn.up"), d, cfg.ffn_dim), mm_AtB(c.h2, du));
        MatT<T> dh2 = mm_ABt(du, params.get(layer_param_name(l, "ffn.up")));
        MatT<T> dx_mid = dx;  // residual branch
        rms_bwd(dh2, c.x_mid, params.get(layer_param_name(l, "norm.ffn")), c.inv_r_ffn, dx_mid,
                G.at_like(layer_param_name(l, "norm.ffn"), 1, d));

        // attention block
        add_inplace(G.at_like(layer_param_name(l, "attn.o"), d, d), mm_AtB(c.ctx, dx_mid));
        MatT<T> dctx = mm_ABt(dx_mid, params.get(layer_param_name(l, "attn.o")));
        MatT<T> dq = MatT<T>::zeros(n, d), dk = MatT<T>::zeros(n, d), dv = MatT<T>::zeros(n, d);
        for (int head = 0; head < cfg.num_heads; ++head) {
            const int c0 = head * hd;
            MatT<T> dctx_h = slice_head(dctx, c0, hd);
            MatT<T> k_h = slice_head(c.k, c0, hd);
            MatT<T> v_h = slice_head(c.v, c0, hd);
            MatT<T> q_h = slice_head(c.q, c0, hd);
            const MatT<T>& p = c.probs[static_cast<size_t>(head)];
            MatT<T> dp = mm_ABt(dctx_h, v_h);
            paste_head(dv, mm_AtB(p, dctx_h), c0);
            MatT<T> ds = MatT<T>::zeros(n, n);
            for (int i = 0; i < n; ++i) {
                const T* pr = p.row(i);
                const T* dpr = dp.row(i);
                T dot = T(0);
                for (int j = 0; j <= i; ++j) dot += pr[j] * dpr[j];
                T* dsr = ds.row(i);
                for (int j = 0; j <= i; ++j) dsr[j] = pr[j] * (dpr[j] - dot);
            }
            MatT<T> dq_h = mm(ds, k_h);
            for (auto& v2 : dq_h.data) v2 *= scale;
            paste_head(dq, dq_h, c0);
            MatT<T> dk_h = mm_AtB(ds, q_h);
            for (auto& v2 : dk_h.data) v2 *= scale;
            paste_head(dk, dk_h, c0);
        }
        add_inplace(G.at_like(layer_param_name(l, "attn.q"), d, d), mm_AtB(c.h, dq));
        add_inplace(G.at_like(layer_param_name(l, "attn.k"), d, d), mm_AtB(c.h, dk));
        add_inplace(G.at_like(layer_param_name(l, "attn.v"), d, d), mm_AtB(c.h, dv));
        MatT<T> dh = mm_ABt(dq, params.get(layer_param_name(l, "attn.q")));
        add_inplace(dh, mm_ABt(dk, params.get(layer_param_name(l, "attn.k"))));
        add_inplace(dh, mm_ABt(dv, params.get(layer_param_name(l, "attn.v"))));
        MatT<T> dx_in = dx_mid;  // residual branch
        rms_bwd(dh, c.x_in, params.get(layer_param_name(l, "norm.attn")), c.inv_r_attn, dx_in,
                G.at_like(layer_param_name(l, "norm.attn"), 1, d));
        dx = std::move(dx_in);
    }

    // embedding backward
    MatT<T>& dtok = G.at_like("embed.tok", cfg.vocab_size, d);
    MatT<T>& dpos = G.at_like("embed.pos", cfg.max_seq_len, d);
    MatT<T>* dproj = nullptr;
    if (n_vis > 0) dproj = &G.at_like("projector", cfg.vision_feature_dim, d);
    const int vis_begin = ex.n_pre;
    for (int i = 0; i < n; ++i) {
        const T* dr = dx.row(i);
        T* dp = dpos.row(i);
        for (int j = 0; j < d; ++j) dp[j] += dr[j];
        const int t = row_token[static_cast<size_t>(i)];
        if (t >= 0) {
            T* dt = dtok.row(t);
            for (int j = 0; j < d; ++j) dt[j] += dr[j];
        } else {
            const T* f = vis_feats.row(i - vis_begin);
            for (int fdim = 0; fdim < vis_feats.cols; ++fdim) {
                const T fv = f[fdim];
                if (fv == T(0)) continue;
                T* pr = dproj->row(fdim);
                for (int j = 0; j < d; ++j) pr[j] += fv * dr[j];
            }
        }
    }
    grads->add(G);
    return stats;
}

template struct MatT<float>;
template struct MatT<double>;
template struct ParamsT<float>;
template struct ParamsT<double>;
template struct GradsT<float>;
template struct GradsT<double>;

template MatT<float> mat_from_tensor<float>(const Tensor&);
template MatT<double> mat_from_tensor<double>(const Tensor&);
template Tensor tensor_from_mat<float>(const MatT<float>&, const std::vector<int>&);
template Tensor tensor_from_mat<double>(const MatT<double>&, const std::vector<int>&);
template ParamsT<float> params_from_checkpoint<float>(const Checkpoint&);
template ParamsT<double> params_from_checkpoint<double>(const Checkpoint&);
template Checkpoint params_to_checkpoint<float>(const ParamsT<float>&, const ModelConfig&, CkptKind);
template Checkpoint params_to_checkpoint<double>(const ParamsT<double>&, const ModelConfig&, CkptKind);
template LossStats example_loss<float>(const ParamsT<float>&, const ModelConfig&, const TaskExample&,
                                       GradsT<float>*);
template LossStats example_loss<double>(const ParamsT<double>&, const ModelConfig&,
                                        const TaskExample&, GradsT<double>*);

}  // namespace plab

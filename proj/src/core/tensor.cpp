#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace plab {

static int64_t shape_numel(const std::vector<int>& shape) {
    if (shape.empty()) return 0;
    int64_t n = 1;
    for (int d : shape) {
        check(d >= 0, errc::invalid_argument, "negative dimension in tensor shape");
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    check(shape_numel(shape) == static_cast<int64_t>(data.size()), errc::invalid_argument,
          "tensor data length does not match shape");
}

Tensor Tensor::zeros(const std::vector<int>& shape) {
    Tensor t;
    t.shape = shape;
    t.data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
    return t;
}

Tensor Tensor::full(const std::vector<int>& shape, float value) {
    Tensor t;
    t.shape = shape;
    t.data.assign(static_cast<size_t>(shape_numel(shape)), value);
    return t;
}

Tensor Tensor::randn(const std::vector<int>& shape, Rng& rng, float stddev) {
    Tensor t;
    t.shape = shape;
    t.data.resize(static_cast<size_t>(shape_numel(shape)));
    for (auto& v : t.data) v = static_cast<float>(rng.normal()) * stddev;
    return t;
}

int64_t Tensor::numel() const {
    return shape_numel(shape);
}

int Tensor::rows() const {
    check(ndim() == 2, errc::dim_mismatch, "rows() requires a 2-D tensor");
    return shape[0];
}

int Tensor::cols() const {
    check(ndim() == 2, errc::dim_mismatch, "cols() requires a 2-D tensor");
    return shape[1];
}

AttnMask AttnMask::all_permitted(int n_query, int n_key) {
    AttnMask m;
    m.n_query = n_query;
    m.n_key = n_key;
    m.causal = false;
    m.allowed.assign(static_cast<size_t>(n_query) * static_cast<size_t>(n_key), 1);
    return m;
}

AttnMask AttnMask::causal_block(int n_query, int n_key, int query_pos0) {
    AttnMask m = all_permitted(n_query, n_key);
    m.causal = true;
    for (int i = 0; i < n_query; ++i)
        for (int j = query_pos0 + i + 1; j < n_key; ++j) m.ban(i, j);
    return m;
}

AttnMask AttnMask::causal_mask(int n) { return causal_block(n, n, 0); }

AttnMask AttnMask::decode_row(int n_key, int query_pos) {
    return causal_block(1, n_key, query_pos);
}

void AttnMask::ban_key_for_all_queries(int j) {
    for (int i = 0; i < n_query; ++i) ban(i, j);
}

void ensure_finite(const Tensor& t, const char* where) {
    for (float v : t.data) {
        if (!std::isfinite(v)) fail(errc::numeric, std::string("non-finite value in ") + where);
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.ndim() == 2 && b.ndim() == 2, errc::dim_mismatch, "matmul requires 2-D tensors");
    const int n = a.shape[0], k = a.shape[1], m = b.shape[1];
    check(b.shape[0] == k, errc::dim_mismatch, "matmul inner dimensions disagree");
    Tensor c = Tensor::zeros({n, m});
    const float* bd = b.data.data();
    for (int i = 0; i < n; ++i) {
        const float* ar = a.row(i);
        float* cr = c.row(i);
        for (int kk = 0; kk < k; ++kk) {
            const float aik = ar[kk];
            const float* br = bd + static_cast<size_t>(kk) * static_cast<size_t>(m);
            for (int j = 0; j < m; ++j) cr[j] += aik * br[j];
        }
    }
    ensure_finite(c, "matmul");
    return c;
}

Tensor masked_softmax(const Tensor& scores, const AttnMask& mask) {
    check(scores.ndim() == 2, errc::dim_mismatch, "masked_softmax requires a 2-D tensor");
    const int nq = scores.shape[0], nk = scores.shape[1];
    check(mask.n_query == nq && mask.n_key == nk, errc::dim_mismatch,
          "mask dimensions do not match scores");
    Tensor out = Tensor::zeros({nq, nk});
    for (int i = 0; i < nq; ++i) {
        const float* s = scores.row(i);
        float* o = out.row(i);
        float mx = -std::numeric_limits<float>::infinity();
        bool any = false;
        for (int j = 0; j < nk; ++j) {
            if (mask.is_allowed(i, j)) {
                mx = std::max(mx, s[j]);
                any = true;
            }
        }
        if (!any) fail(errc::invalid_argument, "masked_softmax: query row has no permitted key");
        float denom = 0.0f;
        for (int j = 0; j < nk; ++j) {
            if (mask.is_allowed(i, j)) {
                o[j] = std::exp(s[j] - mx);
                denom += o[j];
            }
        }
        const float inv = 1.0f / denom;
        for (int j = 0; j < nk; ++j)
            if (mask.is_allowed(i, j)) o[j] *= inv;
    }
    ensure_finite(out, "masked_softmax");
    return out;
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, float eps) {
    check(x.ndim() == 2, errc::dim_mismatch, "rms_norm requires a 2-D tensor");
    const int n = x.shape[0], d = x.shape[1];
    check(d > 0, errc::invalid_argument, "rms_norm: zero-length row");
    check(gain.numel() == d, errc::dim_mismatch, "rms_norm: gain length must equal row width");
    Tensor out = Tensor::zeros({n, d});
    for (int i = 0; i < n; ++i) {
        const float* xr = x.row(i);
        float* o = out.row(i);
        float ss = 0.0f;
        for (int j = 0; j < d; ++j) ss += xr[j] * xr[j];
        const float inv = 1.0f / std::sqrt(ss / static_cast<float>(d) + eps);
        for (int j = 0; j < d; ++j) o[j] = xr[j] * inv * gain.data[static_cast<size_t>(j)];
    }
    ensure_finite(out, "rms_norm");
    return out;
}

Tensor silu(const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.data) v = v / (1.0f + std::exp(-v));
    ensure_finite(out, "silu");
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    check(a.same_shape(b), errc::dim_mismatch, "add: shape mismatch");
    Tensor out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

Tensor transpose2d(const Tensor& a) {
    const int n = a.rows(), m = a.cols();
    Tensor out = Tensor::zeros({m, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

int argmax_row(const Tensor& t, int r) {
    const int m = t.cols();
    const float* p = t.row(r);
    int best = 0;
    for (int j = 1; j < m; ++j)
        if (p[j] > p[best]) best = j;
    return best;
}

}  // namespace plab

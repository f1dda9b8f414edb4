#pragma once

#include <cstdint>
#include <vector>

#include "common.hpp"

namespace plab {

// Dense row-major f32 tensor. All kernels reject non-finite results so a
// NaN/Inf cannot propagate silently through a forward pass.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<float> d);

    static Tensor zeros(const std::vector<int>& shape);
    static Tensor full(const std::vector<int>& shape, float value);
    // normal(0, stddev) init, deterministic for a fixed rng state
    static Tensor randn(const std::vector<int>& shape, Rng& rng, float stddev);

    int64_t numel() const;
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    // 2-D views
    int rows() const;
    int cols() const;
    float* row(int r) { return data.data() + static_cast<size_t>(r) * static_cast<size_t>(cols()); }
    const float* row(int r) const {
        return data.data() + static_cast<size_t>(r) * static_cast<size_t>(cols());
    }
    float& at(int r, int c) { return data[static_cast<size_t>(r) * static_cast<size_t>(cols()) + static_cast<size_t>(c)]; }
    float at(int r, int c) const {
        return data[static_cast<size_t>(r) * static_cast<size_t>(cols()) + static_cast<size_t>(c)];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

// Attention permission grid over (query, key) pairs plus the causal flag.
// The grid is authoritative; the flag records how it was built.
struct AttnMask {
    int n_query = 0;
    int n_key = 0;
    bool causal = false;
    std::vector<uint8_t> allowed;  // n_query * n_key, 1 = permitted

    static AttnMask all_permitted(int n_query, int n_key);
    static AttnMask causal_mask(int n);
    // causal mask for a block of n_query rows at absolute positions
    // query_pos0 .. query_pos0 + n_query - 1 over n_key cached keys
    static AttnMask causal_block(int n_query, int n_key, int query_pos0);
    // single-row mask for one decode step: query at absolute position
    // `query_pos` over `n_key` cached keys
    static AttnMask decode_row(int n_key, int query_pos);

    void ban(int i, int j) { allowed[static_cast<size_t>(i) * static_cast<size_t>(n_key) + static_cast<size_t>(j)] = 0; }
    void ban_key_for_all_queries(int j);
    bool is_allowed(int i, int j) const {
        return allowed[static_cast<size_t>(i) * static_cast<size_t>(n_key) + static_cast<size_t>(j)] != 0;
    }
};

// C = A @ B for 2-D tensors; inner dimensions must agree.
Tensor matmul(const Tensor& a, const Tensor& b);

// Row-wise softmax over permitted keys only. Banned entries are exactly 0,
// permitted entries use max-subtraction over the permitted set. A fully
// banned query row is an error.
Tensor masked_softmax(const Tensor& scores, const AttnMask& mask);

// Root-mean-square normalization per row, multiplied by `gain`.
Tensor rms_norm(const Tensor& x, const Tensor& gain, float eps = 1e-6f);

// x * sigmoid(x), elementwise
Tensor silu(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);

// argmax over one row; ties resolve to the lowest index
int argmax_row(const Tensor& t, int r);

// throws errc::numeric if any value is NaN/Inf
void ensure_finite(const Tensor& t, const char* where);

}  // namespace plab

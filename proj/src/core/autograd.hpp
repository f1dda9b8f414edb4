#pragma once

#include <map>
#include <string>
#include <vector>

#include "model.hpp"
#include "taskgen.hpp"

namespace plab {

// Training-side forward/backward. The whole engine is templated on the
// scalar type: the float instantiation is what the optimizer consumes, the
// double instantiation exists so gradients can be checked against central
// finite differences without f32 cancellation noise drowning the comparison.
// Both instantiations share every line of arithmetic.

template <typename T>
struct MatT {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    static MatT zeros(int r, int c) {
        MatT m;
        m.rows = r;
        m.cols = c;
        m.data.assign(static_cast<size_t>(r) * static_cast<size_t>(c), T(0));
        return m;
    }
    T* row(int r) { return data.data() + static_cast<size_t>(r) * static_cast<size_t>(cols); }
    const T* row(int r) const {
        return data.data() + static_cast<size_t>(r) * static_cast<size_t>(cols);
    }
    T& at(int r, int c) { return data[static_cast<size_t>(r) * static_cast<size_t>(cols) + static_cast<size_t>(c)]; }
    T at(int r, int c) const {
        return data[static_cast<size_t>(r) * static_cast<size_t>(cols) + static_cast<size_t>(c)];
    }
    bool empty() const { return data.empty(); }
};

template <typename T>
MatT<T> mat_from_tensor(const Tensor& t);

template <typename T>
Tensor tensor_from_mat(const MatT<T>& m, const std::vector<int>& shape);

template <typename T>
struct ParamsT {
    std::map<std::string, MatT<T>> p;

    const MatT<T>& get(const std::string& name) const {
        auto it = p.find(name);
        check(it != p.end(), errc::invalid_argument, "missing parameter " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return p.count(name) != 0; }
};

template <typename T>
ParamsT<T> params_from_checkpoint(const Checkpoint& ckpt);

template <typename T>
Checkpoint params_to_checkpoint(const ParamsT<T>& params, const ModelConfig& cfg, CkptKind kind);

template <typename T>
struct GradsT {
    std::map<std::string, MatT<T>> g;

    MatT<T>& at_like(const std::string& name, int rows, int cols);
    void add(const GradsT<T>& other);
    void scale(T s);
    double l2_norm() const;
};

struct LossStats {
    double loss = 0.0;  // summed cross-entropy over the target span
    int n_targets = 0;
    int n_correct = 0;  // teacher-forced argmax hits on the target span
};

// Forward pass with cross-entropy over the example's target span; when
// `grads` is non-null the backward pass accumulates parameter gradients into
// it (summed, not averaged, so a duplicated example contributes exactly
// twice the gradient).
template <typename T>
LossStats example_loss(const ParamsT<T>& params, const ModelConfig& cfg, const TaskExample& ex,
                       GradsT<T>* grads);

extern template struct MatT<float>;
extern template struct MatT<double>;
extern template struct ParamsT<float>;
extern template struct ParamsT<double>;
extern template struct GradsT<float>;
extern template struct GradsT<double>;

}  // namespace plab

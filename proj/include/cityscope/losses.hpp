#ifndef CITYSCOPE_LOSSES_HPP
#define CITYSCOPE_LOSSES_HPP

#include <algorithm>
#include <cmath>
#include <vector>

#include "cityscope/errors.hpp"
#include "cityscope/tensor.hpp"

namespace cityscope {

// Stable softmax over one row: p_i = exp(z_i - max z) / sum_j exp(z_j - max z).
template <typename T>
std::vector<T> softmax(const std::vector<T>& logits) {
    if (logits.empty()) fail("NonFiniteInput", "softmax of empty row");
    T max_z = logits[0];
    for (T z : logits) {
        if (!std::isfinite(static_cast<double>(z))) fail("NonFiniteInput", "non-finite logit");
        max_z = std::max(max_z, z);
    }
    std::vector<T> p(logits.size());
    T sum = T(0);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - max_z);
        sum += p[i];
    }
    for (T& v : p) v /= sum;
    return p;
}

// Rowwise softmax of a (B, n) tensor.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    Tensor<T> out(logits.shape);
    int batch = logits.dim(0);
    int n = logits.dim(1);
    for (int b = 0; b < batch; ++b) {
        const T* row = logits.data.data() + static_cast<std::size_t>(b) * n;
        T max_z = row[0];
        for (int i = 1; i < n; ++i) max_z = std::max(max_z, row[i]);
        if (!std::isfinite(static_cast<double>(max_z)))
            fail("NonFiniteInput", "non-finite logits in row " + std::to_string(b));
        T* prow = out.data.data() + static_cast<std::size_t>(b) * n;
        T sum = T(0);
        for (int i = 0; i < n; ++i) {
            prow[i] = std::exp(row[i] - max_z);
            sum += prow[i];
        }
        for (int i = 0; i < n; ++i) prow[i] /= sum;
    }
    return out;
}

// Mean categorical cross-entropy with the true-class probability clamped
// to [1e-7, 1].
template <typename T>
double categorical_cross_entropy(const Tensor<T>& probabilities, const Tensor<T>& onehot) {
    if (!probabilities.same_shape(onehot))
        fail("ShapeMismatch", "probabilities " + shape_to_string(probabilities.shape) +
                                  " vs labels " + shape_to_string(onehot.shape));
    int batch = probabilities.dim(0);
    int n = probabilities.dim(1);
    double total = 0.0;
    for (int b = 0; b < batch; ++b) {
        for (int i = 0; i < n; ++i) {
            std::size_t idx = static_cast<std::size_t>(b) * n + i;
            if (onehot.data[idx] != T(0)) {
                double p = std::clamp(static_cast<double>(probabilities.data[idx]), 1e-7, 1.0);
                total -= std::log(p);
            }
        }
    }
    return total / batch;
}

} // namespace cityscope

#endif

#ifndef CITYSCOPE_NETWORK_HPP
#define CITYSCOPE_NETWORK_HPP

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cityscope/layers.hpp"
#include "cityscope/losses.hpp"
#include "cityscope/params.hpp"
#include "cityscope/rng.hpp"
#include "cityscope/tensor.hpp"

namespace cityscope {

enum class Mode { train, eval };

template <typename T>
struct BatchNormStats {
    std::vector<T> mean;
    std::vector<T> var;  // biased (1/N) batch variance
};

template <typename T>
struct ForwardResult {
    Tensor<T> logits;
    Tensor<T> probabilities;
    // Per-batchnorm batch statistics, train mode only. The caller owns
    // the running-stat update; forward never mutates the store.
    std::map<std::string, BatchNormStats<T>> batch_stats;
};

template <typename T>
struct GradientStore {
    std::map<std::string, Tensor<T>> gradients;  // trainable parameters only
    double loss = 0.0;
};

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;

template <typename T>
using ConstMapRM = Eigen::Map<const MatRM<T>>;

// 3x3 same-padding patches of (B,H,W,C) flattened to (B*H*W, 9*C) in
// (ky, kx, c) column order, matching the (kh, kw, in, out) weight layout.
template <typename T>
MatRM<T> im2col3x3(const Tensor<T>& input) {
    int batch = input.dim(0), height = input.dim(1), width = input.dim(2), ch = input.dim(3);
    MatRM<T> cols(static_cast<Eigen::Index>(batch) * height * width, 9 * ch);
    cols.setZero();
    const T* src = input.data.data();
    for (int b = 0; b < batch; ++b) {
        for (int y = 0; y < height; ++y) {
            for (int ky = 0; ky < 3; ++ky) {
                int sy = y + ky - 1;
                if (sy < 0 || sy >= height) continue;
                for (int x = 0; x < width; ++x) {
                    Eigen::Index row = (static_cast<Eigen::Index>(b) * height + y) * width + x;
                    T* dst = cols.data() + row * cols.cols() + static_cast<Eigen::Index>(ky) * 3 * ch;
                    for (int kx = 0; kx < 3; ++kx) {
                        int sx = x + kx - 1;
                        if (sx < 0 || sx >= width) continue;
                        const T* cell = src + ((static_cast<std::size_t>(b) * height + sy) * width + sx) * ch;
                        std::copy(cell, cell + ch, dst + kx * ch);
                    }
                }
            }
        }
    }
    return cols;
}

// Scatter-add of patch gradients back onto the input grid.
template <typename T>
void col2im3x3(const MatRM<T>& cols, Tensor<T>& dinput) {
    int batch = dinput.dim(0), height = dinput.dim(1), width = dinput.dim(2), ch = dinput.dim(3);
    T* dst = dinput.data.data();
    for (int b = 0; b < batch; ++b) {
        for (int y = 0; y < height; ++y) {
            for (int ky = 0; ky < 3; ++ky) {
                int sy = y + ky - 1;
                if (sy < 0 || sy >= height) continue;
                for (int x = 0; x < width; ++x) {
                    Eigen::Index row = (static_cast<Eigen::Index>(b) * height + y) * width + x;
                    const T* srcrow = cols.data() + row * cols.cols() + static_cast<Eigen::Index>(ky) * 3 * ch;
                    for (int kx = 0; kx < 3; ++kx) {
                        int sx = x + kx - 1;
                        if (sx < 0 || sx >= width) continue;
                        T* cell = dst + ((static_cast<std::size_t>(b) * height + sy) * width + sx) * ch;
                        const T* patch = srcrow + kx * ch;
                        for (int c = 0; c < ch; ++c) cell[c] += patch[c];
                    }
                }
            }
        }
    }
}

inline std::uint64_t dropout_layer_seed(std::uint64_t dropout_seed, std::size_t layer_index) {
    return splitmix64_mix(dropout_seed ^ (0xD1B54A32D192ED03ULL * (layer_index + 1)));
}

// Runs the layer stack once, optionally keeping the caches backward needs.
template <typename T>
class Executor {
public:
    Executor(const ArchitectureSpec& arch, const ParameterStore<T>& params)
        : arch_(arch), params_(params) {}

    ForwardResult<T> run(const Tensor<T>& batch, Mode mode, std::uint64_t dropout_seed,
                         bool keep_caches, std::size_t cache_from_layer = 0) {
        if (batch.shape.size() != 4 || batch.dim(1) != arch_.input_shape[0] ||
            batch.dim(2) != arch_.input_shape[1] || batch.dim(3) != arch_.input_shape[2])
            fail("ShapeMismatch", "batch shape " + shape_to_string(batch.shape) +
                                      " does not match input " +
                                      shape_to_string({batch.dim(0), arch_.input_shape[0],
                                                       arch_.input_shape[1], arch_.input_shape[2]}));
        if (!batch.all_finite()) fail("NonFiniteInput", "non-finite values in input batch");

        mode_ = mode;
        keep_caches_ = keep_caches;
        cache_from_ = cache_from_layer;
        acts_.assign(arch_.layers.size() + 1, Tensor<T>{});
        pool_argmax_.assign(arch_.layers.size(), {});
        dropout_mask_.assign(arch_.layers.size(), {});
        bn_cache_.clear();

        ForwardResult<T> result;
        Tensor<T> cur = batch;
        for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
            if (keep_caches_ && i >= cache_from_) acts_[i] = cur;
            const LayerSpec& layer = arch_.layers[i];
            switch (layer.kind) {
                case LayerKind::conv2d: cur = conv_forward(layer, cur); break;
                case LayerKind::batchnorm: cur = batchnorm_forward(layer, i, cur, result); break;
                case LayerKind::relu: cur = relu_forward(cur); break;
                case LayerKind::maxpool: cur = maxpool_forward(i, cur); break;
                case LayerKind::dropout: cur = dropout_forward(layer, i, cur, dropout_seed); break;
                case LayerKind::flatten: cur = flatten_forward(cur); break;
                case LayerKind::dense: cur = dense_forward(layer, cur); break;
                case LayerKind::softmax:
                    result.logits = cur;
                    cur = softmax_rows(cur);
                    break;
            }
        }
        result.probabilities = std::move(cur);
        return result;
    }

    // Backward from mean cross-entropy at the logits; fills gradients for
    // trainable parameters and stops below `stop_layer`.
    void backward(const Tensor<T>& probabilities, const Tensor<T>& onehot,
                  const TrainabilityMask& mask, std::size_t stop_layer,
                  std::map<std::string, Tensor<T>>& grads) {
        int batch = probabilities.dim(0);
        Tensor<T> delta(probabilities.shape);
        for (std::size_t i = 0; i < delta.size(); ++i)
            delta.data[i] = (probabilities.data[i] - onehot.data[i]) / static_cast<T>(batch);

        // softmax+cross-entropy fold to (p - y)/B at the logits, so the
        // loop starts at the layer below softmax and stops at the first
        // trainable layer.
        for (std::size_t k = arch_.layers.size() - 1; k-- > stop_layer;) {
            const LayerSpec& layer = arch_.layers[k];
            bool need_dx = k > stop_layer;
            switch (layer.kind) {
                case LayerKind::conv2d: delta = conv_backward(layer, k, delta, mask, need_dx, grads); break;
                case LayerKind::batchnorm: delta = batchnorm_backward(layer, k, delta, mask, grads); break;
                case LayerKind::relu: delta = relu_backward(k, delta); break;
                case LayerKind::maxpool: delta = maxpool_backward(k, delta); break;
                case LayerKind::dropout: delta = dropout_backward(layer, k, delta); break;
                case LayerKind::flatten: delta = flatten_backward(k, delta); break;
                case LayerKind::dense: delta = dense_backward(layer, k, delta, mask, need_dx, grads); break;
                case LayerKind::softmax: break;  // unreachable, handled above
            }
        }
    }

private:
    const Tensor<T>& param(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) fail("ShapeMismatch", "missing parameter " + name);
        return it->second;
    }

    static bool trainable(const TrainabilityMask& mask, const std::string& name) {
        auto it = mask.find(name);
        return it != mask.end() && it->second;
    }

    Tensor<T> conv_forward(const LayerSpec& layer, const Tensor<T>& input) {
        const Tensor<T>& weight = param(layer.name + ".weight");
        const Tensor<T>& bias = param(layer.name + ".bias");
        int out_ch = weight.dim(3);
        int rows = input.dim(0) * input.dim(1) * input.dim(2);
        MatRM<T> cols = im2col3x3(input);
        ConstMapRM<T> wmat(weight.data.data(), weight.size() / out_ch, out_ch);
        Tensor<T> out({input.dim(0), input.dim(1), input.dim(2), out_ch});
        MapRM<T> omat(out.data.data(), rows, out_ch);
        omat.noalias() = cols * wmat;
        ConstMapRM<T> bvec(bias.data.data(), 1, out_ch);
        omat.rowwise() += bvec.row(0);
        return out;
    }

    Tensor<T> conv_backward(const LayerSpec& layer, std::size_t k, const Tensor<T>& dout,
                            const TrainabilityMask& mask, bool need_dx,
                            std::map<std::string, Tensor<T>>& grads) {
        const Tensor<T>& input = acts_[k];
        const Tensor<T>& weight = param(layer.name + ".weight");
        int out_ch = weight.dim(3);
        Eigen::Index rows = static_cast<Eigen::Index>(input.dim(0)) * input.dim(1) * input.dim(2);
        ConstMapRM<T> dymat(dout.data.data(), rows, out_ch);
        if (trainable(mask, layer.name + ".weight")) {
            MatRM<T> cols = im2col3x3(input);
            Tensor<T> dw(weight.shape);
            MapRM<T> dwmat(dw.data.data(), cols.cols(), out_ch);
            dwmat.noalias() = cols.transpose() * dymat;
            grads[layer.name + ".weight"] = std::move(dw);
        }
        if (trainable(mask, layer.name + ".bias")) {
            Tensor<T> db({out_ch});
            MapRM<T> dbmat(db.data.data(), 1, out_ch);
            dbmat = dymat.colwise().sum();
            grads[layer.name + ".bias"] = std::move(db);
        }
        Tensor<T> dx;
        if (need_dx) {
            ConstMapRM<T> wmat(weight.data.data(), weight.size() / out_ch, out_ch);
            MatRM<T> dcols = dymat * wmat.transpose();
            dx = Tensor<T>(input.shape);
            col2im3x3(dcols, dx);
        }
        return dx;
    }

    Tensor<T> batchnorm_forward(const LayerSpec& layer, std::size_t k, const Tensor<T>& input,
                                ForwardResult<T>& result) {
        int ch = input.dim(3);
        std::size_t n = input.size() / ch;
        const Tensor<T>& gamma = param(layer.name + ".gamma");
        const Tensor<T>& beta = param(layer.name + ".beta");

        std::vector<T> mean(ch, T(0)), var(ch, T(0));
        if (mode_ == Mode::train) {
            for (std::size_t i = 0; i < input.size(); ++i) mean[i % ch] += input.data[i];
            for (int c = 0; c < ch; ++c) mean[c] /= static_cast<T>(n);
            for (std::size_t i = 0; i < input.size(); ++i) {
                T d = input.data[i] - mean[i % ch];
                var[i % ch] += d * d;
            }
            for (int c = 0; c < ch; ++c) var[c] /= static_cast<T>(n);
            result.batch_stats[layer.name] = {mean, var};
        } else {
            const Tensor<T>& rm = param(layer.name + ".running_mean");
            const Tensor<T>& rv = param(layer.name + ".running_var");
            mean.assign(rm.data.begin(), rm.data.end());
            var.assign(rv.data.begin(), rv.data.end());
        }

        std::vector<T> invstd(ch);
        for (int c = 0; c < ch; ++c)
            invstd[c] = T(1) / std::sqrt(var[c] + static_cast<T>(layer.epsilon));
        Tensor<T> out(input.shape);
        for (std::size_t i = 0; i < input.size(); ++i) {
            int c = static_cast<int>(i % ch);
            out.data[i] = gamma.data[c] * (input.data[i] - mean[c]) * invstd[c] + beta.data[c];
        }
        if (keep_caches_ && k >= cache_from_) bn_cache_[k] = {std::move(mean), std::move(invstd)};
        return out;
    }

    Tensor<T> batchnorm_backward(const LayerSpec& layer, std::size_t k, const Tensor<T>& dout,
                                 const TrainabilityMask& mask,
                                 std::map<std::string, Tensor<T>>& grads) {
        const Tensor<T>& input = acts_[k];
        const auto& cache = bn_cache_.at(k);
        const std::vector<T>& mean = cache.first;
        const std::vector<T>& invstd = cache.second;
        int ch = input.dim(3);
        std::size_t n = input.size() / ch;
        const Tensor<T>& gamma = param(layer.name + ".gamma");

        std::vector<T> sum_dy(ch, T(0)), sum_dy_xhat(ch, T(0));
        for (std::size_t i = 0; i < input.size(); ++i) {
            int c = static_cast<int>(i % ch);
            T xhat = (input.data[i] - mean[c]) * invstd[c];
            sum_dy[c] += dout.data[i];
            sum_dy_xhat[c] += dout.data[i] * xhat;
        }
        if (trainable(mask, layer.name + ".gamma")) {
            Tensor<T> dg({ch});
            dg.data = sum_dy_xhat;
            grads[layer.name + ".gamma"] = std::move(dg);
        }
        if (trainable(mask, layer.name + ".beta")) {
            Tensor<T> db({ch});
            db.data = sum_dy;
            grads[layer.name + ".beta"] = std::move(db);
        }
        Tensor<T> dx(input.shape);
        T inv_n = T(1) / static_cast<T>(n);
        for (std::size_t i = 0; i < input.size(); ++i) {
            int c = static_cast<int>(i % ch);
            T xhat = (input.data[i] - mean[c]) * invstd[c];
            dx.data[i] = gamma.data[c] * invstd[c] *
                         (dout.data[i] - sum_dy[c] * inv_n - xhat * sum_dy_xhat[c] * inv_n);
        }
        return dx;
    }

    Tensor<T> relu_forward(const Tensor<T>& input) {
        Tensor<T> out(input.shape);
        for (std::size_t i = 0; i < input.size(); ++i)
            out.data[i] = input.data[i] > T(0) ? input.data[i] : T(0);
        return out;
    }

    Tensor<T> relu_backward(std::size_t k, const Tensor<T>& dout) {
        const Tensor<T>& input = acts_[k];
        Tensor<T> dx(dout.shape);
        for (std::size_t i = 0; i < dout.size(); ++i)
            dx.data[i] = input.data[i] > T(0) ? dout.data[i] : T(0);
        return dx;
    }

    Tensor<T> maxpool_forward(std::size_t k, const Tensor<T>& input) {
        int batch = input.dim(0), height = input.dim(1), width = input.dim(2), ch = input.dim(3);
        int oh = height / 2, ow = width / 2;
        Tensor<T> out({batch, oh, ow, ch});
        std::vector<std::size_t>& argmax = pool_argmax_[k];
        if (keep_caches_ && k >= cache_from_) argmax.resize(out.size());
        std::size_t oi = 0;
        for (int b = 0; b < batch; ++b)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x)
                    for (int c = 0; c < ch; ++c, ++oi) {
                        T best{};
                        std::size_t best_idx = 0;
                        bool first = true;
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                std::size_t idx =
                                    ((static_cast<std::size_t>(b) * height + 2 * y + dy) * width +
                                     2 * x + dx) * ch + c;
                                if (first || input.data[idx] > best) {
                                    best = input.data[idx];
                                    best_idx = idx;
                                    first = false;
                                }
                            }
                        out.data[oi] = best;
                        if (!argmax.empty()) argmax[oi] = best_idx;
                    }
        return out;
    }

    Tensor<T> maxpool_backward(std::size_t k, const Tensor<T>& dout) {
        const Tensor<T>& input = acts_[k];
        Tensor<T> dx(input.shape);
        const std::vector<std::size_t>& argmax = pool_argmax_[k];
        for (std::size_t i = 0; i < dout.size(); ++i) dx.data[argmax[i]] += dout.data[i];
        return dx;
    }

    Tensor<T> dropout_forward(const LayerSpec& layer, std::size_t k, const Tensor<T>& input,
                              std::uint64_t dropout_seed) {
        if (mode_ == Mode::eval || layer.rate == 0.0) return input;
        SplitMix64 rng(dropout_layer_seed(dropout_seed, k));
        Tensor<T> out(input.shape);
        std::vector<std::uint8_t>& mask = dropout_mask_[k];
        mask.resize(input.size());
        T scale = T(1) / static_cast<T>(1.0 - layer.rate);
        for (std::size_t i = 0; i < input.size(); ++i) {
            bool keep = rng.uniform() >= layer.rate;
            mask[i] = keep ? 1 : 0;
            out.data[i] = keep ? input.data[i] * scale : T(0);
        }
        return out;
    }

    Tensor<T> dropout_backward(const LayerSpec& layer, std::size_t k, const Tensor<T>& dout) {
        if (mode_ == Mode::eval || layer.rate == 0.0) return dout;
        const std::vector<std::uint8_t>& mask = dropout_mask_[k];
        Tensor<T> dx(dout.shape);
        T scale = T(1) / static_cast<T>(1.0 - layer.rate);
        for (std::size_t i = 0; i < dout.size(); ++i)
            dx.data[i] = mask[i] ? dout.data[i] * scale : T(0);
        return dx;
    }

    Tensor<T> flatten_forward(const Tensor<T>& input) {
        Tensor<T> out;
        out.shape = {input.dim(0), input.dim(1) * input.dim(2) * input.dim(3)};
        out.data = input.data;
        return out;
    }

    Tensor<T> flatten_backward(std::size_t k, const Tensor<T>& dout) {
        Tensor<T> dx;
        dx.shape = acts_[k].shape;
        dx.data = dout.data;
        return dx;
    }

    Tensor<T> dense_forward(const LayerSpec& layer, const Tensor<T>& input) {
        const Tensor<T>& weight = param(layer.name + ".weight");
        const Tensor<T>& bias = param(layer.name + ".bias");
        int batch = input.dim(0), in_w = weight.dim(0), out_w = weight.dim(1);
        if (input.dim(1) != in_w)
            fail("ShapeMismatch", "dense " + layer.name + " expects width " + std::to_string(in_w));
        Tensor<T> out({batch, out_w});
        ConstMapRM<T> x(input.data.data(), batch, in_w);
        ConstMapRM<T> w(weight.data.data(), in_w, out_w);
        MapRM<T> o(out.data.data(), batch, out_w);
        o.noalias() = x * w;
        ConstMapRM<T> b(bias.data.data(), 1, out_w);
        o.rowwise() += b.row(0);
        return out;
    }

    Tensor<T> dense_backward(const LayerSpec& layer, std::size_t k, const Tensor<T>& dout,
                             const TrainabilityMask& mask, bool need_dx,
                             std::map<std::string, Tensor<T>>& grads) {
        const Tensor<T>& input = acts_[k];
        const Tensor<T>& weight = param(layer.name + ".weight");
        int batch = input.dim(0), in_w = weight.dim(0), out_w = weight.dim(1);
        ConstMapRM<T> x(input.data.data(), batch, in_w);
        ConstMapRM<T> dy(dout.data.data(), batch, out_w);
        if (trainable(mask, layer.name + ".weight")) {
            Tensor<T> dw(weight.shape);
            MapRM<T> dwm(dw.data.data(), in_w, out_w);
            dwm.noalias() = x.transpose() * dy;
            grads[layer.name + ".weight"] = std::move(dw);
        }
        if (trainable(mask, layer.name + ".bias")) {
            Tensor<T> db({out_w});
            MapRM<T> dbm(db.data.data(), 1, out_w);
            dbm = dy.colwise().sum();
            grads[layer.name + ".bias"] = std::move(db);
        }
        Tensor<T> dx;
        if (need_dx) {
            ConstMapRM<T> w(weight.data.data(), in_w, out_w);
            dx = Tensor<T>(input.shape);
            MapRM<T> dxm(dx.data.data(), batch, in_w);
            dxm.noalias() = dy * w.transpose();
        }
        return dx;
    }

    const ArchitectureSpec& arch_;
    const ParameterStore<T>& params_;
    Mode mode_ = Mode::eval;
    bool keep_caches_ = false;
    std::size_t cache_from_ = 0;
    std::vector<Tensor<T>> acts_;
    std::vector<std::vector<std::size_t>> pool_argmax_;
    std::vector<std::vector<std::uint8_t>> dropout_mask_;
    std::map<std::size_t, std::pair<std::vector<T>, std::vector<T>>> bn_cache_;  // mean, invstd
};

// Index of the first layer owning a trainable parameter, or layer count
// when everything is frozen.
inline std::size_t first_trainable_layer(const ArchitectureSpec& arch,
                                         const TrainabilityMask& mask) {
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& l = arch.layers[i];
        for (const char* suffix : {".weight", ".bias", ".gamma", ".beta"}) {
            auto it = mask.find(l.name + suffix);
            if (it != mask.end() && it->second) return i;
        }
    }
    return arch.layers.size();
}

} // namespace detail

template <typename T>
ForwardResult<T> forward(const ArchitectureSpec& arch, const ParameterStore<T>& params,
                         const Tensor<T>& batch, Mode mode, std::uint64_t dropout_seed = 0) {
    detail::Executor<T> exec(arch, params);
    return exec.run(batch, mode, dropout_seed, /*keep_caches=*/false);
}

// Mean cross-entropy loss plus gradients for every trainable parameter.
// Frozen parameters get no gradient entry; layers below the first
// trainable one are skipped in the backward pass.
template <typename T>
GradientStore<T> compute_gradients(const ArchitectureSpec& arch, const ParameterStore<T>& params,
                                   const TrainabilityMask& mask, const Tensor<T>& batch,
                                   const Tensor<T>& onehot, std::uint64_t dropout_seed = 0,
                                   ForwardResult<T>* forward_out = nullptr) {
    if (onehot.shape.size() != 2 || onehot.dim(0) != batch.dim(0) ||
        onehot.dim(1) != arch.num_classes)
        fail("ShapeMismatch", "labels must be (B, num_classes) one-hot rows");
    for (int b = 0; b < onehot.dim(0); ++b) {
        T row_sum = T(0);
        for (int i = 0; i < onehot.dim(1); ++i)
            row_sum += onehot.data[static_cast<std::size_t>(b) * onehot.dim(1) + i];
        if (row_sum != T(1)) fail("ShapeMismatch", "label row " + std::to_string(b) + " is not one-hot");
    }

    std::size_t stop = detail::first_trainable_layer(arch, mask);
    detail::Executor<T> exec(arch, params);
    bool any_trainable = stop < arch.layers.size();
    ForwardResult<T> fwd = exec.run(batch, Mode::train, dropout_seed,
                                    /*keep_caches=*/any_trainable, stop);
    GradientStore<T> out;
    out.loss = categorical_cross_entropy(fwd.probabilities, onehot);
    if (any_trainable) exec.backward(fwd.probabilities, onehot, mask, stop, out.gradients);
    if (forward_out) *forward_out = std::move(fwd);
    return out;
}

} // namespace cityscope

#endif

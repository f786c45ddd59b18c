#ifndef CITYSCOPE_LAYERS_HPP
#define CITYSCOPE_LAYERS_HPP

#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cityscope/errors.hpp"

namespace cityscope {

enum class LayerKind { conv2d, batchnorm, relu, maxpool, dropout, flatten, dense, softmax };

inline std::string layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::dropout: return "dropout";
        case LayerKind::flatten: return "flatten";
        case LayerKind::dense: return "dense";
        case LayerKind::softmax: return "softmax";
    }
    fail("BadConfig", "unknown layer kind");
}

inline LayerKind layer_kind_from_name(const std::string& s) {
    if (s == "conv2d") return LayerKind::conv2d;
    if (s == "batchnorm") return LayerKind::batchnorm;
    if (s == "relu") return LayerKind::relu;
    if (s == "maxpool") return LayerKind::maxpool;
    if (s == "dropout") return LayerKind::dropout;
    if (s == "flatten") return LayerKind::flatten;
    if (s == "dense") return LayerKind::dense;
    if (s == "softmax") return LayerKind::softmax;
    fail("BadConfig", "unknown layer kind '" + s + "'");
}

// conv2d is fixed at kernel 3x3, stride 1, same padding; maxpool at
// window 2x2, stride 2. Only the attributes below vary per layer.
struct LayerSpec {
    LayerKind kind;
    std::string name;
    int filters = 0;        // conv2d
    int width = 0;          // dense
    double rate = 0.0;      // dropout, in [0,1)
    double epsilon = 1e-5;  // batchnorm
    double momentum = 0.9;  // batchnorm running-stat update weight

    static LayerSpec conv2d(std::string name, int filters) {
        LayerSpec l{LayerKind::conv2d, std::move(name)};
        l.filters = filters;
        return l;
    }
    static LayerSpec batchnorm(std::string name) { return {LayerKind::batchnorm, std::move(name)}; }
    static LayerSpec relu(std::string name) { return {LayerKind::relu, std::move(name)}; }
    static LayerSpec maxpool(std::string name) { return {LayerKind::maxpool, std::move(name)}; }
    static LayerSpec dropout(std::string name, double rate) {
        LayerSpec l{LayerKind::dropout, std::move(name)};
        l.rate = rate;
        return l;
    }
    static LayerSpec flatten(std::string name) { return {LayerKind::flatten, std::move(name)}; }
    static LayerSpec dense(std::string name, int width) {
        LayerSpec l{LayerKind::dense, std::move(name)};
        l.width = width;
        return l;
    }
    static LayerSpec softmax(std::string name) { return {LayerKind::softmax, std::move(name)}; }
};

struct ArchitectureSpec {
    std::array<int, 3> input_shape{};  // H, W, 3
    std::vector<LayerSpec> layers;
    int num_classes = 0;
    // Filled by infer_shapes: output shape after each layer,
    // {H, W, C} before flatten and {N} after.
    std::vector<std::vector<int>> output_shapes;
};

// Applies the shape rules layer by layer; throws ShapeUnderflow when a
// spatial dimension reaches 0 and BadConfig on malformed attributes.
inline void infer_shapes(ArchitectureSpec& arch) {
    if (arch.input_shape[0] < 1 || arch.input_shape[1] < 1 || arch.input_shape[2] != 3)
        fail("BadConfig", "input shape must be (H, W, 3) with H, W >= 1");
    arch.output_shapes.clear();
    std::set<std::string> names;
    std::vector<int> cur{arch.input_shape[0], arch.input_shape[1], arch.input_shape[2]};
    for (const LayerSpec& layer : arch.layers) {
        if (layer.name.empty() || !names.insert(layer.name).second)
            fail("BadConfig", "layer names must be unique and non-empty: '" + layer.name + "'");
        bool spatial = cur.size() == 3;
        switch (layer.kind) {
            case LayerKind::conv2d:
                if (!spatial) fail("BadConfig", "conv2d after flatten: " + layer.name);
                if (layer.filters < 1) fail("BadConfig", "conv2d needs filters >= 1: " + layer.name);
                cur = {cur[0], cur[1], layer.filters};
                break;
            case LayerKind::maxpool:
                if (!spatial) fail("BadConfig", "maxpool after flatten: " + layer.name);
                cur = {cur[0] / 2, cur[1] / 2, cur[2]};
                if (cur[0] < 1 || cur[1] < 1)
                    fail("ShapeUnderflow", "spatial dimension reached 0 at layer " + layer.name);
                break;
            case LayerKind::batchnorm:
                if (!spatial) fail("BadConfig", "batchnorm only supported on spatial maps: " + layer.name);
                break;
            case LayerKind::relu:
                break;
            case LayerKind::dropout:
                if (layer.rate < 0.0 || layer.rate >= 1.0)
                    fail("BadConfig", "dropout rate must be in [0,1): " + layer.name);
                break;
            case LayerKind::flatten:
                if (!spatial) fail("BadConfig", "flatten applied twice: " + layer.name);
                cur = {cur[0] * cur[1] * cur[2]};
                break;
            case LayerKind::dense:
                if (spatial) fail("BadConfig", "dense requires flatten first: " + layer.name);
                if (layer.width < 1) fail("BadConfig", "dense needs width >= 1: " + layer.name);
                cur = {layer.width};
                break;
            case LayerKind::softmax:
                if (spatial) fail("BadConfig", "softmax requires a flat vector: " + layer.name);
                break;
        }
        arch.output_shapes.push_back(cur);
    }
    if (arch.num_classes < 2) fail("BadConfig", "num_classes must be >= 2");
    std::size_t n = arch.layers.size();
    if (n < 2 || arch.layers[n - 1].kind != LayerKind::softmax ||
        arch.layers[n - 2].kind != LayerKind::dense ||
        arch.layers[n - 2].width != arch.num_classes)
        fail("BadConfig", "architecture must end with dense(num_classes), softmax");
}

struct VanillaCnnConfig {
    std::vector<int> block_filters{32, 64, 128, 128};
    // 0-based block indices that get a dropout after the pool.
    std::vector<int> dropout_blocks{2, 3};
    double block_dropout_rate = 0.25;
    int dense_width = 256;
    double head_dropout_rate = 0.5;
};

inline ArchitectureSpec build_vanilla_cnn(std::array<int, 3> input_shape, int num_classes,
                                          const VanillaCnnConfig& config = {}) {
    if (num_classes < 2) fail("BadConfig", "num_classes must be >= 2");
    if (input_shape[0] < 16 || input_shape[1] < 16)
        fail("BadConfig", "vanilla CNN needs input H, W >= 16");
    for (int f : config.block_filters)
        if (f < 1) fail("BadConfig", "filter counts must be positive");

    ArchitectureSpec arch;
    arch.input_shape = input_shape;
    arch.num_classes = num_classes;
    for (std::size_t b = 0; b < config.block_filters.size(); ++b) {
        std::string i = std::to_string(b + 1);
        arch.layers.push_back(LayerSpec::conv2d("conv" + i, config.block_filters[b]));
        arch.layers.push_back(LayerSpec::batchnorm("bn" + i));
        arch.layers.push_back(LayerSpec::relu("relu" + i));
        arch.layers.push_back(LayerSpec::maxpool("pool" + i));
        for (int d : config.dropout_blocks)
            if (d == static_cast<int>(b))
                arch.layers.push_back(LayerSpec::dropout("drop" + i, config.block_dropout_rate));
    }
    arch.layers.push_back(LayerSpec::flatten("flatten"));
    arch.layers.push_back(LayerSpec::dense("dense1", config.dense_width));
    arch.layers.push_back(LayerSpec::relu("relu_dense1"));
    arch.layers.push_back(LayerSpec::dropout("drop_dense1", config.head_dropout_rate));
    arch.layers.push_back(LayerSpec::dense("output", num_classes));
    arch.layers.push_back(LayerSpec::softmax("softmax"));
    infer_shapes(arch);
    return arch;
}

struct Vgg16HeadConfig {
    int dense_width = 256;
    double dropout_rate = 0.5;
};

inline bool is_vgg_backbone_layer(const std::string& name) {
    return name.rfind("block", 0) == 0;
}

// Canonical batchnorm-free VGG16 convolutional stack plus a small dense
// head. The returned mask is the stage-1 state: backbone frozen, head
// trainable.
inline std::pair<ArchitectureSpec, std::map<std::string, bool>>
build_vgg16_transfer(std::array<int, 3> input_shape, int num_classes,
                     const Vgg16HeadConfig& config = {}) {
    if (num_classes < 2) fail("BadConfig", "num_classes must be >= 2");
    if (input_shape[0] < 32 || input_shape[1] < 32)
        fail("BadConfig", "VGG16 needs input H, W >= 32");

    static const int kBlockConvs[5] = {2, 2, 3, 3, 3};
    static const int kBlockChannels[5] = {64, 128, 256, 512, 512};

    ArchitectureSpec arch;
    arch.input_shape = input_shape;
    arch.num_classes = num_classes;
    for (int b = 0; b < 5; ++b) {
        std::string bi = std::to_string(b + 1);
        for (int c = 0; c < kBlockConvs[b]; ++c) {
            std::string name = "block" + bi + "_conv" + std::to_string(c + 1);
            arch.layers.push_back(LayerSpec::conv2d(name, kBlockChannels[b]));
            arch.layers.push_back(LayerSpec::relu(name + "_relu"));
        }
        arch.layers.push_back(LayerSpec::maxpool("block" + bi + "_pool"));
    }
    arch.layers.push_back(LayerSpec::flatten("flatten"));
    arch.layers.push_back(LayerSpec::dense("head_dense", config.dense_width));
    arch.layers.push_back(LayerSpec::relu("head_relu"));
    arch.layers.push_back(LayerSpec::dropout("head_drop", config.dropout_rate));
    arch.layers.push_back(LayerSpec::dense("output", num_classes));
    arch.layers.push_back(LayerSpec::softmax("softmax"));
    infer_shapes(arch);

    std::map<std::string, bool> mask;
    for (const LayerSpec& l : arch.layers) {
        if (l.kind == LayerKind::conv2d || l.kind == LayerKind::dense) {
            bool trainable = !is_vgg_backbone_layer(l.name);
            mask[l.name + ".weight"] = trainable;
            mask[l.name + ".bias"] = trainable;
        }
    }
    return {arch, mask};
}

// Shapes of every parameter tensor the architecture requires.
// Conv weight layout is (kh, kw, in, out); dense weight is (in, out).
struct ParameterInfo {
    std::string name;
    std::vector<int> shape;
    bool learnable;  // false for batchnorm running stats
};

inline std::vector<ParameterInfo> parameter_infos(const ArchitectureSpec& arch) {
    std::vector<ParameterInfo> out;
    std::vector<int> cur{arch.input_shape[0], arch.input_shape[1], arch.input_shape[2]};
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& l = arch.layers[i];
        if (l.kind == LayerKind::conv2d) {
            int in_ch = cur[2];
            out.push_back({l.name + ".weight", {3, 3, in_ch, l.filters}, true});
            out.push_back({l.name + ".bias", {l.filters}, true});
        } else if (l.kind == LayerKind::dense) {
            int in_w = cur[0];
            out.push_back({l.name + ".weight", {in_w, l.width}, true});
            out.push_back({l.name + ".bias", {l.width}, true});
        } else if (l.kind == LayerKind::batchnorm) {
            int ch = cur[2];
            out.push_back({l.name + ".gamma", {ch}, true});
            out.push_back({l.name + ".beta", {ch}, true});
            out.push_back({l.name + ".running_mean", {ch}, false});
            out.push_back({l.name + ".running_var", {ch}, false});
        }
        cur = arch.output_shapes[i];
    }
    return out;
}

struct ParameterCounts {
    long long total = 0;
    long long trainable = 0;
    long long frozen = 0;
};

// Learnable parameters only; batchnorm running stats are excluded.
inline ParameterCounts count_parameters(const ArchitectureSpec& arch,
                                        const std::map<std::string, bool>& mask) {
    ParameterCounts counts;
    for (const ParameterInfo& info : parameter_infos(arch)) {
        if (!info.learnable) continue;
        long long n = 1;
        for (int d : info.shape) n *= d;
        counts.total += n;
        auto it = mask.find(info.name);
        bool trainable = it != mask.end() && it->second;
        (trainable ? counts.trainable : counts.frozen) += n;
    }
    return counts;
}

} // namespace cityscope

#endif

#ifndef CITYSCOPE_PARAMS_HPP
#define CITYSCOPE_PARAMS_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cityscope/layers.hpp"
#include "cityscope/rng.hpp"
#include "cityscope/tensor.hpp"

namespace cityscope {

template <typename T>
using ParameterStore = std::map<std::string, Tensor<T>>;

using TrainabilityMask = std::map<std::string, bool>;

// He-uniform weights over [-sqrt(6/fan_in), +sqrt(6/fan_in)], zero
// biases, identity batchnorm. One splitmix64 stream drawn in parameter
// order, so a seed pins the whole store.
template <typename T>
ParameterStore<T> init_parameters(const ArchitectureSpec& arch, std::uint64_t seed) {
    SplitMix64 rng(seed);
    ParameterStore<T> store;
    for (const ParameterInfo& info : parameter_infos(arch)) {
        Tensor<T> t(info.shape);
        if (info.name.ends_with(".weight")) {
            // conv fan_in = kh*kw*in, dense fan_in = in
            long long fan_in = 1;
            for (std::size_t i = 0; i + 1 < info.shape.size(); ++i) fan_in *= info.shape[i];
            double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            for (T& v : t.data) v = static_cast<T>(rng.uniform_symmetric(bound));
        } else if (info.name.ends_with(".gamma") || info.name.ends_with(".running_var")) {
            for (T& v : t.data) v = T(1);
        }
        // bias, beta, running_mean stay zero
        store.emplace(info.name, std::move(t));
    }
    return store;
}

// Trainable-by-default mask over the store's learnable parameters.
inline TrainabilityMask full_trainable_mask(const ArchitectureSpec& arch) {
    TrainabilityMask mask;
    for (const ParameterInfo& info : parameter_infos(arch))
        if (info.learnable) mask[info.name] = true;
    return mask;
}

struct WeightLoadReport {
    std::vector<std::string> loaded;
    std::vector<std::string> ignored;  // bundle tensors with no matching parameter
    std::vector<std::string> untouched;  // store parameters the bundle did not cover
};

namespace detail {

inline std::vector<float> read_f32_file(const std::filesystem::path& path, std::size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("CorruptBundle", "cannot open tensor file " + path.string());
    std::vector<float> values(count);
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float))
        fail("CorruptBundle", "tensor file too short: " + path.string());
    return values;
}

} // namespace detail

// Loads a weight bundle (directory with manifest.json plus one raw
// little-endian f32 file per tensor) into the store. Bundle tensors with
// a matching name and shape replace the store entry; everything else is
// reported, not touched.
template <typename T>
WeightLoadReport import_pretrained_weights(const std::filesystem::path& bundle_dir,
                                           const ArchitectureSpec& arch,
                                           ParameterStore<T>& store,
                                           bool strict = false) {
    namespace fs = std::filesystem;
    fs::path manifest_path = bundle_dir / "manifest.json";
    if (!fs::exists(manifest_path))
        fail("CorruptBundle", "missing manifest.json in " + bundle_dir.string());

    nlohmann::json manifest;
    try {
        std::ifstream in(manifest_path);
        in >> manifest;
    } catch (const std::exception& e) {
        fail("CorruptBundle", std::string("bad manifest.json: ") + e.what());
    }
    if (!manifest.is_object()) fail("CorruptBundle", "manifest.json must be an object");

    WeightLoadReport report;
    std::vector<std::string> mismatches;
    for (auto& [name, entry] : manifest.items()) {
        auto it = store.find(name);
        if (it == store.end()) {
            report.ignored.push_back(name);
            continue;
        }
        std::vector<int> shape = entry.at("shape").template get<std::vector<int>>();
        std::string dtype = entry.value("dtype", "f32");
        std::string byte_order = entry.value("byte_order", "little");
        if (dtype != "f32" || byte_order != "little")
            fail("CorruptBundle", "unsupported dtype/byte order for " + name);
        if (shape != it->second.shape) {
            mismatches.push_back(name + " bundle " + shape_to_string(shape) + " vs model " +
                                 shape_to_string(it->second.shape));
            continue;
        }
        std::vector<float> values = detail::read_f32_file(
            bundle_dir / entry.at("file").template get<std::string>(), it->second.size());
        for (std::size_t i = 0; i < values.size(); ++i)
            it->second.data[i] = static_cast<T>(values[i]);
        report.loaded.push_back(name);
    }
    if (!mismatches.empty()) {
        std::string msg = "shape mismatch:";
        for (const std::string& m : mismatches) msg += " " + m + ";";
        fail("ShapeMismatch", msg);
    }
    for (const ParameterInfo& info : parameter_infos(arch)) {
        bool covered = false;
        for (const std::string& n : report.loaded)
            if (n == info.name) { covered = true; break; }
        if (!covered) report.untouched.push_back(info.name);
        if (strict && !covered && is_vgg_backbone_layer(info.name) &&
            info.name.ends_with(".weight"))
            fail("MissingRequired", "bundle lacks backbone tensor " + info.name);
    }
    return report;
}

} // namespace cityscope

#endif

#ifndef CITYSCOPE_CHECKPOINT_HPP
#define CITYSCOPE_CHECKPOINT_HPP

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cityscope/dataset.hpp"
#include "cityscope/image.hpp"
#include "cityscope/layers.hpp"
#include "cityscope/optimizer.hpp"
#include "cityscope/params.hpp"

namespace cityscope {

inline constexpr char kCheckpointMagic[8] = {'C', 'I', 'T', 'Y', 'S', 'C', 'P', '1'};
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json arch_to_json(const ArchitectureSpec& arch) {
    nlohmann::json j;
    j["input_shape"] = arch.input_shape;
    j["num_classes"] = arch.num_classes;
    nlohmann::json layers = nlohmann::json::array();
    for (const LayerSpec& l : arch.layers) {
        nlohmann::json lj;
        lj["kind"] = layer_kind_name(l.kind);
        lj["name"] = l.name;
        switch (l.kind) {
            case LayerKind::conv2d: lj["filters"] = l.filters; break;
            case LayerKind::dense: lj["width"] = l.width; break;
            case LayerKind::dropout: lj["rate"] = l.rate; break;
            case LayerKind::batchnorm:
                lj["epsilon"] = l.epsilon;
                lj["momentum"] = l.momentum;
                break;
            default: break;
        }
        layers.push_back(std::move(lj));
    }
    j["layers"] = std::move(layers);
    return j;
}

inline ArchitectureSpec arch_from_json(const nlohmann::json& j) {
    ArchitectureSpec arch;
    arch.input_shape = j.at("input_shape").get<std::array<int, 3>>();
    arch.num_classes = j.at("num_classes").get<int>();
    for (const auto& lj : j.at("layers")) {
        LayerSpec l{layer_kind_from_name(lj.at("kind").get<std::string>()),
                    lj.at("name").get<std::string>()};
        l.filters = lj.value("filters", 0);
        l.width = lj.value("width", 0);
        l.rate = lj.value("rate", 0.0);
        l.epsilon = lj.value("epsilon", 1e-5);
        l.momentum = lj.value("momentum", 0.9);
        arch.layers.push_back(std::move(l));
    }
    infer_shapes(arch);
    return arch;
}

// Everything inference needs travels with the weights: the architecture,
// trainability mask, class vocabulary and preprocessing settings, plus
// optional optimizer moments for resuming.
struct Checkpoint {
    ArchitectureSpec arch;
    ParameterStore<float> params;
    TrainabilityMask mask;
    std::optional<OptimizerState<float>> optimizer;
    ClassVocabulary vocabulary;
    PreprocessConfig preprocess;
    std::string label;
};

namespace detail {

struct TensorDirEntry {
    std::string name;
    std::string kind;  // "param", "opt_m", "opt_v"
    const Tensor<float>* tensor;
};

} // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::vector<detail::TensorDirEntry> entries;
    for (const auto& [name, t] : ckpt.params) entries.push_back({name, "param", &t});
    if (ckpt.optimizer) {
        for (const auto& [name, t] : ckpt.optimizer->m) entries.push_back({name, "opt_m", &t});
        for (const auto& [name, t] : ckpt.optimizer->v) entries.push_back({name, "opt_v", &t});
    }

    nlohmann::json header;
    header["version"] = kCheckpointVersion;
    header["label"] = ckpt.label;
    header["arch"] = arch_to_json(ckpt.arch);
    header["mask"] = ckpt.mask;
    header["vocabulary"] = ckpt.vocabulary.names;
    header["preprocess"] = {{"target_height", ckpt.preprocess.target_height},
                            {"target_width", ckpt.preprocess.target_width},
                            {"scaling_mode", scaling_mode_name(ckpt.preprocess.scaling_mode)}};
    if (ckpt.optimizer) {
        header["optimizer"] = {{"t", ckpt.optimizer->t},
                               {"learning_rate", ckpt.optimizer->learning_rate}};
    }
    nlohmann::json dir = nlohmann::json::array();
    std::uint64_t offset = 0;  // relative to the start of the tensor section
    for (const auto& e : entries) {
        dir.push_back({{"name", e.name},
                       {"kind", e.kind},
                       {"shape", e.tensor->shape},
                       {"offset", offset}});
        offset += e.tensor->size() * sizeof(float);
    }
    header["tensors"] = std::move(dir);

    std::string header_str = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("IoError", "cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, 8);
    std::uint64_t header_len = header_str.size();
    out.write(reinterpret_cast<const char*>(&header_len), 8);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& e : entries)
        out.write(reinterpret_cast<const char*>(e.tensor->data.data()),
                  static_cast<std::streamsize>(e.tensor->size() * sizeof(float)));
    if (!out) fail("IoError", "write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("MissingFile", "cannot open checkpoint " + path.string());

    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        fail("CorruptCheckpoint", "bad magic in " + path.string());
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), 8);
    if (in.gcount() != 8) fail("CorruptCheckpoint", "truncated header length");
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (static_cast<std::uint64_t>(in.gcount()) != header_len)
        fail("CorruptCheckpoint", "truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const std::exception& e) {
        fail("CorruptCheckpoint", std::string("bad header JSON: ") + e.what());
    }
    int version = header.at("version").get<int>();
    if (version != kCheckpointVersion)
        fail("VersionMismatch", "checkpoint version " + std::to_string(version) +
                                    ", expected " + std::to_string(kCheckpointVersion));

    Checkpoint ckpt;
    ckpt.label = header.value("label", std::string{});
    ckpt.arch = arch_from_json(header.at("arch"));
    ckpt.mask = header.at("mask").get<TrainabilityMask>();
    ckpt.vocabulary.names = header.at("vocabulary").get<std::vector<std::string>>();
    const auto& pp = header.at("preprocess");
    ckpt.preprocess.target_height = pp.at("target_height").get<int>();
    ckpt.preprocess.target_width = pp.at("target_width").get<int>();
    ckpt.preprocess.scaling_mode = scaling_mode_from_name(pp.at("scaling_mode").get<std::string>());
    if (header.contains("optimizer")) {
        OptimizerState<float> state;
        state.t = header["optimizer"].at("t").get<long>();
        state.learning_rate = header["optimizer"].at("learning_rate").get<double>();
        ckpt.optimizer = std::move(state);
    }

    std::streampos tensor_base = in.tellg();
    for (const auto& e : header.at("tensors")) {
        std::string name = e.at("name").get<std::string>();
        std::string kind = e.at("kind").get<std::string>();
        Tensor<float> t(e.at("shape").get<std::vector<int>>());
        in.seekg(tensor_base + static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.size() * sizeof(float)));
        if (static_cast<std::size_t>(in.gcount()) != t.size() * sizeof(float))
            fail("CorruptCheckpoint", "truncated tensor " + name);
        if (kind == "param") ckpt.params.emplace(std::move(name), std::move(t));
        else if (kind == "opt_m" && ckpt.optimizer) ckpt.optimizer->m.emplace(std::move(name), std::move(t));
        else if (kind == "opt_v" && ckpt.optimizer) ckpt.optimizer->v.emplace(std::move(name), std::move(t));
        else fail("CorruptCheckpoint", "unknown tensor kind '" + kind + "'");
    }
    return ckpt;
}

} // namespace cityscope

#endif

#include <fstream>

#include <catch2/catch_amalgamated.hpp>

#include "cityscope/layers.hpp"
#include "cityscope/params.hpp"
#include "testutil.hpp"

using namespace cityscope;
namespace fs = std::filesystem;

TEST_CASE("vanilla CNN spatial trace at 175x175") {
    ArchitectureSpec arch = build_vanilla_cnn({175, 175, 3}, 5);
    // spatial trace 175 -> 87 -> 43 -> 21 -> 10 through the four pools
    std::vector<int> pooled;
    for (std::size_t i = 0; i < arch.layers.size(); ++i)
        if (arch.layers[i].kind == LayerKind::maxpool)
            pooled.push_back(arch.output_shapes[i][0]);
    REQUIRE(pooled == std::vector<int>{87, 43, 21, 10});
    // flatten width 10*10*128
    for (std::size_t i = 0; i < arch.layers.size(); ++i)
        if (arch.layers[i].kind == LayerKind::flatten)
            REQUIRE(arch.output_shapes[i] == std::vector<int>{12800});
    REQUIRE(arch.layers.back().kind == LayerKind::softmax);
}

TEST_CASE("vanilla CNN builds at the 16x16 minimum") {
    ArchitectureSpec arch = build_vanilla_cnn({16, 16, 3}, 2);
    std::vector<int> pooled;
    for (std::size_t i = 0; i < arch.layers.size(); ++i)
        if (arch.layers[i].kind == LayerKind::maxpool)
            pooled.push_back(arch.output_shapes[i][0]);
    REQUIRE(pooled == std::vector<int>{8, 4, 2, 1});
}

TEST_CASE("vanilla CNN rejects bad configs") {
    REQUIRE_ERROR_CODE(build_vanilla_cnn({175, 175, 3}, 1), "BadConfig");
    REQUIRE_ERROR_CODE(build_vanilla_cnn({8, 8, 3}, 5), "BadConfig");
    VanillaCnnConfig config;
    config.block_filters = {32, -1, 64, 64};
    REQUIRE_ERROR_CODE(build_vanilla_cnn({175, 175, 3}, 5, config), "BadConfig");
}

TEST_CASE("VGG16 transfer: backbone shape and stage-1 mask") {
    auto [arch, mask] = build_vgg16_transfer({175, 175, 3}, 5);
    for (std::size_t i = 0; i < arch.layers.size(); ++i)
        if (arch.layers[i].name == "block5_pool")
            REQUIRE(arch.output_shapes[i] == std::vector<int>{5, 5, 512});
    for (std::size_t i = 0; i < arch.layers.size(); ++i)
        if (arch.layers[i].kind == LayerKind::flatten)
            REQUIRE(arch.output_shapes[i] == std::vector<int>{12800});

    // frozen backbone, trainable head
    ParameterCounts counts = count_parameters(arch, mask);
    ParameterCounts head_only;
    for (const ParameterInfo& info : parameter_infos(arch)) {
        if (!info.learnable || is_vgg_backbone_layer(info.name)) continue;
        long long n = 1;
        for (int d : info.shape) n *= d;
        head_only.total += n;
    }
    REQUIRE(counts.trainable == head_only.total);
    REQUIRE(counts.frozen == 14714688);
}

TEST_CASE("VGG16 underflows below 32x32 input") {
    REQUIRE_ERROR_CODE(build_vgg16_transfer({16, 16, 3}, 5), "BadConfig");
    ArchitectureSpec probe;
    probe.input_shape = {16, 16, 3};
    probe.num_classes = 5;
    for (int b = 0; b < 5; ++b)
        probe.layers.push_back(LayerSpec::maxpool("pool" + std::to_string(b)));
    probe.layers.push_back(LayerSpec::flatten("flatten"));
    probe.layers.push_back(LayerSpec::dense("output", 5));
    probe.layers.push_back(LayerSpec::softmax("softmax"));
    REQUIRE_ERROR_CODE(infer_shapes(probe), "ShapeUnderflow");
}

TEST_CASE("parameter count oracles") {
    // conv 3x3, 3 -> 32
    ArchitectureSpec arch = build_vanilla_cnn({175, 175, 3}, 5);
    auto infos = parameter_infos(arch);
    long long conv1 = 0, dense1 = 0;
    for (const ParameterInfo& info : infos) {
        long long n = 1;
        for (int d : info.shape) n *= d;
        if (info.name == "conv1.weight" || info.name == "conv1.bias") conv1 += n;
        if (info.name == "dense1.weight" || info.name == "dense1.bias") dense1 += n;
    }
    REQUIRE(conv1 == 896);
    REQUIRE(dense1 == 3277056);

    TrainabilityMask mask = full_trainable_mask(arch);
    ParameterCounts counts = count_parameters(arch, mask);
    REQUIRE(counts.total == counts.trainable + counts.frozen);
    REQUIRE(counts.frozen == 0);

    // running stats are excluded from counts
    long long learnable_sum = 0;
    for (const ParameterInfo& info : infos)
        if (info.learnable) {
            long long n = 1;
            for (int d : info.shape) n *= d;
            learnable_sum += n;
        }
    REQUIRE(counts.total == learnable_sum);
}

TEST_CASE("init_parameters: batchnorm identity, determinism, He bound") {
    ArchitectureSpec arch = build_vanilla_cnn({175, 175, 3}, 5);
    ParameterStore<float> a = init_parameters<float>(arch, 17);
    ParameterStore<float> b = init_parameters<float>(arch, 17);
    for (const auto& [name, t] : a) {
        REQUIRE(b.at(name).data == t.data);
        if (name.ends_with(".gamma") || name.ends_with(".running_var"))
            for (float v : t.data) REQUIRE(v == 1.0f);
        if (name.ends_with(".beta") || name.ends_with(".bias") ||
            name.ends_with(".running_mean"))
            for (float v : t.data) REQUIRE(v == 0.0f);
    }
    // dense(12800 -> 256) He-uniform bound
    const Tensor<float>& w = a.at("dense1.weight");
    float bound = 0.0216506f;
    float observed = 0.0f;
    for (float v : w.data) {
        REQUIRE(std::abs(v) <= bound * 1.0001f);
        observed = std::max(observed, std::abs(v));
    }
    REQUIRE(observed > bound * 0.98f);  // the bound is actually reached
}

TEST_CASE("weight bundle import") {
    auto [arch, mask] = build_vgg16_transfer({32, 32, 3}, 5);
    ParameterStore<float> store = init_parameters<float>(arch, 3);
    fs::path dir = testutil::fresh_temp_dir("bundle");

    // write a bundle covering every backbone conv weight/bias
    nlohmann::json manifest;
    int file_id = 0;
    for (const ParameterInfo& info : parameter_infos(arch)) {
        if (!is_vgg_backbone_layer(info.name)) continue;
        std::string file = "t" + std::to_string(file_id++) + ".bin";
        std::size_t count = 1;
        for (int d : info.shape) count *= d;
        std::vector<float> values(count, 0.5f);
        std::ofstream(dir / file, std::ios::binary)
            .write(reinterpret_cast<const char*>(values.data()), count * sizeof(float));
        manifest[info.name] = {{"shape", info.shape}, {"file", file},
                               {"dtype", "f32"}, {"byte_order", "little"}};
    }
    std::ofstream(dir / "manifest.json") << manifest.dump();

    WeightLoadReport report = import_pretrained_weights(dir, arch, store, /*strict=*/true);
    REQUIRE(report.loaded.size() == 26);
    REQUIRE(store.at("block1_conv1.weight").data[0] == 0.5f);
    // head untouched
    for (const std::string& name : report.untouched)
        REQUIRE(!name.starts_with("block"));

    // shape mismatch names the offender
    nlohmann::json bad = manifest;
    bad["block1_conv1.weight"]["shape"] = {3, 3, 64, 64};
    std::ofstream(dir / "manifest.json") << bad.dump();
    try {
        import_pretrained_weights(dir, arch, store);
        FAIL("expected ShapeMismatch");
    } catch (const Error& e) {
        REQUIRE(e.code() == "ShapeMismatch");
        REQUIRE(std::string(e.what()).find("block1_conv1") != std::string::npos);
    }

    // empty bundle: fine by default, MissingRequired when strict
    std::ofstream(dir / "manifest.json") << "{}";
    REQUIRE_NOTHROW(import_pretrained_weights(dir, arch, store));
    REQUIRE_ERROR_CODE(import_pretrained_weights(dir, arch, store, true), "MissingRequired");

    // corrupt manifest
    std::ofstream(dir / "manifest.json") << "{not json";
    REQUIRE_ERROR_CODE(import_pretrained_weights(dir, arch, store), "CorruptBundle");
    fs::remove_all(dir);
}

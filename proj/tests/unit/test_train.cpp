#include <fstream>

#include <catch2/catch_amalgamated.hpp>

#include "cityscope/train.hpp"
#include "testutil.hpp"

using namespace cityscope;
namespace fs = std::filesystem;

namespace {

// Two-class net over 8x8 inputs, cheap enough for multi-epoch tests.
ArchitectureSpec small_arch() {
    ArchitectureSpec arch;
    arch.input_shape = {8, 8, 3};
    arch.num_classes = 2;
    arch.layers.push_back(LayerSpec::conv2d("conv1", 4));
    arch.layers.push_back(LayerSpec::batchnorm("bn1"));
    arch.layers.push_back(LayerSpec::relu("relu1"));
    arch.layers.push_back(LayerSpec::maxpool("pool1"));
    arch.layers.push_back(LayerSpec::flatten("flatten"));
    arch.layers.push_back(LayerSpec::dense("output", 2));
    arch.layers.push_back(LayerSpec::softmax("softmax"));
    infer_shapes(arch);
    return arch;
}

DatasetManifest small_manifest(const std::string& tag) {
    fs::path root = testutil::build_city_tree(tag, {"A", "B"}, 12, 16, 16);
    return split_dataset(scan_dataset(root), {0.5, 0.25, 0.25}, 3);
}

} // namespace

TEST_CASE("fit runs to max_epochs and records per-epoch metrics") {
    ArchitectureSpec arch = small_arch();
    DatasetManifest manifest = small_manifest("fitfull");
    BatchLoader loader(manifest, {8, 8, ScalingMode::unit});
    TrainConfig config;
    config.max_epochs = 4;
    config.batch_size = 4;

    FitResult result = fit(arch, init_parameters<float>(arch, 1), full_trainable_mask(arch),
                           manifest, config, loader, "small");
    REQUIRE(result.history.epochs.size() == 4);
    REQUIRE(result.history.stop_reason == StopReason::max_epochs);
    for (int i = 0; i < 4; ++i) {
        const EpochMetrics& e = result.history.epochs[i];
        REQUIRE(e.epoch == i + 1);
        REQUIRE(std::isfinite(e.train_loss));
        REQUIRE(std::isfinite(e.val_loss));
        REQUIRE(e.learning_rate == 1e-3);
    }
    REQUIRE(result.history.best_epoch >= 1);
    REQUIRE(result.history.best_epoch <= 4);
    // best_epoch is the lowest-val-loss epoch, earliest on ties
    double best = result.history.epochs[result.history.best_epoch - 1].val_loss;
    for (const EpochMetrics& e : result.history.epochs) {
        REQUIRE(best <= e.val_loss);
        if (e.val_loss == best) {
            REQUIRE(result.history.best_epoch <= e.epoch);
            break;
        }
    }
    fs::remove_all(manifest.root);
}

TEST_CASE("fit is deterministic under fixed seeds") {
    ArchitectureSpec arch = small_arch();
    DatasetManifest manifest = small_manifest("fitdet");
    TrainConfig config;
    config.max_epochs = 3;
    config.batch_size = 4;

    BatchLoader loader_a(manifest, {8, 8, ScalingMode::unit});
    BatchLoader loader_b(manifest, {8, 8, ScalingMode::unit});
    FitResult a = fit(arch, init_parameters<float>(arch, 5), full_trainable_mask(arch), manifest,
                      config, loader_a, "run");
    FitResult b = fit(arch, init_parameters<float>(arch, 5), full_trainable_mask(arch), manifest,
                      config, loader_b, "run");
    REQUIRE(a.history.epochs.size() == b.history.epochs.size());
    for (std::size_t i = 0; i < a.history.epochs.size(); ++i) {
        REQUIRE(a.history.epochs[i].train_loss == b.history.epochs[i].train_loss);
        REQUIRE(a.history.epochs[i].val_loss == b.history.epochs[i].val_loss);
    }
    for (const auto& [name, t] : a.best_params) REQUIRE(b.best_params.at(name).data == t.data);
    fs::remove_all(manifest.root);
}

TEST_CASE("an impossible min_delta triggers early stopping") {
    ArchitectureSpec arch = small_arch();
    DatasetManifest manifest = small_manifest("fitstop");
    BatchLoader loader(manifest, {8, 8, ScalingMode::unit});
    TrainConfig config;
    config.max_epochs = 10;
    config.batch_size = 4;
    config.early_stop_patience = 1;
    config.early_stop_min_delta = 100.0;  // nothing ever improves by this much

    FitResult result = fit(arch, init_parameters<float>(arch, 1), full_trainable_mask(arch),
                           manifest, config, loader, "stop");
    REQUIRE(result.history.epochs.size() == 2);
    REQUIRE(result.history.stop_reason == StopReason::early_stop);
    fs::remove_all(manifest.root);
}

TEST_CASE("fit requires train and val splits") {
    ArchitectureSpec arch = small_arch();
    fs::path root = testutil::build_city_tree("fitempty", {"A", "B"}, 2, 16, 16);
    DatasetManifest manifest = scan_dataset(root);  // never split
    BatchLoader loader(manifest, {8, 8, ScalingMode::unit});
    TrainConfig config;
    REQUIRE_ERROR_CODE(fit(arch, init_parameters<float>(arch, 1), full_trainable_mask(arch),
                           manifest, config, loader, "x"),
                       "EmptySplit");
    fs::remove_all(root);
}

TEST_CASE("train config file: overrides, comments, unknown keys") {
    fs::path dir = testutil::fresh_temp_dir("cfg");
    std::ofstream(dir / "train.cfg") << "max_epochs = 7   # short run\n"
                                     << "learning_rate = 0.01\n"
                                     << "early_stop_min_delta = 0.002\n"
                                     << "seed_shuffle = 42\n"
                                     << "\n";
    TrainConfig config = load_train_config(dir / "train.cfg");
    REQUIRE(config.max_epochs == 7);
    REQUIRE(config.learning_rate == 0.01);
    REQUIRE(config.early_stop_min_delta == 0.002);
    REQUIRE(config.seeds.shuffle == 42);
    REQUIRE(config.batch_size == 32);  // untouched default

    std::ofstream(dir / "bad.cfg") << "not_a_key = 1\n";
    REQUIRE_ERROR_CODE(load_train_config(dir / "bad.cfg"), "BadConfig");
    REQUIRE_ERROR_CODE(load_train_config(dir / "absent.cfg"), "MissingFile");

    TrainConfig invalid;
    invalid.lr_reduce_factor = 2.0;
    REQUIRE_ERROR_CODE(invalid.validate(), "BadConfig");
    fs::remove_all(dir);
}

TEST_CASE("unfreeze_scope flips exactly the scoped conv layers") {
    auto [arch, mask] = build_vgg16_transfer({32, 32, 3}, 5);
    TrainabilityMask stage2 = unfreeze_scope(arch, mask, "block5");
    REQUIRE(stage2.at("block5_conv1.weight"));
    REQUIRE(stage2.at("block5_conv2.weight"));
    REQUIRE(stage2.at("block5_conv3.weight"));
    REQUIRE(stage2.at("block5_conv3.bias"));
    REQUIRE(!stage2.at("block4_conv3.weight"));
    REQUIRE(!stage2.at("block1_conv1.weight"));
    REQUIRE(stage2.at("output.weight"));  // head stays trainable
    REQUIRE_ERROR_CODE(unfreeze_scope(arch, mask, "block9"), "BadScope");
}

TEST_CASE("two-stage fine-tuning stitches histories at the stage boundary") {
    // conv named like a backbone block so unfreeze_scope applies
    ArchitectureSpec arch;
    arch.input_shape = {8, 8, 3};
    arch.num_classes = 2;
    arch.layers.push_back(LayerSpec::conv2d("block5_conv1", 4));
    arch.layers.push_back(LayerSpec::relu("relu1"));
    arch.layers.push_back(LayerSpec::maxpool("pool1"));
    arch.layers.push_back(LayerSpec::flatten("flatten"));
    arch.layers.push_back(LayerSpec::dense("output", 2));
    arch.layers.push_back(LayerSpec::softmax("softmax"));
    infer_shapes(arch);

    TrainabilityMask stage1_mask = full_trainable_mask(arch);
    stage1_mask["block5_conv1.weight"] = false;
    stage1_mask["block5_conv1.bias"] = false;

    DatasetManifest manifest = small_manifest("finetune");
    BatchLoader loader(manifest, {8, 8, ScalingMode::unit});
    TrainConfig stage1, stage2;
    stage1.max_epochs = 2;
    stage1.batch_size = 4;
    stage2.max_epochs = 2;
    stage2.batch_size = 4;
    stage2.learning_rate = 1e-5;

    FineTuneResult result =
        fine_tune_two_stage(arch, init_parameters<float>(arch, 9), stage1_mask, manifest, stage1,
                            stage2, "block5", loader, "ft");
    REQUIRE(result.history.stage_boundary == 2);
    REQUIRE(result.history.epochs.size() == 4);
    for (int i = 0; i < 4; ++i) REQUIRE(result.history.epochs[i].epoch == i + 1);
    REQUIRE(result.history.epochs[2].learning_rate == 1e-5);
    REQUIRE(result.stage2_mask.at("block5_conv1.weight"));
    fs::remove_all(manifest.root);
}

TEST_CASE("history JSONL round-trips") {
    TrainingHistory history;
    history.label = "demo";
    history.stop_reason = StopReason::early_stop;
    history.best_epoch = 2;
    history.stage_boundary = 1;
    for (int i = 1; i <= 3; ++i) {
        EpochMetrics e;
        e.epoch = i;
        e.train_loss = 1.0 / i;
        e.train_accuracy = 0.5 + 0.1 * i;
        e.val_loss = 1.1 / i;
        e.val_accuracy = 0.4 + 0.1 * i;
        e.learning_rate = 1e-3;
        history.epochs.push_back(e);
    }
    fs::path dir = testutil::fresh_temp_dir("hist");
    save_history(history, dir / "history.jsonl");
    TrainingHistory loaded = load_history(dir / "history.jsonl");
    REQUIRE(loaded.label == "demo");
    REQUIRE(loaded.stop_reason == StopReason::early_stop);
    REQUIRE(loaded.best_epoch == 2);
    REQUIRE(loaded.stage_boundary == 1);
    REQUIRE(loaded.epochs.size() == 3);
    REQUIRE(loaded.epochs[1].val_loss == history.epochs[1].val_loss);
    REQUIRE(loaded.best_val_accuracy() == history.epochs[2].val_accuracy);

    std::ofstream(dir / "empty.jsonl") << "";
    REQUIRE_ERROR_CODE(load_history(dir / "empty.jsonl"), "EmptyHistory");
    fs::remove_all(dir);
}

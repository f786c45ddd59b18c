// cityscope: train, evaluate and run CNN city-image classifiers.
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cityscope/cityscope.hpp"

namespace fs = std::filesystem;
using namespace cityscope;

namespace {

std::array<double, 3> parse_ratios(const std::string& s) {
    std::array<double, 3> ratios{};
    if (std::sscanf(s.c_str(), "%lf,%lf,%lf", &ratios[0], &ratios[1], &ratios[2]) != 3)
        fail("BadRatios", "ratios must be three comma-separated numbers, e.g. 0.70,0.15,0.15");
    return ratios;
}

void write_json(const nlohmann::json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) fail("IoError", "cannot write " + path.string());
    out << j.dump(2) << "\n";
}

EpochObserver progress_printer(const std::string& label) {
    return [label](const EpochMetrics& e) {
        char line[256];
        std::snprintf(line, sizeof(line),
                      "%s epoch %d: train_loss %.4f acc %.3f | val_loss %.4f acc %.3f | lr %.2e (%.1fs)",
                      label.c_str(), e.epoch, e.train_loss, e.train_accuracy, e.val_loss,
                      e.val_accuracy, e.learning_rate, e.wall_seconds);
        log_info(line);
    };
}

struct TrainFlags {
    std::string manifest_path, config_path, weights, out_dir, label;
    std::string scaling = "unit";
    int height = 175, width = 175;
    std::optional<int> epochs, batch_size;
    std::optional<double> lr;
    std::optional<std::uint64_t> seed_init, seed_shuffle, seed_dropout;

    TrainConfig resolve_config() const {
        TrainConfig config =
            config_path.empty() ? TrainConfig{} : load_train_config(config_path);
        if (epochs) config.max_epochs = *epochs;
        if (batch_size) config.batch_size = *batch_size;
        if (lr) config.learning_rate = *lr;
        if (seed_init) config.seeds.init = *seed_init;
        if (seed_shuffle) config.seeds.shuffle = *seed_shuffle;
        if (seed_dropout) config.seeds.dropout = *seed_dropout;
        return config;
    }
};

void add_train_flags(CLI::App* cmd, TrainFlags& flags, bool with_config) {
    cmd->add_option("--manifest", flags.manifest_path, "dataset manifest JSON")->required();
    if (with_config) cmd->add_option("--config", flags.config_path, "key=value training config");
    cmd->add_option("--weights", flags.weights, "pretrained weight bundle directory");
    cmd->add_option("--out-dir", flags.out_dir, "output directory")->required();
    cmd->add_option("--label", flags.label, "run label");
    cmd->add_option("--scaling", flags.scaling, "pixel scaling: unit or imagenet")
        ->check(CLI::IsMember({"unit", "imagenet"}));
    cmd->add_option("--height", flags.height, "input height (default 175)");
    cmd->add_option("--width", flags.width, "input width (default 175)");
    cmd->add_option("--epochs", flags.epochs, "override max_epochs");
    cmd->add_option("--batch-size", flags.batch_size, "override batch_size");
    cmd->add_option("--lr", flags.lr, "override learning_rate");
    cmd->add_option("--seed-init", flags.seed_init, "weight init seed");
    cmd->add_option("--seed-shuffle", flags.seed_shuffle, "batch shuffle seed");
    cmd->add_option("--seed-dropout", flags.seed_dropout, "dropout seed");
}

void save_run(const fs::path& out_dir, const ArchitectureSpec& arch,
              const ParameterStore<float>& params, const TrainabilityMask& mask,
              const DatasetManifest& manifest, const PreprocessConfig& preprocess,
              const std::string& label, const TrainingHistory& history) {
    fs::create_directories(out_dir);
    Checkpoint ckpt;
    ckpt.arch = arch;
    ckpt.params = params;
    ckpt.mask = mask;
    ckpt.vocabulary = manifest.vocabulary;
    ckpt.preprocess = preprocess;
    ckpt.label = label;
    save_checkpoint(ckpt, out_dir / "checkpoint.ckpt");
    save_history(history, out_dir / "history.jsonl");
    log_info("wrote " + (out_dir / "checkpoint.ckpt").string() + " and history.jsonl");
}

int run(int argc, char** argv) {
    CLI::App app{"city-image CNN training and inference"};
    app.require_subcommand(1);

    // scan
    auto* scan = app.add_subcommand("scan", "index a <root>/<Class>/<images> tree");
    std::string scan_root, scan_out;
    scan->add_option("--root", scan_root, "dataset root directory")->required();
    scan->add_option("--out", scan_out, "manifest JSON to write")->required();

    // split
    auto* split = app.add_subcommand("split", "assign stratified train/val/test splits");
    std::string split_manifest, split_ratios = "0.70,0.15,0.15", split_out;
    std::uint64_t split_seed = 0;
    bool split_overwrite = false;
    split->add_option("--manifest", split_manifest, "manifest JSON")->required();
    split->add_option("--ratios", split_ratios, "train,val,test fractions (default 0.70,0.15,0.15)");
    split->add_option("--seed", split_seed, "shuffle seed")->required();
    split->add_option("--out", split_out, "manifest JSON to write")->required();
    split->add_flag("--overwrite", split_overwrite, "replace existing assignments");

    // train
    auto* train = app.add_subcommand("train", "train a model from a split manifest");
    TrainFlags train_flags;
    std::string train_arch = "vanilla";
    train->add_option("--arch", train_arch, "architecture: vanilla or vgg16")
        ->check(CLI::IsMember({"vanilla", "vgg16"}));
    add_train_flags(train, train_flags, true);

    // finetune
    auto* finetune = app.add_subcommand("finetune", "two-stage VGG16 fine-tuning");
    TrainFlags ft_flags;
    std::string ft_config1, ft_config2, ft_scope = "block5";
    finetune->add_option("--config-stage1", ft_config1, "stage-1 key=value config");
    finetune->add_option("--config-stage2", ft_config2, "stage-2 key=value config");
    finetune->add_option("--unfreeze", ft_scope, "backbone scope to unfreeze (default block5)");
    add_train_flags(finetune, ft_flags, false);

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "metrics for a checkpoint on one split");
    std::string eval_manifest, eval_ckpt, eval_split_name = "test", eval_out;
    int eval_batch = 32;
    evaluate->add_option("--manifest", eval_manifest, "manifest JSON")->required();
    evaluate->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    evaluate->add_option("--split", eval_split_name, "train, val or test (default test)")
        ->check(CLI::IsMember({"train", "val", "test"}));
    evaluate->add_option("--batch-size", eval_batch, "evaluation batch size");
    evaluate->add_option("--out", eval_out, "write the report as JSON here too");

    // predict
    auto* predict = app.add_subcommand("predict", "classify a single image");
    std::string pred_image, pred_ckpt;
    int pred_topk = 5;
    predict->add_option("--image", pred_image, "image file")->required();
    predict->add_option("--checkpoint", pred_ckpt, "checkpoint file")->required();
    predict->add_option("--top-k", pred_topk, "classes to list (default 5)");

    // plot
    auto* plot = app.add_subcommand("plot", "accuracy/loss curves from a history file");
    std::string plot_history_path, plot_out;
    plot->add_option("--history", plot_history_path, "history JSON Lines file")->required();
    plot->add_option("--out-dir", plot_out, "directory for the SVG files")->required();

    // compare
    auto* compare = app.add_subcommand("compare", "comparison table over run directories");
    std::vector<std::string> compare_runs_dirs;
    std::string compare_out;
    compare->add_option("--runs", compare_runs_dirs, "run directories (checkpoint.ckpt, history.jsonl, report.json)")
        ->required()
        ->expected(-1);
    compare->add_option("--out", compare_out, "write the comparison as JSON here too");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // --help, exit 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // usage error
    }

    if (scan->parsed()) {
        ScanReport report;
        DatasetManifest manifest = scan_dataset(scan_root, &report);
        save_manifest(manifest, scan_out);
        log_info("indexed " + std::to_string(manifest.records.size()) + " images in " +
                 std::to_string(manifest.vocabulary.size()) + " classes; skipped " +
                 std::to_string(report.skipped_files) + " non-image files");
        return 0;
    }

    if (split->parsed()) {
        DatasetManifest manifest = load_manifest(split_manifest);
        manifest = split_dataset(std::move(manifest), parse_ratios(split_ratios), split_seed,
                                 split_overwrite);
        save_manifest(manifest, split_out);
        log_info("split written to " + split_out);
        return 0;
    }

    if (train->parsed()) {
        DatasetManifest manifest = load_manifest(train_flags.manifest_path);
        TrainConfig config = train_flags.resolve_config();
        PreprocessConfig preprocess{train_flags.height, train_flags.width,
                                    scaling_mode_from_name(train_flags.scaling)};
        std::array<int, 3> input{preprocess.target_height, preprocess.target_width, 3};
        int num_classes = manifest.vocabulary.size();
        std::string label = train_flags.label.empty() ? train_arch : train_flags.label;

        ArchitectureSpec arch;
        TrainabilityMask mask;
        if (train_arch == "vanilla") {
            arch = build_vanilla_cnn(input, num_classes);
            mask = full_trainable_mask(arch);
        } else {
            auto [a, m] = build_vgg16_transfer(input, num_classes);
            arch = std::move(a);
            mask = std::move(m);
        }
        ParameterStore<float> params = init_parameters<float>(arch, config.seeds.init);
        if (!train_flags.weights.empty()) {
            WeightLoadReport report = import_pretrained_weights(train_flags.weights, arch, params);
            log_info("loaded " + std::to_string(report.loaded.size()) + " pretrained tensors");
        }
        BatchLoader loader(manifest, preprocess);
        FitResult result = fit(arch, std::move(params), mask, manifest, config, loader, label, 1,
                               progress_printer(label));
        save_run(train_flags.out_dir, arch, result.best_params, mask, manifest, preprocess, label,
                 result.history);
        return 0;
    }

    if (finetune->parsed()) {
        DatasetManifest manifest = load_manifest(ft_flags.manifest_path);
        TrainConfig stage1 = ft_config1.empty() ? TrainConfig{} : load_train_config(ft_config1);
        TrainConfig stage2 = ft_config2.empty() ? TrainConfig{} : load_train_config(ft_config2);
        if (ft_config2.empty()) stage2.learning_rate = 1e-5;
        if (ft_flags.epochs) { stage1.max_epochs = *ft_flags.epochs; stage2.max_epochs = *ft_flags.epochs; }
        if (ft_flags.batch_size) { stage1.batch_size = *ft_flags.batch_size; stage2.batch_size = *ft_flags.batch_size; }
        if (ft_flags.seed_init) { stage1.seeds.init = *ft_flags.seed_init; }
        if (ft_flags.seed_shuffle) { stage1.seeds.shuffle = stage2.seeds.shuffle = *ft_flags.seed_shuffle; }
        if (ft_flags.seed_dropout) { stage1.seeds.dropout = stage2.seeds.dropout = *ft_flags.seed_dropout; }

        PreprocessConfig preprocess{ft_flags.height, ft_flags.width,
                                    scaling_mode_from_name(ft_flags.scaling)};
        std::array<int, 3> input{preprocess.target_height, preprocess.target_width, 3};
        std::string label = ft_flags.label.empty() ? "vgg16_finetune" : ft_flags.label;

        auto [arch, mask] = build_vgg16_transfer(input, manifest.vocabulary.size());
        ParameterStore<float> params = init_parameters<float>(arch, stage1.seeds.init);
        if (!ft_flags.weights.empty()) {
            WeightLoadReport report = import_pretrained_weights(ft_flags.weights, arch, params);
            log_info("loaded " + std::to_string(report.loaded.size()) + " pretrained tensors");
        }
        BatchLoader loader(manifest, preprocess);
        FineTuneResult result =
            fine_tune_two_stage(arch, std::move(params), mask, manifest, stage1, stage2, ft_scope,
                                loader, label, progress_printer(label));
        save_run(ft_flags.out_dir, arch, result.best_params, result.stage2_mask, manifest,
                 preprocess, label, result.history);
        return 0;
    }

    if (evaluate->parsed()) {
        DatasetManifest manifest = load_manifest(eval_manifest);
        Checkpoint ckpt = load_checkpoint(eval_ckpt);
        BatchLoader loader(manifest, ckpt.preprocess);
        ClassificationReport report = evaluate_split(ckpt.arch, ckpt.params, manifest,
                                                     split_from_name(eval_split_name), eval_batch,
                                                     loader);
        std::cout << report_to_text(report);
        if (!eval_out.empty()) write_json(report_to_json(report), eval_out);
        return 0;
    }

    if (predict->parsed()) {
        PredictionResult result = predict_image(pred_image, fs::path(pred_ckpt), pred_topk);
        for (const auto& [name, p] : result.ranked)
            std::printf("%-16s %.4f\n", name.c_str(), p);
        return 0;
    }

    if (plot->parsed()) {
        TrainingHistory history = load_history(plot_history_path);
        PlotPaths paths = plot_history(history, plot_out);
        log_info("wrote " + paths.accuracy.string() + " and " + paths.loss.string());
        return 0;
    }

    if (compare->parsed()) {
        std::vector<ComparisonEntry> entries;
        for (const std::string& dir : compare_runs_dirs) {
            fs::path run_dir(dir);
            TrainingHistory history = load_history(run_dir / "history.jsonl");
            Checkpoint ckpt = load_checkpoint(run_dir / "checkpoint.ckpt");
            std::ifstream rin(run_dir / "report.json");
            if (!rin) fail("MissingFile", "no report.json in " + dir + " (run `evaluate --out` first)");
            nlohmann::json rj;
            rin >> rj;
            ParameterCounts counts = count_parameters(ckpt.arch, ckpt.mask);
            ComparisonEntry e;
            e.label = history.label.empty() ? run_dir.filename().string() : history.label;
            e.best_val_accuracy = history.best_val_accuracy();
            e.test_accuracy = rj.at("accuracy").get<double>();
            e.test_loss = rj.at("loss").get<double>();
            e.total_params = counts.total;
            e.trainable_params = counts.trainable;
            e.epochs_trained = static_cast<int>(history.epochs.size());
            entries.push_back(std::move(e));
        }
        ComparisonReport report = compare_runs(std::move(entries));
        std::cout << comparison_to_text(report);
        if (!compare_out.empty()) write_json(comparison_to_json(report), compare_out);
        return 0;
    }

    return 2;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

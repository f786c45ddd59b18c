#ifndef CITYSCOPE_TRAIN_HPP
#define CITYSCOPE_TRAIN_HPP

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cityscope/callbacks.hpp"
#include "cityscope/dataset.hpp"
#include "cityscope/evaluation.hpp"
#include "cityscope/network.hpp"
#include "cityscope/optimizer.hpp"

namespace cityscope {

struct TrainSeeds {
    std::uint64_t init = 1;
    std::uint64_t shuffle = 2;
    std::uint64_t dropout = 3;
};

struct TrainConfig {
    int max_epochs = 50;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    int early_stop_patience = 10;
    double early_stop_min_delta = 0.0;
    int lr_reduce_patience = 5;
    double lr_reduce_factor = 0.5;
    double min_lr = 1e-6;
    TrainSeeds seeds;

    void validate() const {
        if (max_epochs < 1 || batch_size < 1) fail("BadConfig", "max_epochs and batch_size must be >= 1");
        if (learning_rate <= 0) fail("BadConfig", "learning_rate must be > 0");
        if (adam_beta1 <= 0 || adam_beta1 >= 1 || adam_beta2 <= 0 || adam_beta2 >= 1)
            fail("BadConfig", "adam betas must be in (0,1)");
        if (early_stop_patience < 1 || lr_reduce_patience < 1)
            fail("BadConfig", "patiences must be >= 1");
        if (lr_reduce_factor <= 0 || lr_reduce_factor >= 1)
            fail("BadConfig", "lr_reduce_factor must be in (0,1)");
    }

    AdamConfig adam() const { return {adam_beta1, adam_beta2, adam_epsilon}; }
};

// Plain "key = value" config file; '#' starts a comment.
inline TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("MissingFile", "cannot open config " + path.string());
    TrainConfig config;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos)
                fail("BadConfig", "config line " + std::to_string(lineno) + " has no '='");
            continue;
        }
        auto trim = [](std::string s) {
            s.erase(0, s.find_first_not_of(" \t\r"));
            s.erase(s.find_last_not_of(" \t\r") + 1);
            return s;
        };
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "max_epochs") config.max_epochs = std::stoi(value);
            else if (key == "batch_size") config.batch_size = std::stoi(value);
            else if (key == "learning_rate") config.learning_rate = std::stod(value);
            else if (key == "adam_beta1") config.adam_beta1 = std::stod(value);
            else if (key == "adam_beta2") config.adam_beta2 = std::stod(value);
            else if (key == "adam_epsilon") config.adam_epsilon = std::stod(value);
            else if (key == "early_stop_patience") config.early_stop_patience = std::stoi(value);
            else if (key == "early_stop_min_delta") config.early_stop_min_delta = std::stod(value);
            else if (key == "lr_reduce_patience") config.lr_reduce_patience = std::stoi(value);
            else if (key == "lr_reduce_factor") config.lr_reduce_factor = std::stod(value);
            else if (key == "min_lr") config.min_lr = std::stod(value);
            else if (key == "seed_init") config.seeds.init = std::stoull(value);
            else if (key == "seed_shuffle") config.seeds.shuffle = std::stoull(value);
            else if (key == "seed_dropout") config.seeds.dropout = std::stoull(value);
            else fail("BadConfig", "unknown config key '" + key + "'");
        } catch (const Error&) {
            throw;
        } catch (const std::exception&) {
            fail("BadConfig", "bad value for '" + key + "': " + value);
        }
    }
    return config;
}

struct EpochMetrics {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double learning_rate = 0.0;  // in effect during this epoch
    double wall_seconds = 0.0;
};

enum class StopReason { max_epochs, early_stop };

inline std::string stop_reason_name(StopReason r) {
    return r == StopReason::max_epochs ? "max_epochs" : "early_stop";
}

struct TrainingHistory {
    std::string label;
    std::vector<EpochMetrics> epochs;
    StopReason stop_reason = StopReason::max_epochs;
    int best_epoch = 0;  // lowest val_loss, earliest on ties
    std::optional<int> stage_boundary;  // fine-tuning runs only

    double best_val_accuracy() const {
        double best = 0.0;
        for (const EpochMetrics& e : epochs) best = std::max(best, e.val_accuracy);
        return best;
    }
};

// JSON Lines: one EpochMetrics per line, then a summary line.
inline void save_history(const TrainingHistory& history, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail("IoError", "cannot write history " + path.string());
    for (const EpochMetrics& e : history.epochs) {
        nlohmann::json j{{"epoch", e.epoch},
                         {"train_loss", e.train_loss},
                         {"train_accuracy", e.train_accuracy},
                         {"val_loss", e.val_loss},
                         {"val_accuracy", e.val_accuracy},
                         {"learning_rate", e.learning_rate},
                         {"wall_seconds", e.wall_seconds}};
        out << j.dump() << "\n";
    }
    nlohmann::json summary{{"label", history.label},
                           {"stop_reason", stop_reason_name(history.stop_reason)},
                           {"best_epoch", history.best_epoch}};
    if (history.stage_boundary) summary["stage_boundary"] = *history.stage_boundary;
    else summary["stage_boundary"] = nullptr;
    out << summary.dump() << "\n";
}

inline TrainingHistory load_history(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("MissingFile", "cannot open history " + path.string());
    TrainingHistory history;
    bool have_summary = false;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            fail("IoError", std::string("bad history line: ") + e.what());
        }
        if (j.contains("epoch")) {
            EpochMetrics e;
            e.epoch = j.at("epoch").get<int>();
            e.train_loss = j.at("train_loss").get<double>();
            e.train_accuracy = j.at("train_accuracy").get<double>();
            e.val_loss = j.at("val_loss").get<double>();
            e.val_accuracy = j.at("val_accuracy").get<double>();
            e.learning_rate = j.at("learning_rate").get<double>();
            e.wall_seconds = j.value("wall_seconds", 0.0);
            history.epochs.push_back(e);
        } else {
            history.label = j.value("label", std::string{});
            history.stop_reason = j.value("stop_reason", std::string{"max_epochs"}) == "early_stop"
                                      ? StopReason::early_stop
                                      : StopReason::max_epochs;
            history.best_epoch = j.value("best_epoch", 0);
            if (j.contains("stage_boundary") && !j.at("stage_boundary").is_null())
                history.stage_boundary = j.at("stage_boundary").get<int>();
            have_summary = true;
        }
    }
    if (history.epochs.empty()) fail("EmptyHistory", "history has no epochs: " + path.string());
    if (!have_summary) fail("IoError", "history has no summary line: " + path.string());
    return history;
}

struct FitResult {
    ParameterStore<float> best_params;
    TrainingHistory history;
};

using EpochObserver = std::function<void(const EpochMetrics&)>;

// The training loop. Per epoch: shuffled train batches through
// forward/backward/adam with batchnorm running-stat updates, then
// eval-mode metrics on the train and val splits, then the LR-reduction
// and early-stopping callbacks, in that order. Returns the parameters of
// the best (lowest val_loss) epoch.
inline FitResult fit(const ArchitectureSpec& arch, ParameterStore<float> params,
                     const TrainabilityMask& mask, const DatasetManifest& manifest,
                     const TrainConfig& config, BatchLoader& loader, const std::string& label,
                     int first_epoch = 1, const EpochObserver& observer = {}) {
    config.validate();
    if (manifest.indices_of(Split::train).empty()) fail("EmptySplit", "train split is empty");
    if (manifest.indices_of(Split::val).empty()) fail("EmptySplit", "val split is empty");

    OptimizerState<float> opt = OptimizerState<float>::fresh(params, mask, config.learning_rate);
    CallbackState callbacks;
    TrainingHistory history;
    history.label = label;

    ParameterStore<float> best_params = params;
    double best_val_loss = std::numeric_limits<double>::infinity();
    int best_epoch = first_epoch;
    double lr = config.learning_rate;

    for (int epoch = first_epoch; epoch < first_epoch + config.max_epochs; ++epoch) {
        auto epoch_start = std::chrono::steady_clock::now();
        std::uint64_t epoch0 = static_cast<std::uint64_t>(epoch - 1);
        opt.learning_rate = lr;

        std::vector<std::vector<int>> batches =
            make_batches(manifest, Split::train, config.batch_size, config.seeds.shuffle, epoch0);
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            auto [inputs, labels] = loader.load(batches[bi]);
            std::uint64_t dropout_seed =
                splitmix64_mix(splitmix64_mix(config.seeds.dropout ^ epoch0) ^ bi);
            ForwardResult<float> fwd;
            GradientStore<float> grads =
                compute_gradients(arch, params, mask, inputs, labels, dropout_seed, &fwd);
            if (!std::isfinite(grads.loss))
                fail("NonFiniteLoss", "non-finite loss at epoch " + std::to_string(epoch) +
                                          " batch " + std::to_string(bi));
            adam_step(params, grads, opt, config.adam());
            for (const auto& [bn_name, stats] : fwd.batch_stats) {
                Tensor<float>& rm = params.at(bn_name + ".running_mean");
                Tensor<float>& rv = params.at(bn_name + ".running_var");
                double momentum = 0.9;
                for (const LayerSpec& l : arch.layers)
                    if (l.name == bn_name) momentum = l.momentum;
                for (std::size_t c = 0; c < rm.size(); ++c) {
                    rm.data[c] = static_cast<float>(momentum * rm.data[c] +
                                                    (1.0 - momentum) * stats.mean[c]);
                    rv.data[c] = static_cast<float>(momentum * rv.data[c] +
                                                    (1.0 - momentum) * stats.var[c]);
                }
            }
        }

        ClassificationReport train_report =
            evaluate_split(arch, params, manifest, Split::train, config.batch_size, loader);
        ClassificationReport val_report =
            evaluate_split(arch, params, manifest, Split::val, config.batch_size, loader);

        EpochMetrics metrics;
        metrics.epoch = epoch;
        metrics.train_loss = train_report.loss;
        metrics.train_accuracy = train_report.accuracy;
        metrics.val_loss = val_report.loss;
        metrics.val_accuracy = val_report.accuracy;
        metrics.learning_rate = lr;
        metrics.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
        history.epochs.push_back(metrics);

        if (val_report.loss < best_val_loss) {
            best_val_loss = val_report.loss;
            best_epoch = epoch;
            best_params = params;
        }

        lr = reduce_lr_on_plateau_update(callbacks, val_report.loss, lr,
                                         config.lr_reduce_patience, config.lr_reduce_factor,
                                         config.min_lr);
        EarlyStoppingResult es = early_stopping_update(callbacks, val_report.loss,
                                                       config.early_stop_patience,
                                                       config.early_stop_min_delta);
        if (observer) observer(metrics);
        if (es.decision == StopDecision::stop) {
            history.stop_reason = StopReason::early_stop;
            break;
        }
    }
    history.best_epoch = best_epoch;
    return {std::move(best_params), std::move(history)};
}

// Marks conv parameters under `scope` (e.g. "block5") trainable.
inline TrainabilityMask unfreeze_scope(const ArchitectureSpec& arch, TrainabilityMask mask,
                                       const std::string& scope) {
    bool matched = false;
    for (const LayerSpec& l : arch.layers) {
        if (l.kind != LayerKind::conv2d && l.kind != LayerKind::dense) continue;
        if (l.name == scope || l.name.rfind(scope + "_conv", 0) == 0) {
            mask[l.name + ".weight"] = true;
            mask[l.name + ".bias"] = true;
            matched = true;
        }
    }
    if (!matched) fail("BadScope", "no layer matches unfreeze scope '" + scope + "'");
    return mask;
}

struct FineTuneResult {
    ParameterStore<float> best_params;
    TrainingHistory history;
    TrainabilityMask stage2_mask;
};

// Stage 1 trains the head with the backbone frozen; stage 2 unfreezes
// the scoped backbone layers, resets the optimizer, and continues from
// the stage-1 best parameters at the (lower) stage-2 learning rate.
inline FineTuneResult fine_tune_two_stage(const ArchitectureSpec& arch,
                                          ParameterStore<float> params,
                                          const TrainabilityMask& stage1_mask,
                                          const DatasetManifest& manifest,
                                          const TrainConfig& stage1, const TrainConfig& stage2,
                                          const std::string& scope, BatchLoader& loader,
                                          const std::string& label,
                                          const EpochObserver& observer = {}) {
    FitResult s1 = fit(arch, std::move(params), stage1_mask, manifest, stage1, loader, label, 1,
                       observer);
    int boundary = static_cast<int>(s1.history.epochs.size());

    TrainabilityMask stage2_mask = unfreeze_scope(arch, stage1_mask, scope);
    FitResult s2 = fit(arch, s1.best_params, stage2_mask, manifest, stage2, loader, label,
                       boundary + 1, observer);

    TrainingHistory history;
    history.label = label;
    history.epochs = s1.history.epochs;
    history.epochs.insert(history.epochs.end(), s2.history.epochs.begin(),
                          s2.history.epochs.end());
    history.stop_reason = s2.history.stop_reason;
    history.stage_boundary = boundary;

    double best = std::numeric_limits<double>::infinity();
    history.best_epoch = 1;
    for (const EpochMetrics& e : history.epochs)
        if (e.val_loss < best) {
            best = e.val_loss;
            history.best_epoch = e.epoch;
        }
    ParameterStore<float> best_params = history.best_epoch <= boundary
                                            ? std::move(s1.best_params)
                                            : std::move(s2.best_params);
    return {std::move(best_params), std::move(history), std::move(stage2_mask)};
}

} // namespace cityscope

#endif

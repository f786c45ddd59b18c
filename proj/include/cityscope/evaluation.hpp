#ifndef CITYSCOPE_EVALUATION_HPP
#define CITYSCOPE_EVALUATION_HPP

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cityscope/dataset.hpp"
#include "cityscope/image.hpp"
#include "cityscope/network.hpp"

namespace cityscope {

struct ConfusionMatrix {
    std::vector<std::vector<long long>> counts;  // rows = true, cols = predicted
    ClassVocabulary vocabulary;

    long long total() const {
        long long t = 0;
        for (const auto& row : counts)
            for (long long c : row) t += c;
        return t;
    }

    long long trace() const {
        long long t = 0;
        for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
        return t;
    }
};

// Precision/recall/f1 with a zero denominator are undefined, carried as
// `defined = false` and rendered as "n/a".
struct PerClassMetrics {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    bool precision_defined = false, recall_defined = false, f1_defined = false;
    long long support = 0;
};

struct ClassificationReport {
    std::string split;
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<PerClassMetrics> per_class;
    long long sample_count = 0;
    ConfusionMatrix confusion;
};

inline std::pair<ConfusionMatrix, std::vector<PerClassMetrics>>
confusion_and_per_class(const std::vector<int>& predictions, const std::vector<int>& truths,
                        const ClassVocabulary& vocabulary) {
    if (predictions.size() != truths.size())
        fail("LengthMismatch", "predictions and truths differ in length");
    int n = vocabulary.size();
    ConfusionMatrix cm;
    cm.vocabulary = vocabulary;
    cm.counts.assign(n, std::vector<long long>(n, 0));
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        int t = truths[i], p = predictions[i];
        if (t < 0 || t >= n || p < 0 || p >= n)
            fail("BadIndex", "class index out of range at position " + std::to_string(i));
        cm.counts[t][p] += 1;
    }
    std::vector<PerClassMetrics> per_class(n);
    for (int c = 0; c < n; ++c) {
        long long col = 0, row = 0;
        for (int k = 0; k < n; ++k) {
            col += cm.counts[k][c];
            row += cm.counts[c][k];
        }
        PerClassMetrics& m = per_class[c];
        m.support = row;
        if (col > 0) {
            m.precision = static_cast<double>(cm.counts[c][c]) / col;
            m.precision_defined = true;
        }
        if (row > 0) {
            m.recall = static_cast<double>(cm.counts[c][c]) / row;
            m.recall_defined = true;
        }
        if (m.precision_defined && m.recall_defined && m.precision + m.recall > 0) {
            m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
            m.f1_defined = true;
        }
    }
    return {std::move(cm), std::move(per_class)};
}

// Argmax with ties broken to the lowest index.
template <typename T>
int argmax_row(const T* row, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (row[i] > row[best]) best = i;
    return best;
}

// Caches decoded tensors so repeated epochs do not re-read the disk.
class BatchLoader {
public:
    BatchLoader(const DatasetManifest& manifest, const PreprocessConfig& config)
        : manifest_(manifest), config_(config) {}

    // (inputs B x H x W x 3, one-hot labels B x num_classes)
    std::pair<Tensor<float>, Tensor<float>> load(const std::vector<int>& batch) {
        int b = static_cast<int>(batch.size());
        int h = config_.target_height, w = config_.target_width;
        int n = manifest_.vocabulary.size();
        Tensor<float> inputs({b, h, w, 3});
        Tensor<float> labels({b, n});
        std::size_t image_size = static_cast<std::size_t>(h) * w * 3;
        for (int i = 0; i < b; ++i) {
            const ImageTensor& img = cached(batch[i]);
            std::copy(img.data.begin(), img.data.end(), inputs.data.begin() + i * image_size);
            labels.data[static_cast<std::size_t>(i) * n +
                        manifest_.records[batch[i]].class_index] = 1.0f;
        }
        return {std::move(inputs), std::move(labels)};
    }

    const ImageTensor& cached(int record_index) {
        auto it = cache_.find(record_index);
        if (it == cache_.end()) {
            it = cache_.emplace(record_index,
                                load_and_preprocess(manifest_, manifest_.records[record_index],
                                                    config_))
                     .first;
        }
        return it->second;
    }

    const PreprocessConfig& config() const { return config_; }

private:
    const DatasetManifest& manifest_;
    PreprocessConfig config_;
    std::map<int, ImageTensor> cache_;
};

// Deterministic eval-mode pass over one split: mean cross-entropy,
// argmax predictions, confusion matrix, per-class metrics.
inline ClassificationReport evaluate_split(const ArchitectureSpec& arch,
                                           const ParameterStore<float>& params,
                                           const DatasetManifest& manifest, Split split,
                                           int batch_size, BatchLoader& loader) {
    std::vector<std::vector<int>> batches = make_batches(manifest, split, batch_size);
    std::vector<int> predictions, truths;
    double loss_sum = 0.0;
    long long total = 0;
    for (const auto& batch : batches) {
        auto [inputs, labels] = loader.load(batch);
        ForwardResult<float> fwd = forward(arch, params, inputs, Mode::eval);
        loss_sum += categorical_cross_entropy(fwd.probabilities, labels) * batch.size();
        int n = arch.num_classes;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            predictions.push_back(
                argmax_row(fwd.probabilities.data.data() + i * n, n));
            truths.push_back(manifest.records[batch[i]].class_index);
        }
        total += static_cast<long long>(batch.size());
    }
    auto [cm, per_class] = confusion_and_per_class(predictions, truths, manifest.vocabulary);
    ClassificationReport report;
    report.split = split_name(split);
    report.loss = loss_sum / static_cast<double>(total);
    report.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
    report.per_class = std::move(per_class);
    report.sample_count = total;
    report.confusion = std::move(cm);
    return report;
}

inline nlohmann::json report_to_json(const ClassificationReport& report) {
    nlohmann::json j;
    j["split"] = report.split;
    j["loss"] = report.loss;
    j["accuracy"] = report.accuracy;
    j["sample_count"] = report.sample_count;
    nlohmann::json classes = nlohmann::json::array();
    for (std::size_t c = 0; c < report.per_class.size(); ++c) {
        const PerClassMetrics& m = report.per_class[c];
        nlohmann::json cj;
        cj["class"] = report.confusion.vocabulary.names[c];
        cj["support"] = m.support;
        cj["precision"] = m.precision_defined ? nlohmann::json(m.precision) : nlohmann::json(nullptr);
        cj["recall"] = m.recall_defined ? nlohmann::json(m.recall) : nlohmann::json(nullptr);
        cj["f1"] = m.f1_defined ? nlohmann::json(m.f1) : nlohmann::json(nullptr);
        classes.push_back(std::move(cj));
    }
    j["per_class"] = std::move(classes);
    j["confusion_matrix"] = report.confusion.counts;
    return j;
}

namespace detail {
inline std::string metric_cell(double value, bool defined) {
    if (!defined) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", value);
    return buf;
}
} // namespace detail

inline std::string report_to_text(const ClassificationReport& report) {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof(line), "%s accuracy %.1f%% (loss %.4f, %lld samples)\n",
                  report.split.c_str(), report.accuracy * 100.0,
                  report.loss, report.sample_count);
    out += line;
    out += "class            precision  recall     f1         support\n";
    double macro_p = 0, macro_r = 0, macro_f = 0;
    int np = 0, nr = 0, nf = 0;
    for (std::size_t c = 0; c < report.per_class.size(); ++c) {
        const PerClassMetrics& m = report.per_class[c];
        std::snprintf(line, sizeof(line), "%-16s %-10s %-10s %-10s %lld\n",
                      report.confusion.vocabulary.names[c].c_str(),
                      detail::metric_cell(m.precision, m.precision_defined).c_str(),
                      detail::metric_cell(m.recall, m.recall_defined).c_str(),
                      detail::metric_cell(m.f1, m.f1_defined).c_str(), m.support);
        out += line;
        if (m.precision_defined) { macro_p += m.precision; ++np; }
        if (m.recall_defined) { macro_r += m.recall; ++nr; }
        if (m.f1_defined) { macro_f += m.f1; ++nf; }
    }
    std::snprintf(line, sizeof(line), "macro            %-10s %-10s %-10s\n",
                  detail::metric_cell(np ? macro_p / np : 0, np > 0).c_str(),
                  detail::metric_cell(nr ? macro_r / nr : 0, nr > 0).c_str(),
                  detail::metric_cell(nf ? macro_f / nf : 0, nf > 0).c_str());
    out += line;
    return out;
}

struct ComparisonEntry {
    std::string label;
    double best_val_accuracy = 0.0;
    double test_accuracy = 0.0;
    double test_loss = 0.0;
    long long total_params = 0;
    long long trainable_params = 0;
    int epochs_trained = 0;
};

struct ComparisonReport {
    std::vector<ComparisonEntry> rows;  // sorted by test accuracy desc, stable
};

inline ComparisonReport compare_runs(std::vector<ComparisonEntry> entries) {
    if (entries.empty()) fail("EmptyInput", "compare_runs needs at least one entry");
    std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        return a.test_accuracy > b.test_accuracy;
    });
    return {std::move(entries)};
}

inline nlohmann::json comparison_to_json(const ComparisonReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const ComparisonEntry& e : report.rows)
        rows.push_back({{"label", e.label},
                        {"best_val_accuracy", e.best_val_accuracy},
                        {"test_accuracy", e.test_accuracy},
                        {"test_loss", e.test_loss},
                        {"total_params", e.total_params},
                        {"trainable_params", e.trainable_params},
                        {"epochs_trained", e.epochs_trained}});
    return {{"runs", std::move(rows)}};
}

inline std::string comparison_to_text(const ComparisonReport& report) {
    std::string out = "run                  test_acc  test_loss  best_val_acc  params      trainable   epochs\n";
    char line[256];
    for (const ComparisonEntry& e : report.rows) {
        std::snprintf(line, sizeof(line), "%-20s %-9.4f %-10.4f %-13.4f %-11lld %-11lld %d\n",
                      e.label.c_str(), e.test_accuracy, e.test_loss, e.best_val_accuracy,
                      e.total_params, e.trainable_params, e.epochs_trained);
        out += line;
    }
    return out;
}

} // namespace cityscope

#endif

#ifndef CITYSCOPE_PREDICT_HPP
#define CITYSCOPE_PREDICT_HPP

#include <algorithm>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cityscope/checkpoint.hpp"
#include "cityscope/image.hpp"
#include "cityscope/network.hpp"

namespace cityscope {

struct PredictionResult {
    std::string image_path;
    std::vector<std::pair<std::string, double>> ranked;  // probability descending
    std::string model_label;
};

// Single-image inference with the checkpoint's own preprocessing, so the
// tensor fed here is bit-identical to the training path.
inline PredictionResult predict_image(const std::filesystem::path& image_path,
                                      const Checkpoint& ckpt, int top_k) {
    int n = ckpt.arch.num_classes;
    if (top_k < 1 || top_k > n)
        fail("BadTopK", "top_k must be in [1, " + std::to_string(n) + "]");
    ImageTensor img = load_and_preprocess(image_path, ckpt.preprocess);
    Tensor<float> batch({1, img.dim(0), img.dim(1), img.dim(2)});
    batch.data = img.data;
    ForwardResult<float> fwd = forward(ckpt.arch, ckpt.params, batch, Mode::eval);

    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return fwd.probabilities.data[a] > fwd.probabilities.data[b];
    });
    PredictionResult result;
    result.image_path = image_path.string();
    result.model_label = ckpt.label;
    for (int i = 0; i < top_k; ++i)
        result.ranked.emplace_back(ckpt.vocabulary.names[order[i]],
                                   static_cast<double>(fwd.probabilities.data[order[i]]));
    return result;
}

inline PredictionResult predict_image(const std::filesystem::path& image_path,
                                      const std::filesystem::path& checkpoint_path, int top_k) {
    return predict_image(image_path, load_checkpoint(checkpoint_path), top_k);
}

} // namespace cityscope

#endif

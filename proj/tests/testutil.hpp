#ifndef CITYSCOPE_TESTUTIL_HPP
#define CITYSCOPE_TESTUTIL_HPP

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cityscope/cityscope.hpp"

// Asserts that `expr` throws a cityscope::Error with the given code.
#define REQUIRE_ERROR_CODE(expr, expected_code)                     \
    do {                                                            \
        try {                                                       \
            expr;                                                   \
            FAIL("expected Error " expected_code ", none thrown");  \
        } catch (const cityscope::Error& e_) {                      \
            REQUIRE(e_.code() == expected_code);                    \
        }                                                           \
    } while (0)

namespace testutil {

namespace fs = std::filesystem;

inline fs::path fresh_temp_dir(const std::string& tag) {
    static std::atomic<int> counter{0};
    fs::path dir = fs::temp_directory_path() /
                   ("cityscope_" + tag + "_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter++));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Class identity encoded as a dominant hue with per-pixel noise.
inline void write_class_image(const fs::path& path, int width, int height, int class_index,
                              std::uint64_t seed) {
    cityscope::SplitMix64 rng(seed);
    cv::Mat hsv(height, width, CV_8UC3);
    int hue = (class_index * 173) % 180;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            int h = hue + static_cast<int>(rng.next() % 11) - 5;
            int s = 160 + static_cast<int>(rng.next() % 80);
            int v = 90 + static_cast<int>(rng.next() % 140);
            hsv.at<cv::Vec3b>(y, x) = cv::Vec3b(static_cast<uchar>((h + 180) % 180),
                                                static_cast<uchar>(s), static_cast<uchar>(v));
        }
    cv::Mat bgr;
    cv::cvtColor(hsv, bgr, cv::COLOR_HSV2BGR);
    cv::imwrite(path.string(), bgr);
}

inline void write_solid_image(const fs::path& path, int width, int height, int r, int g, int b) {
    cv::Mat img(height, width, CV_8UC3, cv::Scalar(b, g, r));
    cv::imwrite(path.string(), img);
}

// <root>/<Class>/<Class>_<i>.png with hue-coded classes.
inline fs::path build_city_tree(const std::string& tag, const std::vector<std::string>& classes,
                                int per_class, int width, int height) {
    fs::path root = fresh_temp_dir(tag);
    for (std::size_t c = 0; c < classes.size(); ++c) {
        fs::create_directories(root / classes[c]);
        for (int i = 0; i < per_class; ++i)
            write_class_image(root / classes[c] / (classes[c] + "_" + std::to_string(i) + ".png"),
                              width, height, static_cast<int>(c),
                              1000ULL * (c + 1) + static_cast<std::uint64_t>(i));
    }
    return root;
}

inline const std::vector<std::string>& five_cities() {
    static const std::vector<std::string> names{"Ahmedabad", "Delhi", "Kerala", "Kolkata",
                                                "Mumbai"};
    return names;
}

// 8x8x3 input, one conv block with batchnorm, dense(8) classifier; well
// under 5,000 parameters.
inline cityscope::ArchitectureSpec tiny_arch() {
    using cityscope::LayerSpec;
    cityscope::ArchitectureSpec arch;
    arch.input_shape = {8, 8, 3};
    arch.num_classes = 8;
    arch.layers.push_back(LayerSpec::conv2d("conv1", 4));
    arch.layers.push_back(LayerSpec::batchnorm("bn1"));
    arch.layers.push_back(LayerSpec::relu("relu1"));
    arch.layers.push_back(LayerSpec::maxpool("pool1"));
    arch.layers.push_back(LayerSpec::flatten("flatten"));
    arch.layers.push_back(LayerSpec::dense("output", 8));
    arch.layers.push_back(LayerSpec::softmax("softmax"));
    cityscope::infer_shapes(arch);
    return arch;
}

// Random batch and one-hot labels for the tiny net.
template <typename T>
std::pair<cityscope::Tensor<T>, cityscope::Tensor<T>> tiny_batch(int batch, std::uint64_t seed) {
    cityscope::SplitMix64 rng(seed);
    cityscope::Tensor<T> inputs({batch, 8, 8, 3});
    for (T& v : inputs.data) v = static_cast<T>(rng.uniform());
    cityscope::Tensor<T> labels({batch, 8});
    for (int b = 0; b < batch; ++b)
        labels.data[static_cast<std::size_t>(b) * 8 + rng.next() % 8] = T(1);
    return {std::move(inputs), std::move(labels)};
}

// Central finite differences of the forward-pass loss; intentionally
// touches only forward() and categorical_cross_entropy().
template <typename T>
cityscope::Tensor<T> finite_difference_gradient(const cityscope::ArchitectureSpec& arch,
                                                cityscope::ParameterStore<T> params,
                                                const std::string& name,
                                                const cityscope::Tensor<T>& batch,
                                                const cityscope::Tensor<T>& labels, T eps,
                                                std::uint64_t dropout_seed = 0) {
    cityscope::Tensor<T>& theta = params.at(name);
    cityscope::Tensor<T> grad(theta.shape);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        T saved = theta.data[i];
        theta.data[i] = saved + eps;
        auto up = cityscope::forward(arch, params, batch, cityscope::Mode::train, dropout_seed);
        double loss_up = cityscope::categorical_cross_entropy(up.probabilities, labels);
        theta.data[i] = saved - eps;
        auto down = cityscope::forward(arch, params, batch, cityscope::Mode::train, dropout_seed);
        double loss_down = cityscope::categorical_cross_entropy(down.probabilities, labels);
        theta.data[i] = saved;
        grad.data[i] = static_cast<T>((loss_up - loss_down) / (2.0 * static_cast<double>(eps)));
    }
    return grad;
}

inline double rel_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

} // namespace testutil

#endif

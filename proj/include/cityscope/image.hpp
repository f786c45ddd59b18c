#ifndef CITYSCOPE_IMAGE_HPP
#define CITYSCOPE_IMAGE_HPP

#include <array>
#include <filesystem>
#include <string>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cityscope/dataset.hpp"
#include "cityscope/errors.hpp"
#include "cityscope/tensor.hpp"

namespace cityscope {

enum class ScalingMode { unit, imagenet };

inline std::string scaling_mode_name(ScalingMode m) {
    return m == ScalingMode::unit ? "unit" : "imagenet";
}

inline ScalingMode scaling_mode_from_name(const std::string& s) {
    if (s == "unit") return ScalingMode::unit;
    if (s == "imagenet") return ScalingMode::imagenet;
    fail("BadConfig", "unknown scaling mode '" + s + "'");
}

struct PreprocessConfig {
    int target_height = 175;
    int target_width = 175;
    ScalingMode scaling_mode = ScalingMode::unit;
};

using ImageTensor = Tensor<float>;

// Decode to RGB (alpha dropped, grayscale replicated), stretch-resize
// with bilinear interpolation to the target dims, then scale:
// unit = v/255, imagenet = (v/255 - mean_c)/std_c.
inline ImageTensor load_and_preprocess(const std::filesystem::path& path,
                                       const PreprocessConfig& config) {
    if (config.target_height < 8 || config.target_width < 8)
        fail("BadConfig", "target dimensions must be >= 8");
    if (!std::filesystem::exists(path)) fail("MissingFile", "image not found: " + path.string());

    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) fail("DecodeError", "cannot decode image: " + path.string());

    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    cv::Mat resized;
    cv::resize(rgb, resized, cv::Size(config.target_width, config.target_height), 0, 0,
               cv::INTER_LINEAR);

    static constexpr std::array<float, 3> kMean{0.485f, 0.456f, 0.406f};
    static constexpr std::array<float, 3> kStd{0.229f, 0.224f, 0.225f};

    ImageTensor out({config.target_height, config.target_width, 3});
    std::size_t i = 0;
    for (int y = 0; y < config.target_height; ++y) {
        const cv::Vec3b* row = resized.ptr<cv::Vec3b>(y);
        for (int x = 0; x < config.target_width; ++x) {
            for (int c = 0; c < 3; ++c, ++i) {
                float v = static_cast<float>(row[x][c]) / 255.0f;
                if (config.scaling_mode == ScalingMode::imagenet)
                    v = (v - kMean[c]) / kStd[c];
                out.data[i] = v;
            }
        }
    }
    return out;
}

inline ImageTensor load_and_preprocess(const DatasetManifest& manifest, const ImageRecord& record,
                                       const PreprocessConfig& config) {
    return load_and_preprocess(manifest.full_path(record), config);
}

} // namespace cityscope

#endif

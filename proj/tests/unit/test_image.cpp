#include <fstream>

#include <catch2/catch_amalgamated.hpp>

#include "cityscope/image.hpp"
#include "testutil.hpp"

using namespace cityscope;
namespace fs = std::filesystem;

TEST_CASE("resize to target dims, unit range") {
    fs::path dir = testutil::fresh_temp_dir("img");
    testutil::write_class_image(dir / "a.jpg", 350, 350, 1, 7);
    ImageTensor t = load_and_preprocess(dir / "a.jpg", {175, 175, ScalingMode::unit});
    REQUIRE(t.shape == std::vector<int>{175, 175, 3});
    for (float v : t.data) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
    }
    fs::remove_all(dir);
}

TEST_CASE("all-white image maps to exactly 1.0 in unit mode") {
    fs::path dir = testutil::fresh_temp_dir("imgwhite");
    testutil::write_solid_image(dir / "white.png", 64, 48, 255, 255, 255);
    ImageTensor t = load_and_preprocess(dir / "white.png", {32, 32, ScalingMode::unit});
    for (float v : t.data) REQUIRE(v == 1.0f);
    fs::remove_all(dir);
}

TEST_CASE("imagenet scaling applies per-channel mean/std") {
    fs::path dir = testutil::fresh_temp_dir("imgnet");
    testutil::write_solid_image(dir / "white.png", 16, 16, 255, 255, 255);
    ImageTensor t = load_and_preprocess(dir / "white.png", {8, 8, ScalingMode::imagenet});
    // channels-last RGB
    REQUIRE(t.data[0] == Catch::Approx((1.0 - 0.485) / 0.229).epsilon(1e-5));
    REQUIRE(t.data[1] == Catch::Approx((1.0 - 0.456) / 0.224).epsilon(1e-5));
    REQUIRE(t.data[2] == Catch::Approx((1.0 - 0.406) / 0.225).epsilon(1e-5));
    fs::remove_all(dir);
}

TEST_CASE("grayscale images come back with three equal channels") {
    fs::path dir = testutil::fresh_temp_dir("imggray");
    cv::Mat gray(20, 20, CV_8UC1, cv::Scalar(128));
    cv::imwrite((dir / "gray.png").string(), gray);
    ImageTensor t = load_and_preprocess(dir / "gray.png", {10, 10, ScalingMode::unit});
    for (std::size_t i = 0; i < t.size(); i += 3) {
        REQUIRE(t.data[i] == t.data[i + 1]);
        REQUIRE(t.data[i] == t.data[i + 2]);
    }
    fs::remove_all(dir);
}

TEST_CASE("preprocess error cases") {
    fs::path dir = testutil::fresh_temp_dir("imgerr");
    std::ofstream(dir / "fake.jpg") << "this is not an image";
    REQUIRE_ERROR_CODE(load_and_preprocess(dir / "fake.jpg", {}), "DecodeError");
    REQUIRE_ERROR_CODE(load_and_preprocess(dir / "absent.jpg", {}), "MissingFile");
    testutil::write_solid_image(dir / "ok.png", 16, 16, 1, 2, 3);
    REQUIRE_ERROR_CODE(load_and_preprocess(dir / "ok.png", {4, 4, ScalingMode::unit}),
                       "BadConfig");
    fs::remove_all(dir);
}

TEST_CASE("preprocessing is deterministic") {
    fs::path dir = testutil::fresh_temp_dir("imgdet");
    testutil::write_class_image(dir / "x.png", 90, 60, 3, 21);
    ImageTensor a = load_and_preprocess(dir / "x.png", {32, 48, ScalingMode::unit});
    ImageTensor b = load_and_preprocess(dir / "x.png", {32, 48, ScalingMode::unit});
    REQUIRE(a.data == b.data);
    REQUIRE(a.shape == std::vector<int>{32, 48, 3});
    fs::remove_all(dir);
}

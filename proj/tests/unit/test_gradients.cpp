#include <catch2/catch_amalgamated.hpp>

#include "cityscope/network.hpp"
#include "cityscope/optimizer.hpp"
#include "testutil.hpp"

using namespace cityscope;

TEST_CASE("analytic gradients match central finite differences") {
    ArchitectureSpec arch = testutil::tiny_arch();
    ParameterStore<double> params = init_parameters<double>(arch, 7);
    TrainabilityMask mask = full_trainable_mask(arch);
    auto [batch, labels] = testutil::tiny_batch<double>(3, 19);

    GradientStore<double> grads = compute_gradients(arch, params, mask, batch, labels);
    REQUIRE(grads.loss > 0.0);

    const double eps = 1e-3;
    for (const std::string& name :
         {std::string("conv1.weight"), std::string("conv1.bias"), std::string("bn1.gamma"),
          std::string("bn1.beta"), std::string("output.weight"), std::string("output.bias")}) {
        Tensor<double> fd =
            testutil::finite_difference_gradient<double>(arch, params, name, batch, labels, eps);
        const Tensor<double>& an = grads.gradients.at(name);
        REQUIRE(an.shape == fd.shape);
        double worst = 0.0;
        for (std::size_t i = 0; i < fd.size(); ++i)
            worst = std::max(worst, testutil::rel_error(an.data[i], fd.data[i]));
        INFO(name << " worst relative error " << worst);
        REQUIRE(worst <= 1e-3);
    }
}

TEST_CASE("all-frozen mask yields loss but no gradients") {
    ArchitectureSpec arch = testutil::tiny_arch();
    ParameterStore<double> params = init_parameters<double>(arch, 7);
    TrainabilityMask mask = full_trainable_mask(arch);
    for (auto& [name, flag] : mask) flag = false;
    auto [batch, labels] = testutil::tiny_batch<double>(2, 5);
    GradientStore<double> grads = compute_gradients(arch, params, mask, batch, labels);
    REQUIRE(grads.gradients.empty());
    REQUIRE(std::isfinite(grads.loss));
}

TEST_CASE("frozen parameters receive no gradient entries") {
    ArchitectureSpec arch = testutil::tiny_arch();
    ParameterStore<double> params = init_parameters<double>(arch, 3);
    TrainabilityMask mask = full_trainable_mask(arch);
    mask["conv1.weight"] = false;
    mask["conv1.bias"] = false;
    auto [batch, labels] = testutil::tiny_batch<double>(2, 8);
    GradientStore<double> grads = compute_gradients(arch, params, mask, batch, labels);
    REQUIRE(grads.gradients.count("conv1.weight") == 0);
    REQUIRE(grads.gradients.count("conv1.bias") == 0);
    REQUIRE(grads.gradients.count("output.weight") == 1);
    REQUIRE(grads.gradients.count("bn1.gamma") == 1);
}

TEST_CASE("a small gradient step decreases the loss") {
    ArchitectureSpec arch = testutil::tiny_arch();
    ParameterStore<double> params = init_parameters<double>(arch, 13);
    TrainabilityMask mask = full_trainable_mask(arch);
    auto [batch, labels] = testutil::tiny_batch<double>(4, 21);

    GradientStore<double> grads = compute_gradients(arch, params, mask, batch, labels, 42);
    for (const auto& [name, g] : grads.gradients) {
        Tensor<double>& theta = params.at(name);
        for (std::size_t i = 0; i < theta.size(); ++i) theta.data[i] -= 1e-3 * g.data[i];
    }
    ForwardResult<double> after = forward(arch, params, batch, Mode::train, 42);
    double loss_after = categorical_cross_entropy(after.probabilities, labels);
    REQUIRE(loss_after < grads.loss);
}

TEST_CASE("gradients are deterministic for a fixed dropout seed") {
    ArchitectureSpec arch = testutil::tiny_arch();
    ParameterStore<double> params = init_parameters<double>(arch, 2);
    TrainabilityMask mask = full_trainable_mask(arch);
    auto [batch, labels] = testutil::tiny_batch<double>(2, 4);
    GradientStore<double> a = compute_gradients(arch, params, mask, batch, labels, 9);
    GradientStore<double> b = compute_gradients(arch, params, mask, batch, labels, 9);
    REQUIRE(a.loss == b.loss);
    for (const auto& [name, g] : a.gradients) REQUIRE(b.gradients.at(name).data == g.data);
}

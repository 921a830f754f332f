#include "hdn/nn/layers.hpp"
#include "support/gradcheck.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace hdn;
using hdn::nn::Tensor;
using hdn::nn::Var;
using hdn::testing::gradcheck;
using hdn::testing::random_tensor;

namespace {
constexpr double kTol = 1e-6;
}

TEST_CASE("conv1d gradients, strided and causally padded", "[nn][grad]") {
    std::mt19937_64 rng(1);
    const auto fn = [](const std::vector<Var<double>>& v) { return nn::conv1d(v[0], v[1], v[2], 2, 3, 0); };
    CHECK(gradcheck(fn, {random_tensor({3, 11}, rng), random_tensor({4, 3, 4}, rng), random_tensor({4}, rng)}, rng) <
          kTol);
}

TEST_CASE("pointwise conv1d gradients", "[nn][grad]") {
    std::mt19937_64 rng(2);
    const auto fn = [](const std::vector<Var<double>>& v) { return nn::conv1d(v[0], v[1], v[2], 1, 0, 0); };
    CHECK(gradcheck(fn, {random_tensor({5, 7}, rng), random_tensor({3, 5, 1}, rng), random_tensor({3}, rng)}, rng) <
          kTol);
}

TEST_CASE("conv_transpose1d gradients with right crop", "[nn][grad]") {
    std::mt19937_64 rng(3);
    const auto fn = [](const std::vector<Var<double>>& v) {
        return nn::conv_transpose1d(v[0], v[1], v[2], 2, 2 * v[0].dim(1));
    };
    CHECK(gradcheck(fn, {random_tensor({3, 6}, rng), random_tensor({3, 2, 4}, rng), random_tensor({2}, rng)}, rng) <
          kTol);
}

TEST_CASE("conv_transpose2d_time gradients", "[nn][grad]") {
    std::mt19937_64 rng(4);
    const auto fn = [](const std::vector<Var<double>>& v) {
        return nn::conv_transpose2d_time(v[0], v[1], v[2], 3, 3 * v[0].dim(2));
    };
    CHECK(gradcheck(fn, {random_tensor({1, 4, 3}, rng), random_tensor({1, 2, 3, 6}, rng), random_tensor({2}, rng)},
                    rng) < kTol);
}

TEST_CASE("layer_norm gradients", "[nn][grad]") {
    std::mt19937_64 rng(5);
    const auto fn = [](const std::vector<Var<double>>& v) { return nn::layer_norm(v[0], v[1], v[2]); };
    CHECK(gradcheck(fn, {random_tensor({6, 4}, rng), random_tensor({6}, rng), random_tensor({6}, rng)}, rng) < 1e-5);
}

TEST_CASE("attention gradients, causal and full", "[nn][grad]") {
    std::mt19937_64 rng(6);
    for (bool causal : {true, false}) {
        const auto fn = [causal](const std::vector<Var<double>>& v) {
            return nn::attention(v[0], v[1], v[2], 2, causal);
        };
        CHECK(gradcheck(fn, {random_tensor({4, 5}, rng), random_tensor({4, 5}, rng), random_tensor({4, 5}, rng)},
                        rng) < kTol);
    }
}

TEST_CASE("pointwise nonlinearity gradients", "[nn][grad]") {
    std::mt19937_64 rng(7);
    const auto fn = [](const std::vector<Var<double>>& v) {
        const auto a = nn::glu(v[0]);
        const auto b = nn::softplus(a);
        const auto c = nn::leaky_relu(nn::add(b, nn::scale(a, -2.0)), 0.4);
        return nn::mul(nn::relu(c), nn::log1p(b));
    };
    CHECK(gradcheck(fn, {random_tensor({6, 5}, rng)}, rng) < kTol);
}

TEST_CASE("row broadcast, concat, slice and crop gradients", "[nn][grad]") {
    std::mt19937_64 rng(8);
    const auto fn = [](const std::vector<Var<double>>& v) {
        const auto film = nn::add_row(nn::mul_row(v[0], v[1]), v[2]);
        const auto cat = nn::concat_rows(film, v[1]);
        const auto cropped = nn::fit_cols(nn::slice_rows(cat, 1, 2), 4);
        return nn::fit_cols(cropped, 7);
    };
    CHECK(gradcheck(fn, {random_tensor({2, 5}, rng), random_tensor({1, 5}, rng), random_tensor({1, 5}, rng)}, rng) <
          kTol);
}

TEST_CASE("transformer block gradients", "[nn][grad]") {
    std::mt19937_64 rng(9);
    nn::TransformerBlock<double> block({8, 2, 16}, rng);
    nn::ParamList<double> params;
    block.collect("b", params);
    // Check gradient wrt the input and the first query weight through the whole block.
    const auto fn = [&block](const std::vector<Var<double>>& v) {
        auto copy = block;
        copy.wq.weight = v[1];
        return copy(v[0], true);
    };
    CHECK(gradcheck(fn, {random_tensor({8, 5}, rng), block.wq.weight.value()}, rng) < 1e-5);
}

TEST_CASE("causal attention ignores future columns", "[nn]") {
    std::mt19937_64 rng(10);
    auto q = random_tensor({4, 6}, rng), k = random_tensor({4, 6}, rng), v = random_tensor({4, 6}, rng);
    const auto base = nn::kernels::attention_forward<double>(q, k, v, 2, true, nullptr);
    for (std::size_t c = 0; c < 4; ++c) {
        k.at(c, 5) += 3.0;
        v.at(c, 5) -= 2.0;
    }
    const auto moved = nn::kernels::attention_forward<double>(q, k, v, 2, true, nullptr);
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t t = 0; t < 5; ++t) CHECK(moved.at(c, t) == base.at(c, t));
}

TEST_CASE("no-grad mode records no graph", "[nn]") {
    auto w = nn::parameter(Tensor<float>({2, 2, 1}, 1.0f));
    auto x = nn::constant(Tensor<float>({2, 3}, 1.0f));
    nn::NoGradGuard guard;
    const auto y = nn::conv1d(x, w, Var<float>(), 1, 0, 0);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
}

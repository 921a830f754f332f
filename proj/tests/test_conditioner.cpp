#include "hdn/conditioner.hpp"
#include "support/configs.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace hdn;
using namespace hdn::conditioner;

namespace {

nn::Tensor<float> random_tensor(nn::Shape shape, float lo, float hi, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> d(lo, hi);
    nn::Tensor<float> t(std::move(shape));
    for (auto& v : t.vec()) v = d(rng);
    return t;
}

std::vector<double> random_signal(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 0.2);
    std::vector<double> x(n);
    for (auto& v : x) v = d(rng);
    return x;
}

double max_abs_diff(std::span<const float> a, std::span<const float> b, std::size_t from, std::size_t to) {
    double m = 0.0;
    for (std::size_t i = from; i < to; ++i) m = std::max(m, double(std::abs(a[i] - b[i])));
    return m;
}

}  // namespace

TEST_CASE("method names round trip", "[conditioner]") {
    for (auto m : {ConditioningMethod::Addition, ConditioningMethod::Concatenation, ConditioningMethod::Film})
        CHECK(method_from_string(to_string(m)) == m);
    CHECK_THROWS(method_from_string("multiply"));
}

TEST_CASE("upsampler maps T_spec frames to 256 T_spec samples", "[conditioner]") {
    UpsamplerConfig cfg;
    CHECK(cfg.factor() == 256);
    const auto up = UpsamplerModel::init(cfg, 257, 1);
    nn::NoGradGuard g;
    for (std::size_t frames = 1; frames <= 20; ++frames) {
        const auto spec = nn::constant(random_tensor({257, frames}, 0.0f, 2.0f, frames));
        CHECK(up.upsample_raw(spec).shape() == nn::Shape{257, 256 * frames});
        CHECK(up.forward(spec, 256 * frames).shape() == nn::Shape{1, 256 * frames});
    }
}

TEST_CASE("upsampler covers a 10 s clip at the default resolution", "[conditioner]") {
    const auto up = UpsamplerModel::init(UpsamplerConfig{}, 513, 2);
    nn::NoGradGuard g;
    const auto spec = nn::constant(random_tensor({513, 625}, 0.0f, 2.0f, 3));
    CHECK(up.forward(spec, 160000).shape() == nn::Shape{1, 160000});
}

TEST_CASE("upsampler filter orientation swaps the kernel axes", "[conditioner]") {
    UpsamplerConfig cfg;
    CHECK(cfg.time_kernel() == 32);
    CHECK(cfg.freq_kernel() == 3);
    cfg.orientation = FilterOrientation::FreqTime;
    CHECK(cfg.time_kernel() == 3);
    CHECK(cfg.freq_kernel() == 32);
    const auto up = UpsamplerModel::init(cfg, 65, 4);
    nn::NoGradGuard g;
    CHECK(up.forward(nn::constant(random_tensor({65, 3}, 0.0f, 1.0f, 5)), 768).shape() == nn::Shape{1, 768});
}

TEST_CASE("zero spectrogram gives a constant conditioner", "[conditioner]") {
    auto up = UpsamplerModel::init(UpsamplerConfig{}, 129, 6);
    nn::NoGradGuard g;
    const auto c = up.forward(nn::constant(nn::Tensor<float>({129, 5}, 0.0f)), 1280).value();
    for (float v : c.vec()) CHECK(v == Catch::Approx(c[0]).margin(1e-6));
    for (auto& p : up.parameters())
        if (p.name.ends_with("bias")) p.var->mutable_value().fill(0.0f);
    const auto z = up.forward(nn::constant(nn::Tensor<float>({129, 5}, 0.0f)), 1280).value();
    double m = 0.0;
    for (float v : z.vec()) m = std::max(m, double(std::abs(v)));
    CHECK(m == 0.0);
}

TEST_CASE("upsampler length mismatches are rejected", "[conditioner]") {
    const auto up = UpsamplerModel::init(UpsamplerConfig{}, 33, 7);
    nn::NoGradGuard g;
    const auto spec = nn::constant(random_tensor({33, 4}, 0.0f, 1.0f, 8));
    CHECK(up.forward(spec, 1024 + 255).shape() == nn::Shape{1, 1279});
    CHECK(up.forward(spec, 1024 - 255).shape() == nn::Shape{1, 769});
    CHECK_THROWS(up.forward(spec, 1024 + 257));
    CHECK_THROWS(up.forward(spec, 1024 - 257));
    CHECK_THROWS(up.forward(nn::constant(random_tensor({32, 4}, 0.0f, 1.0f, 8)), 1024));
}

TEST_CASE("conditioning methods combine as specified", "[conditioner]") {
    nn::NoGradGuard g;
    const auto w = random_tensor({1, 300}, -1.0f, 1.0f, 9);
    const auto c = random_tensor({1, 300}, -1.0f, 1.0f, 10);

    auto add = ConditionerModel::init(ConditioningMethod::Addition, 1, 11);
    add.add_proj.weight.mutable_value().fill(1.0f);
    add.add_proj.bias.mutable_value().fill(0.0f);
    const auto sum = add.forward(nn::constant(w), nn::constant(c)).value();
    for (std::size_t t = 0; t < 300; ++t) CHECK(sum[t] == Catch::Approx(w[t] + c[t]).margin(1e-6));

    auto cat = ConditionerModel::init(ConditioningMethod::Concatenation, 1, 12);
    CHECK(cat.output_channels(1) == 2);
    const auto both = cat.forward(nn::constant(w), nn::constant(c)).value();
    REQUIRE(both.shape() == nn::Shape{2, 300});
    for (std::size_t t = 0; t < 300; ++t) {
        CHECK(both.at(0, t) == w[t]);
        CHECK(both.at(1, t) == c[t]);
    }

    auto film = ConditionerModel::init(ConditioningMethod::Film, 1, 13);
    film.set_film_identity();
    const auto same = film.forward(nn::constant(w), nn::constant(c)).value();
    CHECK(same.vec() == w.vec());
    film.film_scale.weight.mutable_value().fill(0.0f);
    film.film_scale.bias.mutable_value().fill(2.0f);
    film.film_shift.weight.mutable_value().fill(1.0f);
    film.film_shift.bias.mutable_value().fill(0.0f);
    const auto mod = film.forward(nn::constant(w), nn::constant(c)).value();
    for (std::size_t t = 0; t < 300; ++t) CHECK(mod[t] == Catch::Approx(2.0f * w[t] + c[t]).margin(1e-6));

    CHECK_THROWS(add.forward(nn::constant(w), nn::constant(random_tensor({1, 299}, 0.0f, 1.0f, 14))));
}

TEST_CASE("hybrid config consistency", "[conditioner]") {
    auto cfg = testing::small_hybrid(ConditioningMethod::Concatenation);
    CHECK(cfg.unet.in_channels == 2);
    cfg.upsampler.time_strides = {16, 8};
    CHECK_THROWS(cfg.validate());
    cfg = testing::small_hybrid();
    cfg.unet.causal = false;
    CHECK_THROWS(cfg.validate());
}

TEST_CASE("hybrid denoiser preserves waveform length", "[conditioner]") {
    const auto model = HybridModel::init(testing::small_hybrid(), 15);
    for (std::size_t len : {10u, 255u, 256u, 300u, 1000u, 4097u}) {
        dsp::Waveform in{random_signal(len, len), 16000};
        const auto out = model.denoise(in);
        CHECK(out.samples.size() == len);
        CHECK(out.sample_rate == 16000);
    }
}

TEST_CASE("hybrid denoiser is causal at block granularity", "[conditioner][causal]") {
    const auto model = HybridModel::init(testing::small_hybrid(), 16);
    auto x = random_signal(8192, 17);
    const auto base = model.denoise({x, 16000}).samples;
    const std::size_t cut = 16 * 256;
    for (std::size_t t = cut; t < x.size(); ++t) x[t] = -x[t] + 0.05;
    const auto moved = model.denoise({x, 16000}).samples;
    double worst = 0.0, changed = 0.0;
    for (std::size_t t = 0; t < cut; ++t) worst = std::max(worst, std::abs(moved[t] - base[t]));
    for (std::size_t t = cut; t < x.size(); ++t) changed = std::max(changed, std::abs(moved[t] - base[t]));
    CHECK(worst <= 1e-5);
    CHECK(changed > 0.0);
}

TEST_CASE("non-causal hybrid denoiser looks ahead", "[conditioner][causal]") {
    const auto model = HybridModel::init(testing::small_hybrid(ConditioningMethod::Addition, false), 18);
    auto x = random_signal(4096, 19);
    const auto base = model.denoise({x, 16000}).samples;
    for (std::size_t t = 3000; t < x.size(); ++t) x[t] += 0.3;
    const auto moved = model.denoise({x, 16000}).samples;
    double changed = 0.0;
    for (std::size_t t = 0; t < 256; ++t) changed = std::max(changed, std::abs(moved[t] - base[t]));
    CHECK(changed > 0.0);
}

TEST_CASE("conditioning methods produce different outputs", "[conditioner]") {
    const auto x = random_signal(2048, 20);
    const auto a = HybridModel::init(testing::small_hybrid(ConditioningMethod::Addition), 21).denoise({x, 16000});
    const auto c = HybridModel::init(testing::small_hybrid(ConditioningMethod::Concatenation), 21).denoise({x, 16000});
    double diff = 0.0;
    for (std::size_t t = 0; t < x.size(); ++t) diff = std::max(diff, std::abs(a.samples[t] - c.samples[t]));
    CHECK(diff > 1e-6);
}

TEST_CASE("identity FiLM reduces to the unconditioned U-Net", "[conditioner]") {
    auto model = HybridModel::init(testing::small_hybrid(ConditioningMethod::Film), 22);
    model.conditioner.set_film_identity();
    const auto x = random_signal(2000, 23);
    nn::Tensor<float> w({1, x.size()});
    for (std::size_t t = 0; t < x.size(); ++t) w[t] = float(x[t]);
    nn::NoGradGuard g;
    const auto spec_hat = model.predict_spectrogram(x);
    const auto cond = model.forward_waveform(nn::constant(w), spec_hat).value();
    const auto plain = model.forward_unconditioned(nn::constant(w)).value();
    CHECK(max_abs_diff(cond.span(), plain.span(), 0, x.size()) <= 1e-6);
}

TEST_CASE("from_specnet keeps the given spectrogram denoiser", "[conditioner]") {
    auto cfg = testing::small_hybrid();
    auto spec = specnet::SpecNetModel::init(cfg.specnet, 24);
    const auto ref = spec.parameters()[0].var->value().vec();
    auto model = HybridModel::from_specnet(std::move(spec), cfg, 25);
    CHECK(model.spec.parameters()[0].var->value().vec() == ref);
    CHECK(model.parameters().size() == model.spec.parameters().size() + model.waveform_parameters().size());
}

#include "hdn/dsp.hpp"
#include "support/oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

using namespace hdn;
using dsp::Framing;
using dsp::StftParams;

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b, std::size_t from = 0,
                    std::size_t to = SIZE_MAX) {
    double m = 0.0;
    for (std::size_t i = from; i < std::min({a.size(), b.size(), to}); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

oracle::Params to_oracle(const StftParams& p) {
    return {p.hop, p.win_length, p.n_fft, p.window == dsp::Window::Hann, p.framing == Framing::Causal};
}

}  // namespace

TEST_CASE("stft frame count follows floor(T / hop)", "[dsp]") {
    std::vector<double> x(160000, 0.1);
    CHECK(dsp::stft(x, {256, 1024, 1024}).frames() == 625);
    CHECK(dsp::stft(x, {80, 320, 320}).frames() == 2000);
    for (const StftParams& p : {StftParams{50, 240, 512}, StftParams{120, 600, 1024}, StftParams{240, 1200, 2048},
                                StftParams{256, 512, 512}}) {
        for (std::size_t len : {1200u, 4097u, 16000u}) {
            std::vector<double> y(len, 0.0);
            CHECK(dsp::stft(y, p).frames() == len / p.hop);
            StftParams c = p;
            c.framing = Framing::Causal;
            CHECK(dsp::stft(y, c).frames() == len / p.hop);
        }
    }
}

TEST_CASE("stft rejects input shorter than one window", "[dsp]") {
    std::vector<double> x(1000, 0.0);
    CHECK_THROWS_WITH(dsp::stft(x, {256, 1024, 1024}), Catch::Matchers::ContainsSubstring("input too short"));
}

TEST_CASE("stft rejects inconsistent parameters", "[dsp]") {
    std::vector<double> x(4096, 0.0);
    CHECK_THROWS(dsp::stft(x, {0, 256, 256}));
    CHECK_THROWS(dsp::stft(x, {128, 512, 256}));
    CHECK_THROWS(dsp::stft(x, {300, 256, 256}));
}

TEST_CASE("stft of silence is zero", "[dsp]") {
    std::vector<double> x(4096, 0.0);
    const auto c = dsp::stft(x, {256, 1024, 1024});
    for (std::size_t i = 0; i < c.values.size(); ++i) CHECK(c.values[i] == std::complex<double>(0.0, 0.0));
}

TEST_CASE("stft matches the naive DFT oracle", "[dsp][oracle]") {
    std::mt19937_64 rng(11);
    const auto x = oracle::random_signal(700, rng);
    for (auto framing : {Framing::Centered, Framing::Causal}) {
        for (auto window : {dsp::Window::Hann, dsp::Window::Rectangular}) {
            StftParams p{40, 96, 128, window, framing};
            const auto c = dsp::stft(x, p);
            const auto ref = oracle::naive_stft(x, to_oracle(p));
            double err = 0.0;
            for (std::size_t f = 0; f < c.bins(); ++f)
                for (std::size_t t = 0; t < c.frames(); ++t) err = std::max(err, std::abs(c.values.at(f, t) - ref[f][t]));
            CHECK(err < 1e-10);
        }
    }
}

TEST_CASE("rectangular-window cosine concentrates in its bin", "[dsp][oracle]") {
    const std::size_t n_fft = 64, k = 5;
    std::vector<double> x(640);
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = std::cos(2.0 * std::numbers::pi * static_cast<double>(k * i) / static_cast<double>(n_fft));
    StftParams p{64, 64, 64, dsp::Window::Rectangular, Framing::Causal};
    const auto mag = dsp::magnitude(dsp::stft(x, p));
    const auto ref = oracle::naive_magnitude(x, to_oracle(p));
    for (std::size_t t = 1; t < mag.frames(); ++t) {
        CHECK(mag.values.at(k, t) == Catch::Approx(32.0).epsilon(1e-9));
        for (std::size_t f = 0; f < mag.bins(); ++f) {
            CHECK(std::abs(mag.values.at(f, t) - ref[f][t]) < 1e-9);
            if (f != k) CHECK(mag.values.at(f, t) < 1e-9);
        }
    }
}

TEST_CASE("stft is linear", "[dsp]") {
    std::mt19937_64 rng(12);
    const auto x = oracle::random_signal(3000, rng), z = oracle::random_signal(3000, rng);
    std::vector<double> mix(3000);
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 0.7 * x[i] - 1.3 * z[i];
    const StftParams p{120, 600, 1024};
    const auto cx = dsp::stft(x, p), cz = dsp::stft(z, p), cm = dsp::stft(mix, p);
    double err = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < cm.values.size(); ++i) {
        err = std::max(err, std::abs(cm.values[i] - (0.7 * cx.values[i] - 1.3 * cz.values[i])));
        scale = std::max(scale, std::abs(cm.values[i]));
    }
    CHECK(err / scale < 1e-6);
}

TEST_CASE("magnitude is the elementwise modulus", "[dsp]") {
    dsp::ComplexSpectrogram c{dsp::ComplexSpectrogramValues({2, 2}), {}};
    c.values[0] = {3.0, 4.0};
    c.values[3] = {-1.0, 0.0};
    const auto m = dsp::magnitude(c);
    CHECK(m.values[0] == 5.0);
    CHECK(m.values[1] == 0.0);
    CHECK(m.values[3] == 1.0);

    std::mt19937_64 rng(13);
    std::normal_distribution<double> nd;
    dsp::ComplexSpectrogram r{dsp::ComplexSpectrogramValues({5, 7}), {}};
    for (auto& v : r.values.vec()) v = {nd(rng), nd(rng)};
    const auto mr = dsp::magnitude(r);
    for (std::size_t i = 0; i < r.values.size(); ++i) {
        CHECK(mr.values[i] >= 0.0);
        CHECK(std::abs(mr.values[i] - std::sqrt(r.values[i].real() * r.values[i].real() +
                                                 r.values[i].imag() * r.values[i].imag())) < 1e-12);
    }
}

TEST_CASE("istft with own phase reconstructs the signal", "[dsp]") {
    std::mt19937_64 rng(14);
    const auto x = oracle::random_signal(16000, rng, 0.9);
    for (const StftParams& p : {StftParams{256, 1024, 1024}, StftParams{80, 320, 320}, StftParams{50, 240, 512},
                                StftParams{120, 600, 1024}}) {
        const auto c = dsp::stft(x, p);
        const auto y = dsp::istft_with_phase(dsp::magnitude(c), c, x.size());
        INFO(dsp::to_string(p));
        CHECK(max_abs_diff(x, y.samples) <= 1e-4);
    }
}

TEST_CASE("causal-framed istft reconstructs hop-aligned signals", "[dsp]") {
    std::mt19937_64 rng(15);
    const auto x = oracle::random_signal(256 * 40, rng, 0.9);
    StftParams p{256, 1024, 1024};
    p.framing = Framing::Causal;
    const auto c = dsp::stft(x, p);
    const auto y = dsp::istft_with_phase(dsp::magnitude(c), c, x.size());
    CHECK(max_abs_diff(x, y.samples) <= 1e-4);
}

TEST_CASE("istft of zero magnitude is silence", "[dsp]") {
    std::mt19937_64 rng(16);
    const auto x = oracle::random_signal(4096, rng);
    const auto c = dsp::stft(x, {256, 1024, 1024});
    auto mag = dsp::magnitude(c);
    mag.values.fill(0.0);
    const auto y = dsp::istft_with_phase(mag, c, x.size());
    for (double v : y.samples) CHECK(v == 0.0);
}

TEST_CASE("istft rejects mismatched inputs", "[dsp]") {
    std::vector<double> x(4096, 0.1);
    const auto a = dsp::stft(x, {256, 1024, 1024});
    const auto b = dsp::stft(x, {128, 512, 512});
    CHECK_THROWS(dsp::istft_with_phase(dsp::magnitude(a), b, x.size()));
}

TEST_CASE("high band keeps the upper half including Nyquist", "[dsp]") {
    dsp::MagnitudeSpectrogram m{nn::Tensor<double>({513, 3}), {256, 1024, 1024}};
    for (std::size_t f = 0; f < 513; ++f)
        for (std::size_t t = 0; t < 3; ++t) m.values.at(f, t) = static_cast<double>(f);
    const auto h = dsp::high_band(m);
    CHECK(h.bins() == 257);
    CHECK(h.values.at(0, 0) == 256.0);
    CHECK(h.values.at(256, 2) == 512.0);

    dsp::MagnitudeSpectrogram two{nn::Tensor<double>({2, 1}, std::vector<double>{1.0, 2.0}), {}};
    const auto h2 = dsp::high_band(two);
    CHECK(h2.bins() == 1);
    CHECK(h2.values[0] == 2.0);
}

TEST_CASE("a 1 kHz tone has almost no high-band energy", "[dsp]") {
    std::vector<double> x(16000);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.5 * std::sin(2.0 * std::numbers::pi * 1000.0 * i / 16000.0);
    const auto m = dsp::spectrogram(x, {256, 1024, 1024});
    const auto h = dsp::high_band(m);
    double full = 0.0, high = 0.0;
    for (double v : m.values.vec()) full += v * v;
    for (double v : h.values.vec()) high += v * v;
    CHECK(std::sqrt(high) < 0.05 * std::sqrt(full));
}

TEST_CASE("stft_adjoint is the transpose of stft", "[dsp]") {
    // <stft(x), G> (real inner product on re/im parts) equals <x, adjoint(G)>.
    std::mt19937_64 rng(17);
    std::normal_distribution<double> nd;
    for (auto framing : {Framing::Centered, Framing::Causal}) {
        StftParams p{60, 240, 256, dsp::Window::Hann, framing};
        const auto x = oracle::random_signal(1000, rng);
        const auto c = dsp::stft(x, p);
        dsp::ComplexSpectrogramValues g(c.values.shape());
        for (auto& v : g.vec()) v = {nd(rng), nd(rng)};
        double lhs = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) lhs += c.values[i].real() * g[i].real() + c.values[i].imag() * g[i].imag();
        const auto gx = dsp::stft_adjoint(g, p, x.size());
        double rhs = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * gx[i];
        CHECK(lhs == Catch::Approx(rhs).epsilon(1e-10));
    }
}

#include "hdn/losses.hpp"
#include "support/fd.hpp"
#include "support/oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

using namespace hdn;
using losses::Band;

namespace {

dsp::MagnitudeSpectrogram random_mag(std::size_t f, std::size_t t, std::mt19937_64& rng, double lo = 0.05,
                                     double hi = 2.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    dsp::MagnitudeSpectrogram m{nn::Tensor<double>({f, t}), {}};
    for (auto& v : m.values.vec()) v = d(rng);
    return m;
}

oracle::RMatrix to_rows(const dsp::MagnitudeSpectrogram& m) {
    oracle::RMatrix r(m.bins(), std::vector<double>(m.frames()));
    for (std::size_t f = 0; f < m.bins(); ++f)
        for (std::size_t t = 0; t < m.frames(); ++t) r[f][t] = m.values.at(f, t);
    return r;
}

oracle::Params to_oracle(const dsp::StftParams& p) { return {p.hop, p.win_length, p.n_fft, true, false}; }

}  // namespace

TEST_CASE("spec_loss is zero at identity", "[losses]") {
    std::mt19937_64 rng(21);
    const auto y = random_mag(9, 4, rng);
    CHECK(losses::spec_loss(y, y) == 0.0);
}

TEST_CASE("spec_loss scalar case", "[losses]") {
    dsp::MagnitudeSpectrogram y{nn::Tensor<double>({1, 1}, std::numbers::e), {}};
    dsp::MagnitudeSpectrogram yh{nn::Tensor<double>({1, 1}, 1.0), {}};
    // |log e - log 1| / 1 + |e - 1| / e
    CHECK(losses::spec_loss(y, yh) == Catch::Approx(1.0 + (std::numbers::e - 1.0) / std::numbers::e).epsilon(1e-12));
    CHECK(losses::spec_loss(y, yh) == Catch::Approx(1.63212).margin(1e-5));
}

TEST_CASE("spec_loss matches the loop oracle", "[losses][oracle]") {
    std::mt19937_64 rng(22);
    for (int i = 0; i < 5; ++i) {
        const auto y = random_mag(5, 7, rng), yh = random_mag(5, 7, rng, 0.0, 2.0);
        CHECK(std::abs(losses::spec_loss(y, yh) - oracle::spec_loss(to_rows(y), to_rows(yh))) < 1e-6);
    }
}

TEST_CASE("spec_loss rejects a silent target and shape mismatch", "[losses]") {
    dsp::MagnitudeSpectrogram z{nn::Tensor<double>({3, 2}), {}};
    dsp::MagnitudeSpectrogram o{nn::Tensor<double>({3, 2}, 1.0), {}};
    CHECK_THROWS_WITH(losses::spec_loss(z, o), Catch::Matchers::ContainsSubstring("degenerate clean target"));
    dsp::MagnitudeSpectrogram other{nn::Tensor<double>({2, 3}, 1.0), {}};
    CHECK_THROWS(losses::spec_loss(o, other));
}

TEST_CASE("spec_loss floors tiny predictions inside the log", "[losses]") {
    dsp::MagnitudeSpectrogram y{nn::Tensor<double>({1, 1}, 1.0), {}};
    dsp::MagnitudeSpectrogram yh{nn::Tensor<double>({1, 1}, 0.0), {}};
    const double v = losses::spec_loss(y, yh);
    CHECK(std::isfinite(v));
    CHECK(v == Catch::Approx(-std::log(1e-5) + 1.0));
}

TEST_CASE("stft_resolution_term against the naive DFT oracle", "[losses][oracle]") {
    std::mt19937_64 rng(23);
    const dsp::StftParams p{60, 240, 256};
    for (int i = 0; i < 3; ++i) {
        const auto x = oracle::random_signal(1500, rng), xh = oracle::random_signal(1500, rng);
        for (bool high : {false, true}) {
            const double got = losses::stft_resolution_term(x, xh, p, high ? Band::High : Band::Full).value();
            CHECK(std::abs(got - oracle::resolution_term(x, xh, to_oracle(p), high)) < 1e-5);
        }
    }
}

TEST_CASE("half-scaled estimate gives closed-form terms", "[losses]") {
    std::mt19937_64 rng(24);
    std::normal_distribution<double> nd(0.0, 0.2);
    std::vector<double> x(4000);
    for (auto& v : x) v = nd(rng);
    std::vector<double> xh(x);
    for (auto& v : xh) v *= 0.5;
    const dsp::StftParams p{120, 600, 1024};
    const auto term = losses::stft_resolution_term(x, xh, p);
    CHECK(term.spectral_convergence == Catch::Approx(0.5).epsilon(1e-12));
    const double frames = 4000 / 120, bins = 513;
    CHECK(term.log_magnitude == Catch::Approx(std::log(2.0) * bins * frames / 4000.0).epsilon(1e-9));
}

TEST_CASE("spectral convergence equals |1 - alpha| for scaled estimates", "[losses]") {
    std::mt19937_64 rng(25);
    const auto x = oracle::random_signal(3000, rng);
    for (double alpha : {0.1, 0.37, 0.5, 0.9, 1.0}) {
        std::vector<double> xh(x);
        for (auto& v : xh) v *= alpha;
        const auto term = losses::stft_resolution_term(x, xh, {50, 240, 512});
        CHECK(std::abs(term.spectral_convergence - std::abs(1.0 - alpha)) < 1e-6);
    }
}

TEST_CASE("mrstft sums its resolutions", "[losses]") {
    std::mt19937_64 rng(26);
    const auto x = oracle::random_signal(4000, rng), xh = oracle::random_signal(4000, rng);
    const auto rs = losses::ResolutionSet::standard();
    CHECK(losses::mrstft(x, x, rs, Band::Full) == 0.0);
    double sum = 0.0;
    for (const auto& p : rs.resolutions) sum += losses::stft_resolution_term(x, xh, p).value();
    CHECK(std::abs(losses::mrstft(x, xh, rs, Band::Full) - sum) <= 1e-6 * sum);

    losses::ResolutionSet single{{rs.resolutions[1]}};
    CHECK(losses::mrstft(x, xh, single, Band::Full) == losses::stft_resolution_term(x, xh, rs.resolutions[1]).value());
    CHECK_THROWS(losses::mrstft(x, xh, losses::ResolutionSet{}, Band::Full));
}

TEST_CASE("waveform_l1 is a mean absolute error", "[losses]") {
    const std::vector<double> x{1.0, -1.0}, z{0.0, 0.0};
    CHECK(losses::waveform_l1(x, z) == 1.0);
    CHECK(losses::waveform_l1(x, x) == 0.0);
    std::mt19937_64 rng(27);
    const auto a = oracle::random_signal(257, rng), b = oracle::random_signal(257, rng);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    CHECK(std::abs(losses::waveform_l1(a, b) - s / 257.0) < 1e-7);
}

TEST_CASE("hybrid loss breakdown adds up and the band matters", "[losses]") {
    std::mt19937_64 rng(28);
    const auto x = oracle::random_signal(4000, rng), xh = oracle::random_signal(4000, rng);
    const auto rs = losses::ResolutionSet::standard();
    const auto full = losses::hybrid_loss(x, xh, rs, Band::Full);
    double sum = 0.0;
    for (const auto& [name, v] : full.terms) sum += v;
    CHECK(std::abs(full.total - sum) <= 1e-6 * full.total);
    CHECK(full.terms.at("l1") == losses::waveform_l1(x, xh));
    CHECK(std::abs(full.total - full.terms.at("l1") - losses::mrstft(x, xh, rs, Band::Full)) <= 1e-9);
    const auto high = losses::hybrid_loss(x, xh, rs, Band::High);
    CHECK(high.total != full.total);
    CHECK(losses::hybrid_loss(x, x, rs, Band::High).total == 0.0);
}

TEST_CASE("loss gradients match central differences", "[losses][grad]") {
    std::mt19937_64 rng(29);
    SECTION("spec_loss") {
        const auto y = random_mag(33, 16, rng, 0.1, 2.0);
        auto yh = random_mag(33, 16, rng, 0.1, 2.0);
        nn::Tensor<double> g;
        losses::spec_loss(y, yh, &g);
        const auto numeric = testing::numeric_gradient(
            [&](const std::vector<double>& v) {
                dsp::MagnitudeSpectrogram m{nn::Tensor<double>(yh.values.shape(), v), {}};
                return losses::spec_loss(y, m);
            },
            yh.values.vec());
        CHECK(testing::relative_error(g.vec(), numeric) <= 1e-4);
    }
    SECTION("mrstft full and high") {
        const auto x = oracle::random_signal(1300, rng), xh = oracle::random_signal(1300, rng);
        const auto rs = losses::ResolutionSet::standard();
        for (Band band : {Band::Full, Band::High}) {
            std::vector<double> g;
            losses::mrstft(x, xh, rs, band, losses::LogNorm::Waveform, &g);
            const auto numeric = testing::numeric_gradient(
                [&](const std::vector<double>& v) { return losses::mrstft(x, v, rs, band); }, xh);
            CHECK(testing::relative_error(g, numeric) <= 1e-4);
        }
    }
    SECTION("waveform_l1") {
        const auto x = oracle::random_signal(512, rng), xh = oracle::random_signal(512, rng);
        std::vector<double> g;
        losses::waveform_l1(x, xh, &g);
        const auto numeric = testing::numeric_gradient(
            [&](const std::vector<double>& v) { return losses::waveform_l1(x, v); }, xh);
        CHECK(testing::relative_error(g, numeric) <= 1e-4);
    }
}

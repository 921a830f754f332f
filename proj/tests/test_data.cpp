#include "hdn/data.hpp"
#include "support/oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace hdn;
using namespace hdn::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / ("hdn_test_data_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

// Averaged naive-DFT periodogram over non-overlapping rectangular segments.
std::vector<double> periodogram(const std::vector<double>& x, std::size_t seg) {
    std::vector<double> p(seg / 2 + 1, 0.0);
    const std::size_t count = x.size() / seg;
    for (std::size_t s = 0; s < count; ++s) {
        for (std::size_t k = 0; k < p.size(); ++k) {
            double re = 0.0, im = 0.0;
            for (std::size_t n = 0; n < seg; ++n) {
                const double a = 2.0 * std::numbers::pi * double(k * n % seg) / double(seg);
                re += x[s * seg + n] * std::cos(a);
                im -= x[s * seg + n] * std::sin(a);
            }
            p[k] += (re * re + im * im) / double(count);
        }
    }
    return p;
}

double band_mean(const std::vector<double>& p, std::size_t lo, std::size_t hi) {
    double s = 0.0;
    for (std::size_t k = lo; k < hi; ++k) s += p[k];
    return s / double(hi - lo);
}

}  // namespace

TEST_CASE("snr grid has 31 one-dB levels", "[data]") {
    const auto g = snr_grid();
    REQUIRE(g.size() == 31);
    CHECK(g.front() == -5.0);
    CHECK(g.back() == 25.0);
    for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i] - g[i - 1] == 1.0);
}

TEST_CASE("mixture spec validation", "[data]") {
    MixtureSpec m;
    CHECK_NOTHROW(m.validate());
    m.snr_db = 25.5;
    CHECK_THROWS(m.validate());
    m = MixtureSpec{};
    m.clip_seconds = 0.0;
    CHECK_THROWS(m.validate());
    CHECK(seconds_to_samples(10.0, 16000) == 160000);
}

TEST_CASE("synthetic speech is reproducible and bounded", "[data]") {
    CHECK(synth_clean(0.5, 42).samples == synth_clean(0.5, 42).samples);
    CHECK(synth_clean(0.5, 42).samples != synth_clean(0.5, 43).samples);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto w = synth_clean(0.25, seed);
        double peak = 0.0;
        for (double v : w.samples) peak = std::max(peak, std::abs(v));
        CHECK(peak <= 0.9);
        CHECK(peak > 0.0);
    }
    CHECK_THROWS(synth_clean(0.0, 1));
}

TEST_CASE("synthetic speech energy sits below 4 kHz", "[data]") {
    const auto w = synth_clean(1.0, 5);
    const auto p = periodogram(w.samples, 512);
    const std::size_t cut = 512 * 4000 / 16000;
    double low = 0.0, high = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) (k < cut ? low : high) += p[k];
    CHECK(low / (low + high) > 0.99);
}

TEST_CASE("white noise has a flat spectrum across octaves", "[data]") {
    const auto w = synth_noise(2.0, 3, NoiseKind::White);
    const auto p = periodogram(w.samples, 512);
    const double ref = band_mean(p, 1, 257);
    for (std::size_t lo = 8; lo < 256; lo *= 2) {
        const double db = 10.0 * std::log10(band_mean(p, lo, 2 * lo) / ref);
        CHECK(std::abs(db) < 3.0);
    }
}

TEST_CASE("pink noise falls about 3 dB per octave", "[data]") {
    const auto w = synth_noise(4.0, 4, "pink");
    const auto p = periodogram(w.samples, 512);
    std::vector<double> xs, ys;
    for (std::size_t lo = 4; lo < 256; lo *= 2) {
        xs.push_back(std::log2(double(lo)));
        ys.push_back(10.0 * std::log10(band_mean(p, lo, 2 * lo)));
    }
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        num += (xs[i] - mx) * (ys[i] - my);
        den += (xs[i] - mx) * (xs[i] - mx);
    }
    CHECK(num / den == Catch::Approx(-3.01).margin(0.5));
}

TEST_CASE("noise generators are reproducible and reject unknown kinds", "[data]") {
    for (const char* k : {"white", "pink", "babble"}) {
        CHECK(synth_noise(0.2, 9, k).samples == synth_noise(0.2, 9, k).samples);
        CHECK(synth_noise(0.2, 9, k).samples != synth_noise(0.2, 10, k).samples);
        CHECK(to_string(noise_kind_from_string(k)) == k);
    }
    CHECK_THROWS(synth_noise(0.2, 9, "brown"));
}

TEST_CASE("mixing hits the requested snr", "[data]") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 50; ++i) {
        const double snr = std::uniform_real_distribution<double>(-5.0, 25.0)(rng);
        const auto clean = synth_clean(0.3, 100 + i);
        const auto noise = synth_noise(0.3, 200 + i, static_cast<NoiseKind>(i % 3));
        const auto mix = mix_at_snr(clean, noise, snr);
        std::vector<double> scaled(mix.size());
        for (std::size_t t = 0; t < mix.size(); ++t) scaled[t] = mix.samples[t] - clean.samples[t];
        double pc = 0.0, pn = 0.0;
        for (std::size_t t = 0; t < mix.size(); ++t) {
            pc += clean.samples[t] * clean.samples[t];
            pn += scaled[t] * scaled[t];
        }
        CHECK(std::abs(10.0 * std::log10(pc / pn) - snr) <= 0.01);
        // mixture minus clean is exactly a scaled copy of the noise
        const double alpha = scaled[0] / noise.samples[0];
        for (std::size_t t = 0; t < mix.size(); t += 97) CHECK(scaled[t] == Catch::Approx(alpha * noise.samples[t]));
    }
}

TEST_CASE("mixing edge cases", "[data]") {
    const auto clean = synth_clean(0.1, 1);
    const auto noise = synth_noise(0.1, 2, NoiseKind::White);
    const auto at0 = mix_at_snr(clean, noise, 0.0);
    std::vector<double> d(clean.size());
    for (std::size_t t = 0; t < d.size(); ++t) d[t] = at0.samples[t] - clean.samples[t];
    CHECK(mean_power(d) == Catch::Approx(mean_power(clean.samples)).epsilon(1e-9));
    const auto at25 = mix_at_snr(clean, noise, 25.0);
    for (std::size_t t = 0; t < d.size(); ++t) d[t] = at25.samples[t] - clean.samples[t];
    CHECK(mean_power(d) == Catch::Approx(mean_power(clean.samples) / std::pow(10.0, 2.5)).epsilon(1e-9));

    dsp::Waveform silent{std::vector<double>(clean.size(), 0.0), 16000};
    CHECK_THROWS(mix_at_snr(silent, noise, 5.0));
    dsp::Waveform shorter{std::vector<double>(clean.size() - 1, 0.1), 16000};
    CHECK_THROWS(mix_at_snr(clean, shorter, 5.0));
}

TEST_CASE("aligned clips start on hop boundaries and commute with the stft", "[data]") {
    const auto clean = synth_clean(1.5, 21);
    const auto noisy = mix_at_snr(clean, synth_noise(1.5, 22, NoiseKind::Pink), 5.0);
    for (auto framing : {dsp::Framing::Centered, dsp::Framing::Causal}) {
        dsp::StftParams p{256, 1024, 1024, dsp::Window::Hann, framing};
        const auto full = dsp::spectrogram(noisy.samples, p);
        std::mt19937_64 rng(23);
        for (int trial = 0; trial < 10; ++trial) {
            const auto c = sample_aligned_clip(clean, noisy, std::size_t{8192}, p, rng);
            CHECK(c.start % 256 == 0);
            CHECK(c.clean.size() == 8192);
            CHECK(c.noisy.samples[0] == noisy.samples[c.start]);
            CHECK(c.noisy_spec.frames() == 32);
            const std::size_t off = c.start / 256;
            double worst = 0.0;
            for (std::size_t t = 4; t + 2 < c.noisy_spec.frames(); ++t)
                for (std::size_t f = 0; f < 513; ++f)
                    worst = std::max(worst, std::abs(c.noisy_spec.values.at(f, t) - full.values.at(f, off + t)));
            CHECK(worst <= 1e-5);
        }
    }
    CHECK(sample_aligned_clip(clean, noisy, 1.5, dsp::StftParams{}, 1).start == 0);
    CHECK_THROWS(sample_aligned_clip(clean, noisy, 2.0, dsp::StftParams{}, 1));
}

TEST_CASE("a 10 s clip has 160000 samples", "[data]") {
    const auto clean = synth_clean(12.0, 31);
    const auto c = sample_aligned_clip(clean, clean, 10.0, dsp::StftParams{}, 32);
    CHECK(c.clean.size() == 160000);
    CHECK(c.clean_spec.frames() == 625);
}

TEST_CASE("wav round trips", "[data][io]") {
    const auto dir = scratch_dir("wav");
    auto w = synth_clean(0.2, 41);
    w.samples.push_back(1.0);
    w.samples.push_back(-1.0);
    write_wav(dir / "f.wav", w, WavFormat::Float32);
    const auto f = read_wav(dir / "f.wav");
    CHECK(f.sample_rate == 16000);
    REQUIRE(f.size() == w.size());
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(f.samples[i] == double(float(w.samples[i])));

    write_wav(dir / "p.wav", w, WavFormat::Pcm16);
    const auto p = read_wav(dir / "p.wav");
    REQUIRE(p.size() == w.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) worst = std::max(worst, std::abs(p.samples[i] - w.samples[i]));
    CHECK(worst <= std::ldexp(1.0, -15));
}

TEST_CASE("malformed and stereo wavs are rejected", "[data][io]") {
    const auto dir = scratch_dir("bad");
    CHECK_THROWS(read_wav(dir / "missing.wav"));
    {
        std::ofstream(dir / "junk.wav") << "not a wav file at all";
    }
    CHECK_THROWS(read_wav(dir / "junk.wav"));

    write_wav(dir / "mono.wav", synth_clean(0.05, 1), WavFormat::Pcm16);
    std::vector<char> bytes;
    {
        std::ifstream in(dir / "mono.wav", std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto stereo = bytes;
    stereo[22] = 2;
    std::ofstream(dir / "stereo.wav", std::ios::binary).write(stereo.data(), stereo.size());
    CHECK_THROWS_WITH(read_wav(dir / "stereo.wav"), Catch::Matchers::ContainsSubstring("mono"));

    auto truncated = bytes;
    truncated.resize(60);
    std::ofstream(dir / "trunc.wav", std::ios::binary).write(truncated.data(), truncated.size());
    CHECK_THROWS(read_wav(dir / "trunc.wav"));

    auto pcm8 = bytes;
    pcm8[34] = 8;
    std::ofstream(dir / "pcm8.wav", std::ios::binary).write(pcm8.data(), pcm8.size());
    CHECK_THROWS(read_wav(dir / "pcm8.wav"));
}

TEST_CASE("generated corpus manifests are consistent", "[data][io]") {
    const auto dir = scratch_dir("corpus");
    CorpusConfig cfg;
    cfg.clips = 4;
    cfg.seconds = 0.25;
    cfg.seed = 3;
    const auto path = generate_corpus(dir, cfg);
    const auto m = read_manifest(path);
    REQUIRE(m.size() == 4);
    CHECK_NOTHROW(validate_manifest(path));
    for (const auto& r : m) {
        CHECK(r.snr_db == std::round(r.snr_db));
        CHECK(r.snr_db >= -5.0);
        CHECK(r.snr_db <= 25.0);
        CHECK(r.duration == Catch::Approx(0.25));
        const auto pair = load_pair(path, r);
        const auto noise = read_wav(resolve(path, r.noise_path));
        std::vector<double> d(pair.clean.size());
        for (std::size_t t = 0; t < d.size(); ++t) d[t] = pair.noisy.samples[t] - pair.clean.samples[t];
        CHECK(snr_db(pair.clean.samples, d) == Catch::Approx(r.snr_db).margin(0.01));
        CHECK(noise.size() == pair.clean.size());
    }

    const auto again = scratch_dir("corpus2");
    const auto m2 = read_manifest(generate_corpus(again, cfg));
    CHECK(m2 == m);
    CHECK(read_wav(again / m2[1].noisy_path).samples == read_wav(dir / m[1].noisy_path).samples);

    auto broken = m;
    broken[0].duration = 1.0;
    write_manifest(dir / "broken.jsonl", broken);
    CHECK_THROWS(validate_manifest(dir / "broken.jsonl"));
    fs::remove(dir / "noisy" / "00003.wav");
    CHECK_THROWS(validate_manifest(path));
    cfg.snr_max = 30.0;
    CHECK_THROWS(cfg.validate());
}

#include "hdn/data.hpp"

#include "json.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace hdn::data {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void scale_to_peak(std::vector<double>& x, double peak) {
    double m = 0.0;
    for (double v : x) m = std::max(m, std::abs(v));
    if (m == 0.0) return;
    const double g = peak / m;
    for (double& v : x) v *= g;
}

void scale_to_rms(std::vector<double>& x, double rms) {
    const double p = mean_power(x);
    if (p == 0.0) return;
    const double g = rms / std::sqrt(p);
    for (double& v : x) v *= g;
}

std::vector<double> syllable_envelope(std::size_t n, int sr, std::mt19937_64& rng) {
    std::vector<double> env(n, 0.02);
    std::size_t pos = 0;
    while (pos < n) {
        const auto len = static_cast<std::size_t>(uniform(rng, 0.12, 0.35) * sr);
        const double amp = uniform(rng, 0.3, 1.0);
        for (std::size_t i = 0; i < len && pos + i < n; ++i) {
            const double s = std::sin(std::numbers::pi * (static_cast<double>(i) + 0.5) / static_cast<double>(len));
            env[pos + i] = std::max(env[pos + i], amp * s * s);
        }
        pos += len;
        if (uniform(rng, 0.0, 1.0) < 0.3) pos += static_cast<std::size_t>(uniform(rng, 0.05, 0.2) * sr);
    }
    return env;
}

std::vector<double> harmonic_stream(std::size_t n, int sr, std::uint64_t seed, double detune) {
    std::mt19937_64 rng(seed);
    const int harmonics = std::uniform_int_distribution<int>(3, 8)(rng);
    const double base = uniform(rng, 100.0, 250.0) * detune;
    std::vector<double> amps(harmonics);
    for (int k = 0; k < harmonics; ++k) amps[k] = uniform(rng, 0.5, 1.0) / (k + 1);
    const double r1 = uniform(rng, 0.5, 2.0), r2 = uniform(rng, 0.1, 0.7);
    const double p1 = uniform(rng, 0.0, kTwoPi), p2 = uniform(rng, 0.0, kTwoPi);
    const auto env = syllable_envelope(n, sr, rng);

    std::vector<double> x(n);
    double phase = uniform(rng, 0.0, kTwoPi);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        const double drift = 0.1 * std::sin(kTwoPi * r1 * t + p1) + 0.06 * std::sin(kTwoPi * r2 * t + p2);
        const double f0 = std::clamp(base * std::exp(drift), 80.0, 300.0);
        phase = std::fmod(phase + kTwoPi * f0 / sr, kTwoPi);
        double s = 0.0;
        for (int k = 0; k < harmonics; ++k) s += amps[k] * std::sin((k + 1) * phase);
        x[i] = env[i] * s;
    }
    return x;
}

std::vector<double> white(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> x(n);
    for (double& v : x) v = d(rng);
    return x;
}

// Shapes white Gaussian noise by 1/sqrt(f) in the frequency domain.
std::vector<double> pink(std::size_t n, std::mt19937_64& rng) {
    auto x = white(n, rng);
    if (n < 2) return x;
    const std::size_t bins = n / 2 + 1;
    std::vector<std::complex<double>> spec(bins);
    auto* cs = reinterpret_cast<fftw_complex*>(spec.data());
    fftw_plan fwd = fftw_plan_dft_r2c_1d(static_cast<int>(n), x.data(), cs, FFTW_ESTIMATE);
    fftw_execute(fwd);
    fftw_destroy_plan(fwd);
    spec[0] = 0.0;
    for (std::size_t k = 1; k < bins; ++k) spec[k] /= std::sqrt(static_cast<double>(k)) * static_cast<double>(n);
    fftw_plan inv = fftw_plan_dft_c2r_1d(static_cast<int>(n), cs, x.data(), FFTW_ESTIMATE);
    fftw_execute(inv);
    fftw_destroy_plan(inv);
    return x;
}

template <typename T>
void put(std::ostream& os, T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get(const unsigned char* p) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

[[noreturn]] void wav_error(const std::filesystem::path& path, const std::string& what) {
    throw std::runtime_error("wav " + path.string() + ": " + what);
}

}  // namespace

std::string to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::White: return "white";
        case NoiseKind::Pink: return "pink";
        case NoiseKind::Babble: return "babble";
    }
    return "?";
}

NoiseKind noise_kind_from_string(const std::string& s) {
    if (s == "white") return NoiseKind::White;
    if (s == "pink") return NoiseKind::Pink;
    if (s == "babble") return NoiseKind::Babble;
    throw std::invalid_argument("unknown noise kind '" + s + "' (white|pink|babble)");
}

std::vector<double> snr_grid() {
    std::vector<double> g;
    for (int db = static_cast<int>(kMinSnrDb); db <= static_cast<int>(kMaxSnrDb); ++db) g.push_back(db);
    return g;
}

void MixtureSpec::validate() const {
    if (!(snr_db >= kMinSnrDb && snr_db <= kMaxSnrDb))
        throw std::invalid_argument("mixture: snr_db must lie in [-5, 25]");
    if (!(clip_seconds > 0.0)) throw std::invalid_argument("mixture: clip_seconds must be > 0");
    if (sample_rate <= 0) throw std::invalid_argument("mixture: sample_rate must be > 0");
}

std::size_t seconds_to_samples(double seconds, int sample_rate) {
    if (!(seconds > 0.0)) throw std::invalid_argument("duration must be > 0");
    return static_cast<std::size_t>(std::llround(seconds * sample_rate));
}

dsp::Waveform synth_clean(double seconds, std::uint64_t seed, int sample_rate) {
    const std::size_t n = seconds_to_samples(seconds, sample_rate);
    auto x = harmonic_stream(n, sample_rate, mix_seed(seed, 0), 1.0);
    std::mt19937_64 rng(mix_seed(seed, 1));
    scale_to_peak(x, uniform(rng, 0.5, 0.9));
    return {std::move(x), sample_rate};
}

dsp::Waveform synth_noise(double seconds, std::uint64_t seed, NoiseKind kind, int sample_rate) {
    const std::size_t n = seconds_to_samples(seconds, sample_rate);
    std::mt19937_64 rng(mix_seed(seed, 100));
    std::vector<double> x;
    switch (kind) {
        case NoiseKind::White: x = white(n, rng); break;
        case NoiseKind::Pink: x = pink(n, rng); break;
        case NoiseKind::Babble: {
            x.assign(n, 0.0);
            for (int s = 0; s < 6; ++s) {
                const auto stream = harmonic_stream(n, sample_rate, mix_seed(seed, 200 + s), uniform(rng, 0.85, 1.18));
                for (std::size_t i = 0; i < n; ++i) x[i] += stream[i];
            }
            break;
        }
    }
    scale_to_rms(x, 0.1);
    return {std::move(x), sample_rate};
}

dsp::Waveform synth_noise(double seconds, std::uint64_t seed, const std::string& kind, int sample_rate) {
    return synth_noise(seconds, seed, noise_kind_from_string(kind), sample_rate);
}

double mean_power(std::span<const double> x) {
    if (x.empty()) return 0.0;
    double s = 0.0;
    for (double v : x) s += v * v;
    return s / static_cast<double>(x.size());
}

double snr_db(std::span<const double> clean, std::span<const double> noise) {
    return 10.0 * std::log10(mean_power(clean) / mean_power(noise));
}

dsp::Waveform mix_at_snr(const dsp::Waveform& clean, const dsp::Waveform& noise, double snr) {
    if (clean.size() != noise.size()) throw std::invalid_argument("mix_at_snr: clean and noise lengths differ");
    if (clean.sample_rate != noise.sample_rate) throw std::invalid_argument("mix_at_snr: sample rates differ");
    if (!std::isfinite(snr)) throw std::invalid_argument("mix_at_snr: snr_db must be finite");
    const double pc = mean_power(clean.samples), pn = mean_power(noise.samples);
    if (pc == 0.0) throw std::invalid_argument("mix_at_snr: silent clean signal");
    if (pn == 0.0) throw std::invalid_argument("mix_at_snr: silent noise signal");
    const double alpha = std::sqrt(pc / (pn * std::pow(10.0, snr / 10.0)));
    dsp::Waveform out{clean.samples, clean.sample_rate};
    for (std::size_t i = 0; i < out.size(); ++i) out.samples[i] += alpha * noise.samples[i];
    return out;
}

ClipPair sample_aligned_clip(const dsp::Waveform& clean, const dsp::Waveform& noisy, std::size_t clip,
                             const dsp::StftParams& stft, std::mt19937_64& rng) {
    stft.validate();
    if (clean.size() != noisy.size()) throw std::invalid_argument("sample_aligned_clip: clean and noisy lengths differ");
    if (clip == 0) throw std::invalid_argument("sample_aligned_clip: empty clip");
    if (clean.size() < clip)
        throw std::invalid_argument("sample_aligned_clip: source too short (" + std::to_string(clean.size()) +
                                    " < " + std::to_string(clip) + " samples)");
    const std::size_t starts = (clean.size() - clip) / stft.hop + 1;
    const std::size_t start = stft.hop * std::uniform_int_distribution<std::size_t>(0, starts - 1)(rng);
    auto cut = [&](const dsp::Waveform& w) {
        return dsp::Waveform{{w.samples.begin() + start, w.samples.begin() + start + clip}, w.sample_rate};
    };
    ClipPair p;
    p.start = start;
    p.clean = cut(clean);
    p.noisy = cut(noisy);
    p.clean_spec = dsp::spectrogram(p.clean.samples, stft);
    p.noisy_spec = dsp::spectrogram(p.noisy.samples, stft);
    return p;
}

ClipPair sample_aligned_clip(const dsp::Waveform& clean, const dsp::Waveform& noisy, double clip_seconds,
                             const dsp::StftParams& stft, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sample_aligned_clip(clean, noisy, seconds_to_samples(clip_seconds, clean.sample_rate), stft, rng);
}

dsp::Waveform read_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) wav_error(path, "cannot open");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        wav_error(path, "not a RIFF/WAVE file");

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* chunk = bytes.data() + pos;
        const auto len = get<std::uint32_t>(chunk + 4);
        if (len > bytes.size() - pos - 8) wav_error(path, "truncated chunk");
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (len < 16) wav_error(path, "short fmt chunk");
            format = get<std::uint16_t>(chunk + 8);
            channels = get<std::uint16_t>(chunk + 10);
            rate = get<std::uint32_t>(chunk + 12);
            bits = get<std::uint16_t>(chunk + 22);
            if (format == 0xFFFE) {
                if (len < 40) wav_error(path, "short extensible fmt chunk");
                format = get<std::uint16_t>(chunk + 32);
            }
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            data = chunk + 8;
            data_len = len;
        }
        pos += 8 + len + (len & 1);
    }
    if (!have_fmt) wav_error(path, "missing fmt chunk");
    if (!data) wav_error(path, "missing data chunk");
    if (channels != 1) wav_error(path, "expected mono, got " + std::to_string(channels) + " channels");
    if (rate == 0) wav_error(path, "zero sample rate");

    dsp::Waveform w;
    w.sample_rate = static_cast<int>(rate);
    if (format == 1 && bits == 16) {
        w.samples.resize(data_len / 2);
        for (std::size_t i = 0; i < w.size(); ++i) w.samples[i] = get<std::int16_t>(data + 2 * i) / 32768.0;
    } else if (format == 3 && bits == 32) {
        w.samples.resize(data_len / 4);
        for (std::size_t i = 0; i < w.size(); ++i) w.samples[i] = get<float>(data + 4 * i);
    } else {
        wav_error(path, "unsupported encoding (format " + std::to_string(format) + ", " + std::to_string(bits) +
                            " bits); need 16-bit PCM or 32-bit float");
    }
    return w;
}

void write_wav(const std::filesystem::path& path, const dsp::Waveform& w, WavFormat format) {
    if (w.sample_rate <= 0) throw std::invalid_argument("write_wav: sample rate must be > 0");
    const std::uint16_t bits = format == WavFormat::Pcm16 ? 16 : 32;
    const std::uint32_t data_len = static_cast<std::uint32_t>(w.size() * (bits / 8));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("wav " + path.string() + ": cannot open for writing");
    out.write("RIFF", 4);
    put<std::uint32_t>(out, 36 + data_len);
    out.write("WAVEfmt ", 8);
    put<std::uint32_t>(out, 16);
    put<std::uint16_t>(out, format == WavFormat::Pcm16 ? 1 : 3);
    put<std::uint16_t>(out, 1);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate) * (bits / 8));
    put<std::uint16_t>(out, bits / 8);
    put<std::uint16_t>(out, bits);
    out.write("data", 4);
    put<std::uint32_t>(out, data_len);
    for (double v : w.samples) {
        if (format == WavFormat::Pcm16) {
            const double q = std::round(std::clamp(v, -1.0, 1.0) * 32768.0);
            put<std::int16_t>(out, static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0)));
        } else {
            put<float>(out, static_cast<float>(v));
        }
    }
    if (!out) throw std::runtime_error("wav " + path.string() + ": write failed");
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("manifest " + path.string() + ": cannot open");
    Manifest m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            m.push_back({j.at("clean_path").get<std::string>(), j.at("noise_path").get<std::string>(),
                         j.at("noisy_path").get<std::string>(), j.at("snr_db").get<double>(),
                         j.at("duration").get<double>()});
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("manifest " + path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("manifest " + path.string() + ": cannot open for writing");
    for (const auto& r : m) {
        nlohmann::json j{{"clean_path", r.clean_path}, {"noise_path", r.noise_path}, {"noisy_path", r.noisy_path},
                         {"snr_db", r.snr_db}, {"duration", r.duration}};
        out << j.dump() << '\n';
    }
}

std::filesystem::path resolve(const std::filesystem::path& manifest_path, const std::string& entry) {
    const std::filesystem::path p(entry);
    return p.is_absolute() ? p : manifest_path.parent_path() / p;
}

void validate_manifest(const std::filesystem::path& manifest_path) {
    const auto m = read_manifest(manifest_path);
    int rate = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const auto& r = m[i];
        for (const auto& entry : {r.clean_path, r.noise_path, r.noisy_path}) {
            const auto p = resolve(manifest_path, entry);
            if (!std::filesystem::exists(p))
                throw std::runtime_error("manifest record " + std::to_string(i) + ": missing file " + p.string());
            const auto w = read_wav(p);
            if (rate == 0) rate = w.sample_rate;
            if (w.sample_rate != rate)
                throw std::runtime_error("manifest record " + std::to_string(i) + ": sample rate mismatch");
            if (std::abs(w.seconds() - r.duration) > 1.0 / w.sample_rate)
                throw std::runtime_error("manifest record " + std::to_string(i) + ": duration mismatch in " +
                                         p.string());
        }
    }
}

LoadedPair load_pair(const std::filesystem::path& manifest_path, const ManifestRecord& r) {
    LoadedPair p{read_wav(resolve(manifest_path, r.clean_path)), read_wav(resolve(manifest_path, r.noisy_path))};
    if (p.clean.size() != p.noisy.size() || p.clean.sample_rate != p.noisy.sample_rate)
        throw std::runtime_error("manifest pair " + r.clean_path + " / " + r.noisy_path + " is inconsistent");
    return p;
}

void CorpusConfig::validate() const {
    if (clips == 0) throw std::invalid_argument("corpus: clips must be > 0");
    if (!(seconds > 0.0)) throw std::invalid_argument("corpus: seconds must be > 0");
    if (noise_kinds.empty()) throw std::invalid_argument("corpus: need at least one noise kind");
    if (!(snr_min >= kMinSnrDb && snr_max <= kMaxSnrDb && snr_min <= snr_max))
        throw std::invalid_argument("corpus: snr range must satisfy -5 <= snr_min <= snr_max <= 25");
    if (sample_rate <= 0) throw std::invalid_argument("corpus: sample_rate must be > 0");
}

std::filesystem::path generate_corpus(const std::filesystem::path& dir, const CorpusConfig& cfg) {
    cfg.validate();
    std::vector<double> levels;
    for (double s : snr_grid())
        if (s >= cfg.snr_min && s <= cfg.snr_max) levels.push_back(s);
    if (levels.empty()) levels.push_back(cfg.snr_min);

    for (const char* sub : {"clean", "noise", "noisy"}) std::filesystem::create_directories(dir / sub);
    std::mt19937_64 rng(mix_seed(cfg.seed, 7));
    Manifest m;
    for (std::size_t i = 0; i < cfg.clips; ++i) {
        const auto kind = cfg.noise_kinds[std::uniform_int_distribution<std::size_t>(0, cfg.noise_kinds.size() - 1)(rng)];
        const double snr = levels[std::uniform_int_distribution<std::size_t>(0, levels.size() - 1)(rng)];
        const auto clean = synth_clean(cfg.seconds, mix_seed(cfg.seed, 1000 + 2 * i), cfg.sample_rate);
        const auto noise = synth_noise(cfg.seconds, mix_seed(cfg.seed, 1001 + 2 * i), kind, cfg.sample_rate);
        const auto noisy = mix_at_snr(clean, noise, snr);
        char name[32];
        std::snprintf(name, sizeof name, "%05zu.wav", i);
        ManifestRecord r{std::string("clean/") + name, std::string("noise/") + name, std::string("noisy/") + name, snr,
                         clean.seconds()};
        write_wav(dir / r.clean_path, clean);
        write_wav(dir / r.noise_path, noise);
        write_wav(dir / r.noisy_path, noisy);
        m.push_back(std::move(r));
    }
    const auto path = dir / "manifest.jsonl";
    write_manifest(path, m);
    return path;
}

}  // namespace hdn::data

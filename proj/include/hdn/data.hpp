#pragma once

#include "hdn/dsp.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace hdn::data {

inline constexpr double kMinSnrDb = -5.0;
inline constexpr double kMaxSnrDb = 25.0;

enum class NoiseKind { White, Pink, Babble };

std::string to_string(NoiseKind k);
NoiseKind noise_kind_from_string(const std::string& s);

// 31 levels, 1 dB apart, from kMinSnrDb to kMaxSnrDb.
std::vector<double> snr_grid();

struct MixtureSpec {
    double snr_db = 0.0;
    double clip_seconds = 10.0;
    int sample_rate = dsp::kDefaultSampleRate;
    std::uint64_t seed = 0;

    void validate() const;
};

std::size_t seconds_to_samples(double seconds, int sample_rate);

// Harmonic pseudo-speech: 3 to 8 harmonics of a drifting f0 in 80..300 Hz under
// syllable-rate envelopes. Peak amplitude is at most 0.9.
dsp::Waveform synth_clean(double seconds, std::uint64_t seed, int sample_rate = dsp::kDefaultSampleRate);

dsp::Waveform synth_noise(double seconds, std::uint64_t seed, NoiseKind kind,
                          int sample_rate = dsp::kDefaultSampleRate);
dsp::Waveform synth_noise(double seconds, std::uint64_t seed, const std::string& kind,
                          int sample_rate = dsp::kDefaultSampleRate);

double mean_power(std::span<const double> x);
double snr_db(std::span<const double> clean, std::span<const double> noise);

// clean + alpha * noise with alpha chosen so the clean-to-scaled-noise power ratio is snr_db.
dsp::Waveform mix_at_snr(const dsp::Waveform& clean, const dsp::Waveform& noise, double snr_db);

struct ClipPair {
    dsp::Waveform clean;
    dsp::Waveform noisy;
    dsp::MagnitudeSpectrogram clean_spec;
    dsp::MagnitudeSpectrogram noisy_spec;
    std::size_t start = 0;
};

// Random clip whose start is a multiple of the hop, so waveform and spectrogram align.
ClipPair sample_aligned_clip(const dsp::Waveform& clean, const dsp::Waveform& noisy, std::size_t clip_samples,
                             const dsp::StftParams& stft, std::mt19937_64& rng);
ClipPair sample_aligned_clip(const dsp::Waveform& clean, const dsp::Waveform& noisy, double clip_seconds,
                             const dsp::StftParams& stft, std::uint64_t seed);

enum class WavFormat { Pcm16, Float32 };

dsp::Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const dsp::Waveform& w, WavFormat format = WavFormat::Float32);

struct ManifestRecord {
    std::string clean_path;
    std::string noise_path;
    std::string noisy_path;
    double snr_db = 0.0;
    double duration = 0.0;

    bool operator==(const ManifestRecord&) const = default;
};

using Manifest = std::vector<ManifestRecord>;

// JSON lines. Relative paths are resolved against the manifest's directory.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& m);

std::filesystem::path resolve(const std::filesystem::path& manifest_path, const std::string& entry);

// Every file exists, is loadable, shares one sample rate and matches the recorded duration.
void validate_manifest(const std::filesystem::path& manifest_path);

struct LoadedPair {
    dsp::Waveform clean;
    dsp::Waveform noisy;
};

LoadedPair load_pair(const std::filesystem::path& manifest_path, const ManifestRecord& r);

struct CorpusConfig {
    std::size_t clips = 200;
    double seconds = 10.0;
    std::vector<NoiseKind> noise_kinds{NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble};
    double snr_min = kMinSnrDb;
    double snr_max = kMaxSnrDb;
    int sample_rate = dsp::kDefaultSampleRate;
    std::uint64_t seed = 0;

    void validate() const;
};

// Writes clean/, noise/, noisy/ float WAVs and manifest.jsonl under dir; returns the manifest path.
std::filesystem::path generate_corpus(const std::filesystem::path& dir, const CorpusConfig& cfg);

}  // namespace hdn::data

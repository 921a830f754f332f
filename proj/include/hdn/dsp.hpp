#pragma once

#include "hdn/nn/tensor.hpp"

#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hdn::dsp {

inline constexpr int kDefaultSampleRate = 16000;

struct Waveform {
    std::vector<double> samples;
    int sample_rate = kDefaultSampleRate;

    std::size_t size() const noexcept { return samples.size(); }
    double seconds() const noexcept { return static_cast<double>(samples.size()) / sample_rate; }
};

enum class Window { Hann, Rectangular };

// Centered: frame t is centred on sample t*hop with reflection padding of win_length/2.
// Causal: frame t ends at sample (t+1)*hop with zero left padding, so it never reads
// past the end of its hop block. Both yield floor(T / hop) frames.
enum class Framing { Centered, Causal };

struct StftParams {
    std::size_t hop = 256;
    std::size_t win_length = 1024;
    std::size_t n_fft = 1024;
    Window window = Window::Hann;
    Framing framing = Framing::Centered;

    std::size_t bins() const noexcept { return n_fft / 2 + 1; }

    // Throws std::invalid_argument when the triple is inconsistent.
    void validate() const;

    bool operator==(const StftParams&) const = default;
};

std::string to_string(const StftParams& p);

using ComplexSpectrogramValues = nn::Tensor<std::complex<double>>;

// values: [bins x frames]
struct ComplexSpectrogram {
    ComplexSpectrogramValues values;
    StftParams params;

    std::size_t bins() const { return values.dim(0); }
    std::size_t frames() const { return values.dim(1); }
};

// values: [bins x frames], nonnegative
struct MagnitudeSpectrogram {
    nn::Tensor<double> values;
    StftParams params;

    std::size_t bins() const { return values.dim(0); }
    std::size_t frames() const { return values.dim(1); }
};

std::size_t frame_count(std::size_t length, const StftParams& p);

// First sample index (before padding) read by frame t.
std::ptrdiff_t frame_start(std::size_t t, const StftParams& p);

std::vector<double> analysis_window(const StftParams& p);

// Centered framing needs at least win_length samples; causal framing accepts any length.
ComplexSpectrogram stft(std::span<const double> x, const StftParams& p);
inline ComplexSpectrogram stft(const Waveform& w, const StftParams& p) { return stft(std::span(w.samples), p); }

MagnitudeSpectrogram magnitude(const ComplexSpectrogram& c);

// Convenience: magnitude(stft(x, p)).
MagnitudeSpectrogram spectrogram(std::span<const double> x, const StftParams& p);

// Weighted overlap-add resynthesis of `mag` with the phase of `phase_source`.
// Samples not covered by any window with nonzero weight come out as zero.
Waveform istft_with_phase(const MagnitudeSpectrogram& mag, const ComplexSpectrogram& phase_source,
                          std::size_t target_len, int sample_rate = kDefaultSampleRate);

// Index of the first bin in the upper half: floor(F/2), so the upper half holds
// ceil(F/2) rows including the Nyquist bin.
inline std::size_t high_band_start(std::size_t bins) { return bins / 2; }

MagnitudeSpectrogram high_band(const MagnitudeSpectrogram& mag);

// Adjoint of stft: maps dL/dX (as dL/dRe + i dL/dIm, [bins x frames]) to dL/dx for a
// signal of the given length.
std::vector<double> stft_adjoint(const ComplexSpectrogramValues& grad, const StftParams& p, std::size_t length);

}  // namespace hdn::dsp

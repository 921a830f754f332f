#include "hdn/dsp.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>

namespace hdn::dsp {
namespace {

struct FftPlans {
    fftw_plan forward = nullptr;
    fftw_plan inverse = nullptr;
};

// FFTW planning is not thread-safe; execution with the new-array API is.
const FftPlans& plans_for(std::size_t n) {
    static std::mutex mutex;
    static std::map<std::size_t, FftPlans> cache;
    std::lock_guard lock(mutex);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    std::vector<double> real(n);
    std::vector<std::complex<double>> spec(n / 2 + 1);
    auto* cplx = reinterpret_cast<fftw_complex*>(spec.data());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    FftPlans plans;
    plans.forward = fftw_plan_dft_r2c_1d(static_cast<int>(n), real.data(), cplx, flags);
    plans.inverse = fftw_plan_dft_c2r_1d(static_cast<int>(n), cplx, real.data(), flags);
    return cache.emplace(n, plans).first->second;
}

void rfft(std::vector<double>& in, std::vector<std::complex<double>>& out) {
    fftw_execute_dft_r2c(plans_for(in.size()).forward, in.data(), reinterpret_cast<fftw_complex*>(out.data()));
}

// Unnormalised inverse; destroys `in`.
void irfft(std::vector<std::complex<double>>& in, std::vector<double>& out) {
    fftw_execute_dft_c2r(plans_for(out.size()).inverse, reinterpret_cast<fftw_complex*>(in.data()), out.data());
}

// Maps a (possibly padded) sample index to a source index, or -1 for zero padding.
std::ptrdiff_t source_index(std::ptrdiff_t i, std::size_t length, Framing framing) {
    const auto n = static_cast<std::ptrdiff_t>(length);
    if (i >= 0 && i < n) return i;
    if (framing == Framing::Causal) return -1;
    if (i < 0) return -i < n ? -i : -1;
    const std::ptrdiff_t r = 2 * (n - 1) - i;
    return r >= 0 ? r : -1;
}

}  // namespace

void StftParams::validate() const {
    if (hop < 1) throw std::invalid_argument("stft: hop must be >= 1");
    if (win_length < 1 || win_length > n_fft) throw std::invalid_argument("stft: need 1 <= win_length <= n_fft");
    if (hop > win_length) throw std::invalid_argument("stft: hop must not exceed win_length");
    if (n_fft % 2 != 0) throw std::invalid_argument("stft: n_fft must be even");
}

std::string to_string(const StftParams& p) {
    std::ostringstream oss;
    oss << "(hop " << p.hop << ", win " << p.win_length << ", fft " << p.n_fft << ", "
        << (p.framing == Framing::Causal ? "causal" : "centered") << ")";
    return oss.str();
}

std::size_t frame_count(std::size_t length, const StftParams& p) { return length / p.hop; }

std::ptrdiff_t frame_start(std::size_t t, const StftParams& p) {
    const auto hop = static_cast<std::ptrdiff_t>(p.hop);
    const auto win = static_cast<std::ptrdiff_t>(p.win_length);
    const auto tt = static_cast<std::ptrdiff_t>(t);
    return p.framing == Framing::Causal ? (tt + 1) * hop - win : tt * hop - win / 2;
}

std::vector<double> analysis_window(const StftParams& p) {
    std::vector<double> w(p.win_length, 1.0);
    if (p.window == Window::Hann) {
        const double n = static_cast<double>(p.win_length);
        for (std::size_t i = 0; i < p.win_length; ++i) {
            w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / n);
        }
    }
    return w;
}

ComplexSpectrogram stft(std::span<const double> x, const StftParams& p) {
    p.validate();
    if (p.framing == Framing::Centered && x.size() < p.win_length) {
        throw std::invalid_argument("stft: input too short (" + std::to_string(x.size()) + " samples < window " +
                                    std::to_string(p.win_length) + ")");
    }
    const std::size_t frames = frame_count(x.size(), p);
    const std::size_t bins = p.bins();
    const std::vector<double> win = analysis_window(p);
    ComplexSpectrogram out{ComplexSpectrogramValues({bins, frames}), p};
    std::vector<double> buf(p.n_fft);
    std::vector<std::complex<double>> spec(bins);
    for (std::size_t t = 0; t < frames; ++t) {
        std::fill(buf.begin(), buf.end(), 0.0);
        const std::ptrdiff_t start = frame_start(t, p);
        for (std::size_t n = 0; n < p.win_length; ++n) {
            const std::ptrdiff_t src = source_index(start + static_cast<std::ptrdiff_t>(n), x.size(), p.framing);
            if (src >= 0) buf[n] = win[n] * x[static_cast<std::size_t>(src)];
        }
        rfft(buf, spec);
        for (std::size_t f = 0; f < bins; ++f) out.values.at(f, t) = spec[f];
    }
    return out;
}

MagnitudeSpectrogram magnitude(const ComplexSpectrogram& c) {
    MagnitudeSpectrogram out{nn::Tensor<double>(c.values.shape()), c.params};
    for (std::size_t i = 0; i < c.values.size(); ++i) out.values[i] = std::abs(c.values[i]);
    return out;
}

MagnitudeSpectrogram spectrogram(std::span<const double> x, const StftParams& p) { return magnitude(stft(x, p)); }

Waveform istft_with_phase(const MagnitudeSpectrogram& mag, const ComplexSpectrogram& phase_source,
                          std::size_t target_len, int sample_rate) {
    if (mag.values.shape() != phase_source.values.shape() || !(mag.params == phase_source.params)) {
        throw std::invalid_argument("istft_with_phase: magnitude and phase source differ in shape or parameters");
    }
    const StftParams& p = mag.params;
    p.validate();
    const std::size_t bins = mag.bins(), frames = mag.frames();
    const std::vector<double> win = analysis_window(p);
    std::vector<double> acc(target_len, 0.0), env(target_len, 0.0);
    std::vector<std::complex<double>> spec(bins);
    std::vector<double> frame(p.n_fft);
    const double inv_n = 1.0 / static_cast<double>(p.n_fft);
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t f = 0; f < bins; ++f) {
            const std::complex<double> ph = phase_source.values.at(f, t);
            const double a = std::abs(ph);
            spec[f] = a > 0.0 ? mag.values.at(f, t) * (ph / a) : std::complex<double>(mag.values.at(f, t), 0.0);
        }
        irfft(spec, frame);
        const std::ptrdiff_t start = frame_start(t, p);
        for (std::size_t n = 0; n < p.win_length; ++n) {
            const std::ptrdiff_t i = start + static_cast<std::ptrdiff_t>(n);
            if (i < 0 || i >= static_cast<std::ptrdiff_t>(target_len)) continue;
            acc[static_cast<std::size_t>(i)] += win[n] * frame[n] * inv_n;
            env[static_cast<std::size_t>(i)] += win[n] * win[n];
        }
    }
    Waveform out{std::vector<double>(target_len, 0.0), sample_rate};
    for (std::size_t i = 0; i < target_len; ++i) {
        if (env[i] > 1e-14) out.samples[i] = acc[i] / env[i];
    }
    return out;
}

MagnitudeSpectrogram high_band(const MagnitudeSpectrogram& mag) {
    const std::size_t bins = mag.bins(), frames = mag.frames();
    if (bins < 2) throw std::invalid_argument("high_band: need at least 2 frequency bins");
    const std::size_t start = high_band_start(bins);
    MagnitudeSpectrogram out{nn::Tensor<double>({bins - start, frames}), mag.params};
    std::copy(mag.values.row(start), mag.values.row(start) + (bins - start) * frames, out.values.data());
    return out;
}

std::vector<double> stft_adjoint(const ComplexSpectrogramValues& grad, const StftParams& p, std::size_t length) {
    const std::size_t bins = grad.dim(0), frames = grad.dim(1);
    if (bins != p.bins()) throw std::invalid_argument("stft_adjoint: bin count does not match parameters");
    const std::vector<double> win = analysis_window(p);
    std::vector<double> gx(length, 0.0);
    std::vector<std::complex<double>> half(bins);
    std::vector<double> frame(p.n_fft);
    for (std::size_t t = 0; t < frames; ++t) {
        // Re(sum_f G_f e^{i 2 pi f n / N}) over the one-sided spectrum, via a Hermitian c2r.
        for (std::size_t f = 0; f < bins; ++f) {
            const std::complex<double> g = grad.at(f, t);
            half[f] = (f == 0 || f == bins - 1) ? g : 0.5 * g;
        }
        irfft(half, frame);
        const std::ptrdiff_t start = frame_start(t, p);
        for (std::size_t n = 0; n < p.win_length; ++n) {
            const std::ptrdiff_t src = source_index(start + static_cast<std::ptrdiff_t>(n), length, p.framing);
            if (src >= 0) gx[static_cast<std::size_t>(src)] += win[n] * frame[n];
        }
    }
    return gx;
}

}  // namespace hdn::dsp

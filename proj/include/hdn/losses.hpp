#pragma once

#include "hdn/dsp.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace hdn::losses {

// Floor applied to magnitudes inside every logarithm.
inline constexpr double kLogFloor = 1e-5;

enum class Band { Full, High };

// Normaliser of the log-magnitude term in the multi-resolution loss: the waveform
// length T (default) or the frame count.
enum class LogNorm { Waveform, Frames };

struct ResolutionSet {
    std::vector<dsp::StftParams> resolutions;

    // (hop, win, fft) in {(50, 240, 512), (120, 600, 1024), (240, 1200, 2048)}.
    static ResolutionSet standard();
    void validate() const;
};

struct LossBreakdown {
    double total = 0.0;
    std::map<std::string, double> terms;
};

// Spectrogram loss: (1/T_spec) * ||log(y / y_hat)||_1 + ||y - y_hat||_F / ||y||_F.
// grad (optional) receives d loss / d y_hat with the shape of y_hat.
double spec_loss(const dsp::MagnitudeSpectrogram& y, const dsp::MagnitudeSpectrogram& y_hat,
                 nn::Tensor<double>* grad = nullptr);

struct ResolutionTerm {
    double spectral_convergence = 0.0;
    double log_magnitude = 0.0;
    double value() const { return spectral_convergence + log_magnitude; }
};

// One resolution of the multi-resolution STFT loss. grad (optional) accumulates
// d term / d x_hat.
ResolutionTerm stft_resolution_term(std::span<const double> x, std::span<const double> x_hat,
                                    const dsp::StftParams& p, Band band = Band::Full,
                                    LogNorm norm = LogNorm::Waveform, std::vector<double>* grad = nullptr);

double mrstft(std::span<const double> x, std::span<const double> x_hat, const ResolutionSet& rs, Band band,
              LogNorm norm = LogNorm::Waveform, std::vector<double>* grad = nullptr,
              LossBreakdown* breakdown = nullptr);

// Mean absolute error.
double waveform_l1(std::span<const double> x, std::span<const double> x_hat, std::vector<double>* grad = nullptr);

// waveform_l1 + mrstft(band). grad (optional) receives the gradient of the total.
LossBreakdown hybrid_loss(std::span<const double> x, std::span<const double> x_hat, const ResolutionSet& rs,
                          Band band, LogNorm norm = LogNorm::Waveform, std::vector<double>* grad = nullptr);

}  // namespace hdn::losses

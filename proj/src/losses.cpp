#include "hdn/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace hdn::losses {
namespace {

double frobenius(const double* v, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v[i] * v[i];
    return std::sqrt(s);
}

double sign(double v) { return (v > 0.0) - (v < 0.0); }

void check_lengths(std::span<const double> x, std::span<const double> x_hat) {
    if (x.size() != x_hat.size()) {
        throw std::invalid_argument("loss: length mismatch (" + std::to_string(x.size()) + " vs " +
                                    std::to_string(x_hat.size()) + ")");
    }
}

}  // namespace

ResolutionSet ResolutionSet::standard() {
    ResolutionSet rs;
    rs.resolutions = {{50, 240, 512}, {120, 600, 1024}, {240, 1200, 2048}};
    return rs;
}

void ResolutionSet::validate() const {
    if (resolutions.empty()) throw std::invalid_argument("resolution set is empty");
    for (const auto& p : resolutions) p.validate();
}

double spec_loss(const dsp::MagnitudeSpectrogram& y, const dsp::MagnitudeSpectrogram& y_hat,
                 nn::Tensor<double>* grad) {
    if (y.values.shape() != y_hat.values.shape()) {
        throw std::invalid_argument("spec_loss: shape mismatch " + nn::shape_str(y.values.shape()) + " vs " +
                                    nn::shape_str(y_hat.values.shape()));
    }
    const std::size_t n = y.values.size();
    const double y_norm = frobenius(y.values.data(), n);
    if (y_norm == 0.0) throw std::invalid_argument("spec_loss: degenerate clean target (all-zero spectrogram)");
    const double inv_frames = 1.0 / static_cast<double>(y.frames());

    double log_sum = 0.0, diff_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = std::max(y.values[i], kLogFloor), b = std::max(y_hat.values[i], kLogFloor);
        log_sum += std::abs(std::log(a) - std::log(b));
        const double d = y.values[i] - y_hat.values[i];
        diff_sq += d * d;
    }
    const double diff_norm = std::sqrt(diff_sq);
    if (grad) {
        *grad = nn::Tensor<double>(y_hat.values.shape());
        for (std::size_t i = 0; i < n; ++i) {
            const double a = std::max(y.values[i], kLogFloor);
            const double yh = y_hat.values[i];
            double g = 0.0;
            if (yh > kLogFloor) g -= sign(std::log(a) - std::log(yh)) / yh * inv_frames;
            if (diff_norm > 0.0) g -= (y.values[i] - yh) / (diff_norm * y_norm);
            (*grad)[i] = g;
        }
    }
    return log_sum * inv_frames + diff_norm / y_norm;
}

ResolutionTerm stft_resolution_term(std::span<const double> x, std::span<const double> x_hat,
                                    const dsp::StftParams& p, Band band, LogNorm norm, std::vector<double>* grad) {
    check_lengths(x, x_hat);
    const dsp::MagnitudeSpectrogram sx = dsp::spectrogram(x, p);
    const dsp::ComplexSpectrogram cx_hat = dsp::stft(x_hat, p);
    const std::size_t bins = sx.bins(), frames = sx.frames();
    const std::size_t first = band == Band::High ? dsp::high_band_start(bins) : 0;

    double ref_sq = 0.0, diff_sq = 0.0, log_sum = 0.0;
    for (std::size_t f = first; f < bins; ++f) {
        for (std::size_t t = 0; t < frames; ++t) {
            const double a = sx.values.at(f, t);
            const double b = std::abs(cx_hat.values.at(f, t));
            ref_sq += a * a;
            diff_sq += (a - b) * (a - b);
            log_sum += std::abs(std::log(std::max(a, kLogFloor)) - std::log(std::max(b, kLogFloor)));
        }
    }
    if (ref_sq == 0.0) throw std::invalid_argument("stft loss: degenerate clean target (silent reference)");
    const double ref_norm = std::sqrt(ref_sq), diff_norm = std::sqrt(diff_sq);
    const double log_scale = 1.0 / static_cast<double>(norm == LogNorm::Waveform ? x.size() : frames);

    ResolutionTerm term{diff_norm / ref_norm, log_sum * log_scale};
    if (grad) {
        if (grad->size() != x_hat.size()) grad->assign(x_hat.size(), 0.0);
        dsp::ComplexSpectrogramValues gspec({bins, frames});
        for (std::size_t f = first; f < bins; ++f) {
            for (std::size_t t = 0; t < frames; ++t) {
                const std::complex<double> z = cx_hat.values.at(f, t);
                const double b = std::abs(z);
                if (b == 0.0) continue;
                const double a = sx.values.at(f, t);
                double g = 0.0;
                if (diff_norm > 0.0) g -= (a - b) / (diff_norm * ref_norm);
                if (b > kLogFloor) g -= sign(std::log(std::max(a, kLogFloor)) - std::log(b)) / b * log_scale;
                gspec.at(f, t) = g * (z / b);
            }
        }
        const std::vector<double> gx = dsp::stft_adjoint(gspec, p, x_hat.size());
        for (std::size_t i = 0; i < gx.size(); ++i) (*grad)[i] += gx[i];
    }
    return term;
}

double mrstft(std::span<const double> x, std::span<const double> x_hat, const ResolutionSet& rs, Band band,
              LogNorm norm, std::vector<double>* grad, LossBreakdown* breakdown) {
    rs.validate();
    check_lengths(x, x_hat);
    if (grad) grad->assign(x_hat.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < rs.resolutions.size(); ++i) {
        const ResolutionTerm term = stft_resolution_term(x, x_hat, rs.resolutions[i], band, norm, grad);
        total += term.value();
        if (breakdown) {
            breakdown->terms["sc/" + std::to_string(i)] = term.spectral_convergence;
            breakdown->terms["mag/" + std::to_string(i)] = term.log_magnitude;
        }
    }
    return total;
}

double waveform_l1(std::span<const double> x, std::span<const double> x_hat, std::vector<double>* grad) {
    check_lengths(x, x_hat);
    if (x.empty()) return 0.0;
    const double inv_n = 1.0 / static_cast<double>(x.size());
    double s = 0.0;
    if (grad) grad->assign(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        s += std::abs(x[i] - x_hat[i]);
        if (grad) (*grad)[i] = -sign(x[i] - x_hat[i]) * inv_n;
    }
    return s * inv_n;
}

LossBreakdown hybrid_loss(std::span<const double> x, std::span<const double> x_hat, const ResolutionSet& rs,
                          Band band, LogNorm norm, std::vector<double>* grad) {
    LossBreakdown out;
    std::vector<double> g_l1;
    const double l1 = waveform_l1(x, x_hat, grad ? &g_l1 : nullptr);
    const double stft_total = mrstft(x, x_hat, rs, band, norm, grad, &out);
    out.terms["l1"] = l1;
    out.total = l1 + stft_total;
    if (grad) {
        for (std::size_t i = 0; i < g_l1.size(); ++i) (*grad)[i] += g_l1[i];
    }
    return out;
}

}  // namespace hdn::losses

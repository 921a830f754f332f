#pragma once

#include "hdn/conditioner.hpp"
#include "hdn/dsp.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hdn::eval {

inline constexpr double kSiSdrCapDb = 60.0;
inline constexpr double kLsdPowerFloor = 1e-10;

// Scale-invariant SDR in dB, clamped to [-60, 60].
double si_sdr(std::span<const double> reference, std::span<const double> estimate);

// Plain SNR of the estimate against the reference, clamped like si_sdr.
double snr(std::span<const double> reference, std::span<const double> estimate);

// Log-spectral distance in dB: mean over frames of the RMS over bins of the difference of
// 10 log10 power, with powers floored at kLsdPowerFloor.
double lsd(std::span<const double> reference, std::span<const double> estimate, const dsp::StftParams& p);

enum class ZeroHandling { Wilcoxon, Pratt };

struct WilcoxonResult {
    double p_value = 1.0;
    double w_plus = 0.0;   // sum of ranks of positive differences
    std::size_t n = 0;     // differences entering the statistic
    bool exact = false;
};

inline constexpr std::size_t kWilcoxonExactMax = 25;

// Two-sided signed-rank test on a - b. Exact null distribution for n <= 25, otherwise the
// normal approximation with continuity and tie corrections.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                    ZeroHandling zeros = ZeroHandling::Wilcoxon);

struct RtfOptions {
    std::size_t batch = 4;
    double seconds = 10.0;
    int sample_rate = dsp::kDefaultSampleRate;
    std::size_t trials = 3;
    std::size_t warmup = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct RtfReport {
    double specnet = 0.0;
    double unet = 0.0;
    double full = 0.0;
    RtfOptions options;
    std::map<std::string, std::vector<double>> trials;  // per-trial RTFs, before taking medians

    nlohmann::json to_json() const;
};

// Wall time over audio time, median across trials. The specnet part covers the noisy STFT
// and the spectrogram denoiser; the unet part runs the U-Net alone on the raw waveform.
RtfReport rtf_benchmark(const conditioner::HybridModel& model, const RtfOptions& opt = {});

struct ExternalMetric {
    std::string name;
    std::string command;  // {ref} and {est} are replaced with WAV paths
    std::string pattern;  // first capture group is parsed as the score

    void validate() const;
};

// Runs one external metric command and parses its score from standard output.
double run_external_metric(const ExternalMetric& m, const std::filesystem::path& ref,
                           const std::filesystem::path& est);

using Denoiser = std::function<dsp::Waveform(const dsp::Waveform&)>;

struct EvalOptions {
    dsp::StftParams lsd_stft{256, 1024, 1024};
    std::vector<ExternalMetric> external;
    std::string config_hash;
    // Where denoised files go; when empty they are written to a temporary directory and
    // removed afterwards.
    std::filesystem::path denoised_dir;
};

inline constexpr int kReportVersion = 1;

struct ItemMetrics {
    std::size_t index = 0;
    std::string noisy_path;
    std::optional<std::string> error;
    double si_sdr_db = 0.0;
    double lsd_db = 0.0;
    double snr_db = 0.0;
    double noisy_si_sdr_db = 0.0;
    double noisy_lsd_db = 0.0;
    double noisy_snr_db = 0.0;
    std::map<std::string, double> external;
};

struct MetricReport {
    std::string config_hash;
    std::vector<ItemMetrics> items;
    std::map<std::string, double> aggregates;  // means over the items without errors
    std::size_t count = 0;
    std::size_t failed = 0;

    nlohmann::json to_json() const;
};

// Metrics for one clean/noisy pair and the denoiser output.
ItemMetrics score_item(const dsp::Waveform& clean, const dsp::Waveform& noisy, const dsp::Waveform& denoised,
                       const dsp::StftParams& lsd_stft);

// Recomputes aggregates from the items, including the signed-rank p-value of denoised
// against noisy SI-SDR when at least five items succeeded.
void finalize(MetricReport& report);

// Denoises every manifest entry. Failures are recorded on their item and do not abort.
MetricReport evaluate_testset(const std::filesystem::path& manifest, const Denoiser& denoise,
                              const EvalOptions& opt = {});

void write_report(const std::filesystem::path& path, const MetricReport& report);

}  // namespace hdn::eval

#pragma once

#include "hdn/dsp.hpp"
#include "hdn/specnet.hpp"
#include "hdn/unet.hpp"

#include <cstdint>
#include <string>

namespace hdn::conditioner {

enum class ConditioningMethod { Addition, Concatenation, Film };

std::string to_string(ConditioningMethod m);
ConditioningMethod method_from_string(const std::string& s);

// How the (32, 3) filter is read: (time, freq) or (freq, time).
enum class FilterOrientation { TimeFreq, FreqTime };

struct UpsamplerConfig {
    std::vector<std::size_t> time_strides{16, 16};
    std::size_t filter_a = 32;
    std::size_t filter_b = 3;
    FilterOrientation orientation = FilterOrientation::TimeFreq;
    float leaky_slope = 0.4f;
    std::size_t cond_channels = 1;

    void validate() const;
    std::size_t factor() const;
    std::size_t time_kernel() const { return orientation == FilterOrientation::TimeFreq ? filter_a : filter_b; }
    std::size_t freq_kernel() const { return orientation == FilterOrientation::TimeFreq ? filter_b : filter_a; }

    bool operator==(const UpsamplerConfig&) const = default;
};

// Spectrogram -> waveform-rate conditioner: single-channel transposed 2-D convolutions over
// the [freq x time] image, each followed by a leaky ReLU, then a pointwise projection
// collapsing the frequency axis to cond_channels.
struct UpsamplerModel {
    struct Layer {
        nn::Var<float> weight;  // [1 x 1 x kF x kT]
        nn::Var<float> bias;    // [1]
        std::size_t stride;
    };

    UpsamplerConfig config;
    std::size_t bins = 0;
    std::vector<Layer> layers;
    nn::Conv1d<float> collapse;

    static UpsamplerModel init(const UpsamplerConfig& cfg, std::size_t bins, std::uint64_t seed);

    // Output time length before crop: factor() * T_spec.
    nn::Var<float> upsample_raw(const nn::Var<float>& spec) const;

    // [F x T_spec] magnitudes -> [cond_channels x target_len]. The raw upsampled sequence is
    // truncated or right-zero-padded; a shortfall beyond one hop is an error.
    nn::Var<float> forward(const nn::Var<float>& spec, std::size_t target_len) const;

    nn::ParamList<float> parameters();
};

// Merges the noisy waveform [1 x T] with the conditioner [C x T].
struct ConditionerModel {
    ConditioningMethod method = ConditioningMethod::Addition;
    nn::Conv1d<float> add_proj;    // C -> 1
    nn::Conv1d<float> film_scale;  // C -> 1, bias starts at 1
    nn::Conv1d<float> film_shift;  // C -> 1

    static ConditionerModel init(ConditioningMethod method, std::size_t cond_channels, std::uint64_t seed);

    // Channels of the merged signal fed to the U-Net.
    std::size_t output_channels(std::size_t cond_channels) const;

    nn::Var<float> forward(const nn::Var<float>& wave, const nn::Var<float>& cond) const;

    // Sets FiLM to scale 1, shift 0 regardless of the conditioner.
    void set_film_identity();

    nn::ParamList<float> parameters();
};

struct HybridConfig {
    specnet::SpecNetConfig specnet;
    UpsamplerConfig upsampler;
    unet::UNetConfig unet;
    ConditioningMethod method = ConditioningMethod::Addition;

    // Fixes unet.in_channels from the method and checks cross-module consistency.
    void resolve();
    void validate() const;

    bool operator==(const HybridConfig&) const = default;
};

// Two-stage denoiser: spectrogram denoiser -> upsampler -> conditioning -> waveform U-Net.
struct HybridModel {
    HybridConfig config;
    specnet::SpecNetModel spec;
    UpsamplerModel upsampler;
    ConditionerModel conditioner;
    unet::UNetModel unet;

    static HybridModel init(HybridConfig cfg, std::uint64_t seed);

    // Builds the waveform stage around an existing (trained) spectrogram denoiser.
    static HybridModel from_specnet(specnet::SpecNetModel spec, HybridConfig cfg, std::uint64_t seed);

    // Noisy-spectrogram features as the spectrogram denoiser consumes them; zero frames
    // when the input is shorter than one hop.
    dsp::MagnitudeSpectrogram noisy_spectrogram(std::span<const double> noisy) const;

    // Spectrogram denoiser prediction for a noisy waveform (no graph).
    nn::Tensor<float> predict_spectrogram(std::span<const double> noisy) const;

    // Waveform stage given the predicted spectrogram; graph recorded through the upsampler,
    // conditioner and U-Net.
    nn::Var<float> forward_waveform(const nn::Var<float>& noisy, const nn::Tensor<float>& spec_hat) const;
    nn::Var<float> forward_waveform(const nn::Var<float>& noisy, const nn::Var<float>& spec_hat) const;

    // Waveform U-Net on the noisy signal with the conditioner bypassed.
    nn::Var<float> forward_unconditioned(const nn::Var<float>& noisy) const;

    dsp::Waveform denoise(const dsp::Waveform& noisy) const;

    // Parameters of the waveform stage (upsampler, conditioner, U-Net).
    nn::ParamList<float> waveform_parameters();
    nn::ParamList<float> parameters();
};

}  // namespace hdn::conditioner

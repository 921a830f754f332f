#pragma once

#include "hdn/dsp.hpp"
#include "hdn/nn/layers.hpp"

#include <cstdint>

namespace hdn::specnet {

struct SpecNetConfig {
    std::size_t n_conv_layers = 5;
    std::size_t conv_hidden = 64;
    std::size_t kernel = 4;
    std::size_t stride = 1;
    std::size_t n_attn_blocks = 5;
    std::size_t attn_heads = 8;
    std::size_t attn_dim = 512;
    std::size_t ffn_dim = 2048;
    bool causal = true;
    dsp::StftParams stft{256, 1024, 1024};

    void validate() const;

    // STFT parameters of the network input: causal models read causally framed frames.
    dsp::StftParams input_stft() const;
    std::size_t bins() const { return stft.bins(); }

    bool operator==(const SpecNetConfig&) const = default;
};

// Spectrogram-domain denoiser: pointwise projection F -> H, a stack of causal conv layers
// (conv keeping channels, ReLU, conv doubling channels, GLU), projection H -> attn_dim,
// self-attention blocks, and a softplus magnitude head attn_dim -> F.
struct SpecNetModel {
    struct ConvLayer {
        nn::Conv1d<float> keep;
        nn::Conv1d<float> widen;
    };

    SpecNetConfig config;
    nn::Conv1d<float> input_proj;
    std::vector<ConvLayer> conv_layers;
    nn::Conv1d<float> to_attn;
    std::vector<nn::TransformerBlock<float>> blocks;
    nn::LayerNorm<float> final_norm;
    nn::Conv1d<float> output_proj;

    static SpecNetModel init(const SpecNetConfig& cfg, std::uint64_t seed);

    // y_noisy: [F x T_spec] raw magnitudes -> predicted clean magnitudes [F x T_spec].
    nn::Var<float> forward(const nn::Var<float>& y_noisy) const;

    // Inference without graph recording. Checks that the input was framed with input_stft().
    dsp::MagnitudeSpectrogram predict(const dsp::MagnitudeSpectrogram& y_noisy) const;

    nn::ParamList<float> parameters();
    std::size_t parameter_count();
};

}  // namespace hdn::specnet

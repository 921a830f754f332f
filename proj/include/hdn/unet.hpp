#pragma once

#include "hdn/nn/layers.hpp"

#include <cstdint>

namespace hdn::unet {

struct UNetConfig {
    std::size_t n_layers = 8;
    std::size_t hidden = 64;
    std::size_t stride = 2;
    std::size_t kernel = 4;
    std::size_t n_attn_blocks = 5;
    std::size_t attn_heads = 8;
    std::size_t attn_dim = 512;
    std::size_t ffn_dim = 2048;
    std::size_t channel_cap = 512;
    std::size_t in_channels = 1;
    bool causal = true;

    void validate() const;

    // S^n_layers; inputs are right-padded to a multiple of this.
    std::size_t total_stride() const;

    // Output channels of encoder layer i: hidden * 2^i capped at channel_cap.
    std::size_t encoder_channels(std::size_t layer) const;

    bool operator==(const UNetConfig&) const = default;
};

// Waveform U-Net: strided conv encoder, self-attention bottleneck, transposed-conv
// decoder with additive skip connections.
struct UNetModel {
    struct EncoderLayer {
        nn::Conv1d<float> down;    // K, stride S, then ReLU
        nn::Conv1d<float> expand;  // 1x1 doubling channels, then GLU
    };
    struct DecoderLayer {
        nn::Conv1d<float> expand;       // 1x1 doubling channels, then GLU
        nn::ConvTranspose1d<float> up;  // K, stride S; ReLU except on the output layer
    };

    UNetConfig config;
    std::vector<EncoderLayer> encoder;
    nn::Conv1d<float> to_attn;
    std::vector<nn::TransformerBlock<float>> blocks;
    nn::LayerNorm<float> final_norm;
    nn::Conv1d<float> from_attn;
    std::vector<DecoderLayer> decoder;  // decoder[i] mirrors encoder[i]

    static UNetModel init(const UNetConfig& cfg, std::uint64_t seed);

    // [C_in x T] -> [1 x T] for any T >= 1.
    nn::Var<float> forward(const nn::Var<float>& x) const;

    // Encoder activations, for shape inspection.
    std::vector<nn::Shape> encoder_shapes(std::size_t length) const;

    nn::ParamList<float> parameters();
};

}  // namespace hdn::unet

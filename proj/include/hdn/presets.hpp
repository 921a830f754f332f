#pragma once

#include "hdn/conditioner.hpp"

namespace hdn::presets {

// Desk-scale networks: same topology as the defaults (5 conv layers become 3, 8 U-Net
// levels, 256x upsampling, causal attention) with narrow widths so training runs on one CPU.
inline specnet::SpecNetConfig desk_specnet() {
    specnet::SpecNetConfig c;
    c.n_conv_layers = 3;
    c.conv_hidden = 32;
    c.n_attn_blocks = 2;
    c.attn_heads = 4;
    c.attn_dim = 64;
    c.ffn_dim = 128;
    c.stft = {256, 512, 512};
    return c;
}

inline unet::UNetConfig desk_unet() {
    unet::UNetConfig c;
    c.hidden = 8;
    c.channel_cap = 64;
    c.n_attn_blocks = 2;
    c.attn_heads = 4;
    c.attn_dim = 64;
    c.ffn_dim = 128;
    return c;
}

inline conditioner::HybridConfig desk_hybrid(
    conditioner::ConditioningMethod method = conditioner::ConditioningMethod::Addition) {
    conditioner::HybridConfig c;
    c.specnet = desk_specnet();
    c.unet = desk_unet();
    c.method = method;
    c.resolve();
    return c;
}

}  // namespace hdn::presets

#pragma once

#include "hdn/conditioner.hpp"

#include <memory>
#include <span>
#include <vector>

namespace hdn::streaming {

inline constexpr std::size_t kDefaultAttentionHistory = 1024;

struct StreamConfig {
    // Attention layers see at most this many most recent frames.
    std::size_t attention_history = kDefaultAttentionHistory;

    void validate() const;
};

// Key/value history of one attention block, stored frame-major.
struct KvCache {
    std::vector<float> keys;
    std::vector<float> values;
    std::size_t frames = 0;
};

// Left context of one convolution: the last few input columns, [C x n].
struct ConvCache {
    nn::Tensor<float> past;
};

struct StreamState {
    std::shared_ptr<const conditioner::HybridModel> model;
    StreamConfig config;

    std::vector<double> history;  // last win_length input samples, for the next STFT frame
    std::vector<double> pending;  // input not yet processed, always shorter than one block

    std::vector<ConvCache> spec_keep, spec_widen;
    std::vector<KvCache> spec_attn;
    std::vector<ConvCache> upsampler;
    std::vector<ConvCache> encoder, decoder;
    std::vector<KvCache> unet_attn;

    std::size_t consumed = 0;
    std::size_t emitted = 0;
    bool closed = false;

    std::size_t block_size() const;

    // Floats held by all caches; bounded by the receptive field plus the attention history.
    std::size_t cache_floats() const;
};

// Throws "streaming requires causal models" for a non-causal model.
StreamState stream_open(std::shared_ptr<const conditioner::HybridModel> model, StreamConfig config = {});

// Emits one block of output for each complete block of input, so output lags input by
// at most one block.
std::vector<double> stream_push(StreamState& st, std::span<const double> chunk);

// Processes the partial tail as if followed by silence and returns its denoised samples.
std::vector<double> stream_close(StreamState& st);

}  // namespace hdn::streaming

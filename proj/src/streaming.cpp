#include "hdn/streaming.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hdn::streaming {

namespace {

using nn::Tensor;
using nn::Var;

Tensor<float> hcat(const Tensor<float>& a, const Tensor<float>& b) {
    const std::size_t rows = a.dim(0), na = a.dim(1), nb = b.dim(1);
    Tensor<float> out({rows, na + nb});
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(a.row(r), na, out.row(r));
        std::copy_n(b.row(r), nb, out.row(r) + na);
    }
    return out;
}

Tensor<float> take_cols(const Tensor<float>& x, std::size_t start, std::size_t count) {
    const std::size_t rows = x.dim(0);
    Tensor<float> out({rows, count});
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.row(r) + start, count, out.row(r));
    return out;
}

Tensor<float> last_cols(const Tensor<float>& x, std::size_t count) { return take_cols(x, x.dim(1) - count, count); }

ConvCache zeros(std::size_t rows, std::size_t cols) { return {Tensor<float>({rows, cols})}; }

// Columns of left context a transposed convolution needs so that every output kept from the
// window has received all of its contributions.
std::size_t transposed_lookback(std::size_t kernel, std::size_t stride) { return (kernel + stride - 1) / stride - 1; }

// Causal convolution over [cached context | fresh columns]; no padding, so the output holds
// exactly the columns the offline left-padded convolution produces for the fresh part.
Tensor<float> conv_step(const nn::Conv1d<float>& conv, ConvCache& cache, const Tensor<float>& fresh) {
    Tensor<float> window = hcat(cache.past, fresh);
    Tensor<float> out = conv(nn::constant(window), 0, 0).value();
    cache.past = last_cols(window, cache.past.dim(1));
    return out;
}

Tensor<float> conv_transpose_step(const nn::ConvTranspose1d<float>& conv, ConvCache& cache,
                                  const Tensor<float>& fresh) {
    const std::size_t lb = cache.past.dim(1), n = fresh.dim(1), s = conv.stride;
    Tensor<float> window = hcat(cache.past, fresh);
    Tensor<float> out = conv(nn::constant(window), (lb + n) * s).value();
    cache.past = last_cols(window, lb);
    return take_cols(out, lb * s, n * s);
}

Tensor<float> upsample_step(const conditioner::UpsamplerModel::Layer& layer, float slope, ConvCache& cache,
                            const Tensor<float>& fresh) {
    const std::size_t bins = fresh.dim(0), lb = cache.past.dim(1), n = fresh.dim(1), s = layer.stride;
    Tensor<float> window = hcat(cache.past, fresh);
    cache.past = last_cols(window, lb);
    const Var<float> x = nn::reshape(nn::constant(std::move(window)), {1, bins, lb + n});
    const Var<float> y =
        nn::leaky_relu(nn::conv_transpose2d_time(x, layer.weight, layer.bias, s, (lb + n) * s), slope);
    return take_cols(nn::reshape(y, {bins, (lb + n) * s}).value(), lb * s, n * s);
}

void append_frames(std::vector<float>& store, const Tensor<float>& x) {
    const std::size_t d = x.dim(0), n = x.dim(1);
    const std::size_t base = store.size();
    store.resize(base + d * n);
    for (std::size_t c = 0; c < d; ++c) {
        const float* r = x.row(c);
        for (std::size_t t = 0; t < n; ++t) store[base + t * d + c] = r[t];
    }
}

// Multi-head causal attention of the fresh queries against the cached keys and values; query
// i sits at cache position frames - n + i and sees at most `history` frames ending there.
Tensor<float> cached_attention(const Tensor<float>& q, const KvCache& cache, std::size_t heads, std::size_t history) {
    const std::size_t d = q.dim(0), n = q.dim(1), dh = d / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    Tensor<float> out({d, n});
    std::vector<float> qv(dh), scores;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t pos = cache.frames - n + i;
        const std::size_t first = pos + 1 > history ? pos + 1 - history : 0;
        const std::size_t len = pos + 1 - first;
        scores.resize(len);
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t c = 0; c < dh; ++c) qv[c] = q.at(h * dh + c, i);
            float m = -std::numeric_limits<float>::infinity();
            for (std::size_t j = 0; j < len; ++j) {
                const float* k = cache.keys.data() + (first + j) * d + h * dh;
                float dot = 0;
                for (std::size_t c = 0; c < dh; ++c) dot += qv[c] * k[c];
                scores[j] = dot * scale;
                m = std::max(m, scores[j]);
            }
            float total = 0;
            for (auto& sc : scores) {
                sc = std::exp(sc - m);
                total += sc;
            }
            for (std::size_t c = 0; c < dh; ++c) {
                float acc = 0;
                for (std::size_t j = 0; j < len; ++j) acc += scores[j] * cache.values[(first + j) * d + h * dh + c];
                out.at(h * dh + c, i) = acc / total;
            }
        }
    }
    return out;
}

void trim(KvCache& cache, std::size_t d, std::size_t history) {
    // Dropping in bulk keeps the amortised cost per frame constant.
    if (cache.frames < 2 * history) return;
    const std::size_t drop = cache.frames - history;
    cache.keys.erase(cache.keys.begin(), cache.keys.begin() + static_cast<std::ptrdiff_t>(drop * d));
    cache.values.erase(cache.values.begin(), cache.values.begin() + static_cast<std::ptrdiff_t>(drop * d));
    cache.frames = history;
}

Tensor<float> attention_step(const nn::TransformerBlock<float>& block, KvCache& cache, const Tensor<float>& x,
                             std::size_t history) {
    const std::size_t d = x.dim(0);
    const Var<float> xv = nn::constant(x);
    const Var<float> h = block.norm_attn(xv);
    append_frames(cache.keys, block.wk(h).value());
    append_frames(cache.values, block.wv(h).value());
    cache.frames += x.dim(1);
    const Tensor<float> att = cached_attention(block.wq(h).value(), cache, block.heads, history);
    trim(cache, d, history);
    const Var<float> x1 = nn::add(xv, block.wo(nn::constant(att)));
    return nn::add(x1, block.ffn_out(nn::relu(block.ffn_in(block.norm_ffn(x1))))).value();
}

Tensor<float> specnet_step(StreamState& st, const Tensor<float>& frame) {
    const auto& net = st.model->spec;
    Tensor<float> x = net.input_proj(nn::log1p(nn::constant(frame))).value();
    for (std::size_t i = 0; i < net.conv_layers.size(); ++i) {
        const auto& layer = net.conv_layers[i];
        Tensor<float> a = nn::relu(nn::constant(conv_step(layer.keep, st.spec_keep[i], x))).value();
        x = nn::glu(nn::constant(conv_step(layer.widen, st.spec_widen[i], a))).value();
    }
    x = net.to_attn(nn::constant(std::move(x))).value();
    for (std::size_t i = 0; i < net.blocks.size(); ++i) {
        x = attention_step(net.blocks[i], st.spec_attn[i], x, st.config.attention_history);
    }
    return nn::softplus(net.output_proj(net.final_norm(nn::constant(std::move(x))))).value();
}

Tensor<float> upsampler_step(StreamState& st, const Tensor<float>& spec_frame) {
    const auto& up = st.model->upsampler;
    Tensor<float> x = nn::log1p(nn::constant(spec_frame)).value();
    for (std::size_t i = 0; i < up.layers.size(); ++i) {
        x = upsample_step(up.layers[i], up.config.leaky_slope, st.upsampler[i], x);
    }
    return up.collapse(nn::constant(std::move(x))).value();
}

Tensor<float> unet_step(StreamState& st, Tensor<float> x) {
    const auto& net = st.model->unet;
    std::vector<Tensor<float>> skips;
    for (std::size_t i = 0; i < net.encoder.size(); ++i) {
        const auto& layer = net.encoder[i];
        const Tensor<float> a = conv_step(layer.down, st.encoder[i], x);
        x = nn::glu(layer.expand(nn::relu(nn::constant(a)))).value();
        skips.push_back(x);
    }
    x = net.to_attn(nn::constant(std::move(x))).value();
    for (std::size_t i = 0; i < net.blocks.size(); ++i) {
        x = attention_step(net.blocks[i], st.unet_attn[i], x, st.config.attention_history);
    }
    x = net.from_attn(net.final_norm(nn::constant(std::move(x)))).value();
    for (std::size_t i = net.decoder.size(); i-- > 0;) {
        const auto& layer = net.decoder[i];
        const Var<float> merged = nn::add(nn::constant(std::move(x)), nn::constant(skips[i]));
        x = conv_transpose_step(layer.up, st.decoder[i], nn::glu(layer.expand(merged)).value());
        if (i > 0) x = nn::relu(nn::constant(std::move(x))).value();
    }
    return x;
}

Tensor<float> wave_row(std::span<const double> samples) {
    Tensor<float> w({1, samples.size()});
    for (std::size_t i = 0; i < samples.size(); ++i) w[i] = static_cast<float>(samples[i]);
    return w;
}

void append_output(std::vector<double>& out, const Tensor<float>& y, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) out.push_back(y[i]);
}

// One full block: a new spectrogram frame, its upsampled conditioner and the U-Net output.
void process_block(StreamState& st, std::span<const double> block, std::vector<double>& out) {
    const auto& m = *st.model;
    const std::size_t n = block.size();
    std::shift_left(st.history.begin(), st.history.end(), static_cast<std::ptrdiff_t>(n));
    std::copy(block.begin(), block.end(), st.history.end() - static_cast<std::ptrdiff_t>(n));

    dsp::StftParams one = m.config.specnet.input_stft();
    one.hop = one.win_length;
    const Tensor<float> frame = dsp::spectrogram(st.history, one).values.cast<float>();

    const Tensor<float> cond = upsampler_step(st, specnet_step(st, frame));
    const Tensor<float> merged = m.conditioner.forward(nn::constant(wave_row(block)), nn::constant(cond)).value();
    append_output(out, unet_step(st, merged), n);
}

// The tail has no spectrogram frame, so its conditioner is zero, and the U-Net sees
// silence after it.
void process_tail(StreamState& st, std::span<const double> tail, std::vector<double>& out) {
    const auto& m = *st.model;
    const std::size_t r = tail.size();
    const Tensor<float> cond({m.config.upsampler.cond_channels, r});
    const Var<float> merged = m.conditioner.forward(nn::constant(wave_row(tail)), nn::constant(cond));
    append_output(out, unet_step(st, nn::fit_cols(merged, st.block_size()).value()), r);
}

std::size_t kv_floats(const std::vector<KvCache>& caches) {
    std::size_t n = 0;
    for (const auto& c : caches) n += c.keys.size() + c.values.size();
    return n;
}

std::size_t conv_floats(const std::vector<ConvCache>& caches) {
    std::size_t n = 0;
    for (const auto& c : caches) n += c.past.size();
    return n;
}

}  // namespace

void StreamConfig::validate() const {
    if (attention_history < 1) throw std::invalid_argument("stream: attention_history must be >= 1");
}

std::size_t StreamState::block_size() const { return model->config.specnet.stft.hop; }

std::size_t StreamState::cache_floats() const {
    return history.size() + pending.size() + conv_floats(spec_keep) + conv_floats(spec_widen) +
           conv_floats(upsampler) + conv_floats(encoder) + conv_floats(decoder) + kv_floats(spec_attn) +
           kv_floats(unet_attn);
}

StreamState stream_open(std::shared_ptr<const conditioner::HybridModel> model, StreamConfig config) {
    if (!model) throw std::invalid_argument("stream: no model");
    config.validate();
    const auto& cfg = model->config;
    if (!cfg.specnet.causal || !cfg.unet.causal) throw std::invalid_argument("streaming requires causal models");
    const std::size_t hop = cfg.specnet.stft.hop;
    if (hop % cfg.unet.total_stride() != 0) {
        throw std::invalid_argument("stream: U-Net stride " + std::to_string(cfg.unet.total_stride()) +
                                    " must divide the hop " + std::to_string(hop));
    }

    StreamState st;
    st.model = std::move(model);
    st.config = config;
    const auto& m = *st.model;
    st.history.assign(cfg.specnet.stft.win_length, 0.0);

    const std::size_t ctx = cfg.specnet.kernel - 1;
    for (const auto& layer : m.spec.conv_layers) {
        st.spec_keep.push_back(zeros(layer.keep.weight.dim(1), ctx));
        st.spec_widen.push_back(zeros(layer.widen.weight.dim(1), ctx));
    }
    st.spec_attn.resize(m.spec.blocks.size());

    for (const auto& layer : m.upsampler.layers) {
        st.upsampler.push_back(zeros(m.upsampler.bins, transposed_lookback(layer.weight.dim(3), layer.stride)));
    }

    for (const auto& layer : m.unet.encoder) {
        st.encoder.push_back(zeros(layer.down.weight.dim(1), layer.down.weight.dim(2) - 1));
    }
    for (const auto& layer : m.unet.decoder) {
        st.decoder.push_back(zeros(layer.up.weight.dim(0), transposed_lookback(layer.up.weight.dim(2), layer.up.stride)));
    }
    st.unet_attn.resize(m.unet.blocks.size());
    return st;
}

std::vector<double> stream_push(StreamState& st, std::span<const double> chunk) {
    if (st.closed) throw std::logic_error("stream: push after close");
    nn::NoGradGuard no_grad;
    const std::size_t block = st.block_size();
    std::vector<double> out;
    st.consumed += chunk.size();
    std::size_t used = 0;
    if (!st.pending.empty()) {
        const std::size_t need = std::min(block - st.pending.size(), chunk.size());
        st.pending.insert(st.pending.end(), chunk.begin(), chunk.begin() + static_cast<std::ptrdiff_t>(need));
        used = need;
        if (st.pending.size() == block) {
            process_block(st, st.pending, out);
            st.pending.clear();
        }
    }
    while (chunk.size() - used >= block) {
        process_block(st, chunk.subspan(used, block), out);
        used += block;
    }
    st.pending.insert(st.pending.end(), chunk.begin() + static_cast<std::ptrdiff_t>(used), chunk.end());
    st.emitted += out.size();
    return out;
}

std::vector<double> stream_close(StreamState& st) {
    if (st.closed) throw std::logic_error("stream: already closed");
    st.closed = true;
    std::vector<double> out;
    if (!st.pending.empty()) {
        nn::NoGradGuard no_grad;
        process_tail(st, st.pending, out);
        st.pending.clear();
    }
    st.emitted += out.size();
    return out;
}

}  // namespace hdn::streaming

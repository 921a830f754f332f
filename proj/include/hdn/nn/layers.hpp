#pragma once

#include "hdn/nn/ops.hpp"

#include <random>
#include <string>

namespace hdn::nn {

template <class T>
struct NamedParam {
    std::string name;
    Var<T>* var;
};

template <class T>
using ParamList = std::vector<NamedParam<T>>;

enum class Init { FanInUniform, Xavier, Zeros, Ones };

template <class T>
Tensor<T> init_tensor(Shape shape, Init init, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    Tensor<T> t(std::move(shape));
    double bound = 0.0;
    switch (init) {
        case Init::Zeros: return t;
        case Init::Ones: t.fill(T(1)); return t;
        case Init::FanInUniform: bound = std::sqrt(3.0 / static_cast<double>(fan_in)); break;
        case Init::Xavier: bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)); break;
    }
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
    return t;
}

// 1-D convolution with weight [Cout x Cin x K] and bias [Cout].
template <class T>
struct Conv1d {
    Var<T> weight, bias;
    std::size_t stride = 1;

    Conv1d() = default;
    Conv1d(std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t stride_, Init init,
           std::mt19937_64& rng)
        : stride(stride_) {
        weight = parameter(init_tensor<T>({cout, cin, kernel}, init, cin * kernel, cout * kernel, rng));
        bias = parameter(Tensor<T>({cout}));
    }

    std::size_t in_channels() const { return weight.dim(1); }
    std::size_t out_channels() const { return weight.dim(0); }
    std::size_t kernel() const { return weight.dim(2); }

    Var<T> operator()(const Var<T>& x, std::size_t pad_l = 0, std::size_t pad_r = 0) const {
        return conv1d(x, weight, bias, stride, pad_l, pad_r);
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".weight", &weight});
        out.push_back({prefix + ".bias", &bias});
    }
};

// Transposed 1-D convolution with weight [Cin x Cout x K].
template <class T>
struct ConvTranspose1d {
    Var<T> weight, bias;
    std::size_t stride = 1;

    ConvTranspose1d() = default;
    ConvTranspose1d(std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t stride_, Init init,
                    std::mt19937_64& rng)
        : stride(stride_) {
        // Each output sample receives kernel/stride taps per input channel.
        const std::size_t fan_in = std::max<std::size_t>(1, cin * kernel / stride_);
        weight = parameter(init_tensor<T>({cin, cout, kernel}, init, fan_in, cout * kernel, rng));
        bias = parameter(Tensor<T>({cout}));
    }

    Var<T> operator()(const Var<T>& x, std::size_t out_len) const {
        return conv_transpose1d(x, weight, bias, stride, out_len);
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".weight", &weight});
        out.push_back({prefix + ".bias", &bias});
    }
};

template <class T>
struct LayerNorm {
    Var<T> gamma, beta;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t dim) {
        gamma = parameter(Tensor<T>({dim}, T(1)));
        beta = parameter(Tensor<T>({dim}));
    }

    Var<T> operator()(const Var<T>& x) const { return layer_norm(x, gamma, beta); }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".gamma", &gamma});
        out.push_back({prefix + ".beta", &beta});
    }
};

struct TransformerConfig {
    std::size_t dim = 512;
    std::size_t heads = 8;
    std::size_t ffn_dim = 2048;
};

// Pre-norm transformer block on [D x T]: self-attention then position-wise feed-forward,
// each wrapped in a residual connection. No dropout, no positional encoding.
template <class T>
struct TransformerBlock {
    LayerNorm<T> norm_attn, norm_ffn;
    Conv1d<T> wq, wk, wv, wo;
    Conv1d<T> ffn_in, ffn_out;
    std::size_t heads = 1;

    TransformerBlock() = default;
    TransformerBlock(const TransformerConfig& cfg, std::mt19937_64& rng)
        : norm_attn(cfg.dim),
          norm_ffn(cfg.dim),
          wq(cfg.dim, cfg.dim, 1, 1, Init::Xavier, rng),
          wk(cfg.dim, cfg.dim, 1, 1, Init::Xavier, rng),
          wv(cfg.dim, cfg.dim, 1, 1, Init::Xavier, rng),
          wo(cfg.dim, cfg.dim, 1, 1, Init::Xavier, rng),
          ffn_in(cfg.dim, cfg.ffn_dim, 1, 1, Init::Xavier, rng),
          ffn_out(cfg.ffn_dim, cfg.dim, 1, 1, Init::Xavier, rng),
          heads(cfg.heads) {}

    Var<T> operator()(const Var<T>& x, bool causal) const {
        const Var<T> h = norm_attn(x);
        const Var<T> a = wo(attention(wq(h), wk(h), wv(h), heads, causal));
        const Var<T> x1 = add(x, a);
        const Var<T> f = ffn_out(relu(ffn_in(norm_ffn(x1))));
        return add(x1, f);
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        norm_attn.collect(prefix + ".norm_attn", out);
        wq.collect(prefix + ".wq", out);
        wk.collect(prefix + ".wk", out);
        wv.collect(prefix + ".wv", out);
        wo.collect(prefix + ".wo", out);
        norm_ffn.collect(prefix + ".norm_ffn", out);
        ffn_in.collect(prefix + ".ffn_in", out);
        ffn_out.collect(prefix + ".ffn_out", out);
    }
};

template <class T>
std::size_t parameter_count(const ParamList<T>& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.var->value().size();
    return n;
}

}  // namespace hdn::nn

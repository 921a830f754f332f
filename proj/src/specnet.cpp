#include "hdn/specnet.hpp"

namespace hdn::specnet {

void SpecNetConfig::validate() const {
    stft.validate();
    if (kernel < 1) throw std::invalid_argument("specnet: kernel must be >= 1");
    if (stride != 1) throw std::invalid_argument("specnet: conv stride must be 1");
    if (conv_hidden < 1 || attn_dim < 1 || ffn_dim < 1) throw std::invalid_argument("specnet: empty layer width");
    if (attn_heads < 1 || attn_dim % attn_heads != 0)
        throw std::invalid_argument("specnet: attn_dim must be divisible by attn_heads");
}

dsp::StftParams SpecNetConfig::input_stft() const {
    dsp::StftParams p = stft;
    p.framing = causal ? dsp::Framing::Causal : dsp::Framing::Centered;
    return p;
}

SpecNetModel SpecNetModel::init(const SpecNetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    using nn::Init;
    SpecNetModel m;
    m.config = cfg;
    const std::size_t f = cfg.bins(), h = cfg.conv_hidden, k = cfg.kernel;
    m.input_proj = nn::Conv1d<float>(f, h, 1, 1, Init::Xavier, rng);
    for (std::size_t i = 0; i < cfg.n_conv_layers; ++i) {
        m.conv_layers.push_back({nn::Conv1d<float>(h, h, k, 1, Init::FanInUniform, rng),
                                 nn::Conv1d<float>(h, 2 * h, k, 1, Init::FanInUniform, rng)});
    }
    m.to_attn = nn::Conv1d<float>(h, cfg.attn_dim, 1, 1, Init::Xavier, rng);
    for (std::size_t i = 0; i < cfg.n_attn_blocks; ++i) {
        m.blocks.emplace_back(nn::TransformerConfig{cfg.attn_dim, cfg.attn_heads, cfg.ffn_dim}, rng);
    }
    m.final_norm = nn::LayerNorm<float>(cfg.attn_dim);
    m.output_proj = nn::Conv1d<float>(cfg.attn_dim, f, 1, 1, Init::Xavier, rng);
    return m;
}

nn::Var<float> SpecNetModel::forward(const nn::Var<float>& y_noisy) const {
    if (y_noisy.shape().size() != 2 || y_noisy.dim(0) != config.bins()) {
        throw std::invalid_argument("specnet: expected " + std::to_string(config.bins()) + " frequency bins, got " +
                                    nn::shape_str(y_noisy.shape()));
    }
    const std::size_t pad = config.kernel - 1;
    nn::Var<float> x = input_proj(nn::log1p(y_noisy));
    for (const auto& layer : conv_layers) {
        x = nn::glu(layer.widen(nn::relu(layer.keep(x, pad)), pad));
    }
    x = to_attn(x);
    for (const auto& block : blocks) x = block(x, config.causal);
    return nn::softplus(output_proj(final_norm(x)));
}

dsp::MagnitudeSpectrogram SpecNetModel::predict(const dsp::MagnitudeSpectrogram& y_noisy) const {
    const dsp::StftParams expected = config.input_stft();
    if (!(y_noisy.params == expected)) {
        throw std::invalid_argument("specnet: input framed with " + dsp::to_string(y_noisy.params) + ", model expects " +
                                    dsp::to_string(expected));
    }
    nn::NoGradGuard no_grad;
    const auto out = forward(nn::constant(y_noisy.values.cast<float>()));
    return {out.value().cast<double>(), y_noisy.params};
}

nn::ParamList<float> SpecNetModel::parameters() {
    nn::ParamList<float> out;
    input_proj.collect("specnet.input_proj", out);
    for (std::size_t i = 0; i < conv_layers.size(); ++i) {
        conv_layers[i].keep.collect("specnet.conv" + std::to_string(i) + ".keep", out);
        conv_layers[i].widen.collect("specnet.conv" + std::to_string(i) + ".widen", out);
    }
    to_attn.collect("specnet.to_attn", out);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect("specnet.attn" + std::to_string(i), out);
    final_norm.collect("specnet.final_norm", out);
    output_proj.collect("specnet.output_proj", out);
    return out;
}

std::size_t SpecNetModel::parameter_count() { return nn::parameter_count(parameters()); }

}  // namespace hdn::specnet

#include "hdn/unet.hpp"

namespace hdn::unet {

void UNetConfig::validate() const {
    if (stride < 1) throw std::invalid_argument("unet: stride must be >= 1");
    if (kernel < stride) throw std::invalid_argument("unet: kernel must cover the stride");
    if (n_layers < 1) throw std::invalid_argument("unet: need at least one layer");
    if (hidden < 1 || channel_cap < hidden) throw std::invalid_argument("unet: channel_cap must be >= hidden");
    if (in_channels < 1) throw std::invalid_argument("unet: in_channels must be >= 1");
    if (attn_heads < 1 || attn_dim % attn_heads != 0)
        throw std::invalid_argument("unet: attn_dim must be divisible by attn_heads");
}

std::size_t UNetConfig::total_stride() const {
    std::size_t s = 1;
    for (std::size_t i = 0; i < n_layers; ++i) s *= stride;
    return s;
}

std::size_t UNetConfig::encoder_channels(std::size_t layer) const {
    std::size_t c = hidden;
    for (std::size_t i = 0; i < layer && c < channel_cap; ++i) c *= 2;
    return std::min(c, channel_cap);
}

UNetModel UNetModel::init(const UNetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    using nn::Init;
    UNetModel m;
    m.config = cfg;
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
        const std::size_t cin = i == 0 ? cfg.in_channels : cfg.encoder_channels(i - 1);
        const std::size_t c = cfg.encoder_channels(i);
        m.encoder.push_back({nn::Conv1d<float>(cin, c, cfg.kernel, cfg.stride, Init::FanInUniform, rng),
                             nn::Conv1d<float>(c, 2 * c, 1, 1, Init::FanInUniform, rng)});
    }
    const std::size_t bottleneck = cfg.encoder_channels(cfg.n_layers - 1);
    m.to_attn = nn::Conv1d<float>(bottleneck, cfg.attn_dim, 1, 1, Init::Xavier, rng);
    for (std::size_t i = 0; i < cfg.n_attn_blocks; ++i) {
        m.blocks.emplace_back(nn::TransformerConfig{cfg.attn_dim, cfg.attn_heads, cfg.ffn_dim}, rng);
    }
    m.final_norm = nn::LayerNorm<float>(cfg.attn_dim);
    m.from_attn = nn::Conv1d<float>(cfg.attn_dim, bottleneck, 1, 1, Init::Xavier, rng);
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
        const std::size_t c = cfg.encoder_channels(i);
        const std::size_t cout = i == 0 ? 1 : cfg.encoder_channels(i - 1);
        m.decoder.push_back({nn::Conv1d<float>(c, 2 * c, 1, 1, Init::FanInUniform, rng),
                             nn::ConvTranspose1d<float>(c, cout, cfg.kernel, cfg.stride, Init::FanInUniform, rng)});
    }
    return m;
}

nn::Var<float> UNetModel::forward(const nn::Var<float>& input) const {
    if (input.shape().size() != 2 || input.dim(0) != config.in_channels) {
        throw std::invalid_argument("unet: expected [" + std::to_string(config.in_channels) + " x T] input, got " +
                                    nn::shape_str(input.shape()));
    }
    const std::size_t length = input.dim(1);
    const std::size_t total = config.total_stride();
    const std::size_t padded = (length + total - 1) / total * total;
    const std::size_t pad = config.kernel - 1;

    nn::Var<float> x = nn::fit_cols(input, padded);
    std::vector<nn::Var<float>> skips;
    for (const auto& layer : encoder) {
        x = nn::glu(layer.expand(nn::relu(layer.down(x, pad))));
        skips.push_back(x);
    }
    x = to_attn(x);
    for (const auto& block : blocks) x = block(x, config.causal);
    x = from_attn(final_norm(x));
    for (std::size_t i = decoder.size(); i-- > 0;) {
        x = nn::add(x, skips[i]);
        x = nn::glu(decoder[i].expand(x));
        x = decoder[i].up(x, x.dim(1) * config.stride);
        if (i > 0) x = nn::relu(x);
    }
    return nn::fit_cols(x, length);
}

std::vector<nn::Shape> UNetModel::encoder_shapes(std::size_t length) const {
    nn::NoGradGuard no_grad;
    const std::size_t total = config.total_stride();
    const std::size_t padded = (length + total - 1) / total * total;
    nn::Var<float> x = nn::constant(nn::Tensor<float>({config.in_channels, padded}));
    std::vector<nn::Shape> shapes;
    for (const auto& layer : encoder) {
        x = nn::glu(layer.expand(nn::relu(layer.down(x, config.kernel - 1))));
        shapes.push_back(x.shape());
    }
    return shapes;
}

nn::ParamList<float> UNetModel::parameters() {
    nn::ParamList<float> out;
    for (std::size_t i = 0; i < encoder.size(); ++i) {
        encoder[i].down.collect("unet.enc" + std::to_string(i) + ".down", out);
        encoder[i].expand.collect("unet.enc" + std::to_string(i) + ".expand", out);
    }
    to_attn.collect("unet.to_attn", out);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect("unet.attn" + std::to_string(i), out);
    final_norm.collect("unet.final_norm", out);
    from_attn.collect("unet.from_attn", out);
    for (std::size_t i = 0; i < decoder.size(); ++i) {
        decoder[i].expand.collect("unet.dec" + std::to_string(i) + ".expand", out);
        decoder[i].up.collect("unet.dec" + std::to_string(i) + ".up", out);
    }
    return out;
}

}  // namespace hdn::unet

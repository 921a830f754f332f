#include "hdn/conditioner.hpp"

namespace hdn::conditioner {

std::string to_string(ConditioningMethod m) {
    switch (m) {
        case ConditioningMethod::Addition: return "addition";
        case ConditioningMethod::Concatenation: return "concatenation";
        case ConditioningMethod::Film: return "film";
    }
    return "unknown";
}

ConditioningMethod method_from_string(const std::string& s) {
    if (s == "addition") return ConditioningMethod::Addition;
    if (s == "concatenation") return ConditioningMethod::Concatenation;
    if (s == "film") return ConditioningMethod::Film;
    throw std::invalid_argument("unknown conditioning method '" + s + "' (addition|concatenation|film)");
}

void UpsamplerConfig::validate() const {
    if (time_strides.empty()) throw std::invalid_argument("upsampler: need at least one layer");
    for (auto s : time_strides)
        if (s < 1) throw std::invalid_argument("upsampler: strides must be >= 1");
    if (filter_a < 1 || filter_b < 1) throw std::invalid_argument("upsampler: empty filter");
    if (cond_channels < 1) throw std::invalid_argument("upsampler: cond_channels must be >= 1");
}

std::size_t UpsamplerConfig::factor() const {
    std::size_t f = 1;
    for (auto s : time_strides) f *= s;
    return f;
}

UpsamplerModel UpsamplerModel::init(const UpsamplerConfig& cfg, std::size_t bins, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    UpsamplerModel m;
    m.config = cfg;
    m.bins = bins;
    const std::size_t kf = cfg.freq_kernel(), kt = cfg.time_kernel();
    for (auto stride : cfg.time_strides) {
        const std::size_t taps = std::max<std::size_t>(1, kf * kt / stride);
        m.layers.push_back({nn::parameter(nn::init_tensor<float>({1, 1, kf, kt}, nn::Init::FanInUniform, taps, taps, rng)),
                            nn::parameter(nn::Tensor<float>({1})), stride});
    }
    m.collapse = nn::Conv1d<float>(bins, cfg.cond_channels, 1, 1, nn::Init::Xavier, rng);
    return m;
}

nn::Var<float> UpsamplerModel::upsample_raw(const nn::Var<float>& spec) const {
    if (spec.shape().size() != 2 || spec.dim(0) != bins) {
        throw std::invalid_argument("upsampler: expected " + std::to_string(bins) + " bins, got " +
                                    nn::shape_str(spec.shape()));
    }
    const std::size_t frames = spec.dim(1);
    nn::Var<float> x = nn::reshape(nn::log1p(spec), {1, bins, frames});
    for (const auto& layer : layers) {
        const std::size_t len = x.dim(2) * layer.stride;
        x = nn::leaky_relu(nn::conv_transpose2d_time(x, layer.weight, layer.bias, layer.stride, len),
                           config.leaky_slope);
    }
    return nn::reshape(x, {bins, x.dim(2)});
}

nn::Var<float> UpsamplerModel::forward(const nn::Var<float>& spec, std::size_t target_len) const {
    const std::size_t hop = config.factor();
    const std::size_t raw_len = spec.dim(1) * hop;
    if (raw_len + hop < target_len || raw_len > target_len + hop) {
        throw std::invalid_argument("upsampler: " + std::to_string(spec.dim(1)) + " frames cannot cover " +
                                    std::to_string(target_len) + " samples within one hop");
    }
    return nn::fit_cols(collapse(upsample_raw(spec)), target_len);
}

nn::ParamList<float> UpsamplerModel::parameters() {
    nn::ParamList<float> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        out.push_back({"upsampler.layer" + std::to_string(i) + ".weight", &layers[i].weight});
        out.push_back({"upsampler.layer" + std::to_string(i) + ".bias", &layers[i].bias});
    }
    collapse.collect("upsampler.collapse", out);
    return out;
}

ConditionerModel ConditionerModel::init(ConditioningMethod method, std::size_t cond_channels, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ConditionerModel m;
    m.method = method;
    m.add_proj = nn::Conv1d<float>(cond_channels, 1, 1, 1, nn::Init::Xavier, rng);
    m.film_scale = nn::Conv1d<float>(cond_channels, 1, 1, 1, nn::Init::Xavier, rng);
    m.film_scale.bias.mutable_value().fill(1.0f);
    m.film_shift = nn::Conv1d<float>(cond_channels, 1, 1, 1, nn::Init::Xavier, rng);
    return m;
}

std::size_t ConditionerModel::output_channels(std::size_t cond_channels) const {
    return method == ConditioningMethod::Concatenation ? 1 + cond_channels : 1;
}

nn::Var<float> ConditionerModel::forward(const nn::Var<float>& wave, const nn::Var<float>& cond) const {
    if (wave.dim(0) != 1 || wave.dim(1) != cond.dim(1)) {
        throw std::invalid_argument("condition: waveform " + nn::shape_str(wave.shape()) + " and conditioner " +
                                    nn::shape_str(cond.shape()) + " differ in length");
    }
    switch (method) {
        case ConditioningMethod::Addition: return nn::add(wave, add_proj(cond));
        case ConditioningMethod::Concatenation: return nn::concat_rows(wave, cond);
        case ConditioningMethod::Film: return nn::add(nn::mul(film_scale(cond), wave), film_shift(cond));
    }
    throw std::logic_error("unreachable");
}

void ConditionerModel::set_film_identity() {
    film_scale.weight.mutable_value().fill(0.0f);
    film_scale.bias.mutable_value().fill(1.0f);
    film_shift.weight.mutable_value().fill(0.0f);
    film_shift.bias.mutable_value().fill(0.0f);
}

nn::ParamList<float> ConditionerModel::parameters() {
    nn::ParamList<float> out;
    switch (method) {
        case ConditioningMethod::Addition: add_proj.collect("conditioner.add_proj", out); break;
        case ConditioningMethod::Concatenation: break;
        case ConditioningMethod::Film:
            film_scale.collect("conditioner.film_scale", out);
            film_shift.collect("conditioner.film_shift", out);
            break;
    }
    return out;
}

void HybridConfig::resolve() {
    unet.in_channels = method == ConditioningMethod::Concatenation ? 1 + upsampler.cond_channels : 1;
}

void HybridConfig::validate() const {
    specnet.validate();
    upsampler.validate();
    unet.validate();
    if (upsampler.factor() != specnet.stft.hop) {
        throw std::invalid_argument("hybrid: upsampling factor " + std::to_string(upsampler.factor()) +
                                    " must equal the spectrogram hop " + std::to_string(specnet.stft.hop));
    }
    const std::size_t expect = method == ConditioningMethod::Concatenation ? 1 + upsampler.cond_channels : 1;
    if (unet.in_channels != expect) throw std::invalid_argument("hybrid: unet.in_channels inconsistent with method");
    if (specnet.causal != unet.causal) throw std::invalid_argument("hybrid: submodules disagree on causality");
}

HybridModel HybridModel::init(HybridConfig cfg, std::uint64_t seed) {
    cfg.resolve();
    cfg.validate();
    return from_specnet(specnet::SpecNetModel::init(cfg.specnet, seed), cfg, seed);
}

HybridModel HybridModel::from_specnet(specnet::SpecNetModel spec, HybridConfig cfg, std::uint64_t seed) {
    cfg.specnet = spec.config;
    cfg.resolve();
    cfg.validate();
    HybridModel m;
    m.config = cfg;
    m.spec = std::move(spec);
    m.upsampler = UpsamplerModel::init(cfg.upsampler, cfg.specnet.bins(), seed + 1);
    m.conditioner = ConditionerModel::init(cfg.method, cfg.upsampler.cond_channels, seed + 2);
    m.unet = unet::UNetModel::init(cfg.unet, seed + 3);
    return m;
}

dsp::MagnitudeSpectrogram HybridModel::noisy_spectrogram(std::span<const double> noisy) const {
    const dsp::StftParams p = config.specnet.input_stft();
    return dsp::spectrogram(noisy, p);
}

nn::Tensor<float> HybridModel::predict_spectrogram(std::span<const double> noisy) const {
    const auto y = noisy_spectrogram(noisy);
    if (y.frames() == 0) return nn::Tensor<float>({y.bins(), 0});
    nn::NoGradGuard no_grad;
    return spec.forward(nn::constant(y.values.cast<float>())).value();
}

nn::Var<float> HybridModel::forward_waveform(const nn::Var<float>& noisy, const nn::Tensor<float>& spec_hat) const {
    return forward_waveform(noisy, nn::constant(spec_hat));
}

nn::Var<float> HybridModel::forward_waveform(const nn::Var<float>& noisy, const nn::Var<float>& spec_hat) const {
    const nn::Var<float> cond = upsampler.forward(spec_hat, noisy.dim(1));
    return unet.forward(conditioner.forward(noisy, cond));
}

nn::Var<float> HybridModel::forward_unconditioned(const nn::Var<float>& noisy) const { return unet.forward(noisy); }

dsp::Waveform HybridModel::denoise(const dsp::Waveform& noisy) const {
    nn::NoGradGuard no_grad;
    const nn::Tensor<float> spec_hat = predict_spectrogram(noisy.samples);
    nn::Tensor<float> wave({1, noisy.size()});
    for (std::size_t i = 0; i < noisy.size(); ++i) wave[i] = static_cast<float>(noisy.samples[i]);
    const auto out = forward_waveform(nn::constant(std::move(wave)), spec_hat);
    dsp::Waveform result{std::vector<double>(noisy.size()), noisy.sample_rate};
    for (std::size_t i = 0; i < noisy.size(); ++i) result.samples[i] = out.value()[i];
    return result;
}

nn::ParamList<float> HybridModel::waveform_parameters() {
    nn::ParamList<float> out = upsampler.parameters();
    for (auto& p : conditioner.parameters()) out.push_back(p);
    for (auto& p : unet.parameters()) out.push_back(p);
    return out;
}

nn::ParamList<float> HybridModel::parameters() {
    nn::ParamList<float> out = spec.parameters();
    for (auto& p : waveform_parameters()) out.push_back(p);
    return out;
}

}  // namespace hdn::conditioner

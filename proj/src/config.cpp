#include "hdn/config.hpp"

#include <cstdio>

namespace hdn::config {

Fields::Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
}

const json* Fields::section(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return nullptr;
    return &*it;
}

void Fields::finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
        if (!seen_.contains(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
}

std::string to_string(dsp::Window w) { return w == dsp::Window::Hann ? "hann" : "rectangular"; }
std::string to_string(dsp::Framing f) { return f == dsp::Framing::Centered ? "centered" : "causal"; }
std::string to_string(conditioner::FilterOrientation o) {
    return o == conditioner::FilterOrientation::TimeFreq ? "time_freq" : "freq_time";
}
std::string to_string(losses::Band b) { return b == losses::Band::Full ? "full" : "high"; }
std::string to_string(losses::LogNorm n) { return n == losses::LogNorm::Waveform ? "waveform" : "frames"; }

namespace {

template <class E>
E pick(const std::string& s, std::initializer_list<std::pair<const char*, E>> options, const char* what) {
    std::string names;
    for (const auto& [name, value] : options) {
        if (s == name) return value;
        names += names.empty() ? name : std::string("|") + name;
    }
    throw ConfigError(std::string("unknown ") + what + " '" + s + "' (" + names + ")");
}

template <class E, class Parse>
void get_enum(Fields& f, const std::string& key, E& out, Parse parse) {
    std::string s;
    bool present = false;
    if (const json* v = f.section(key)) {
        if (!v->is_string()) throw ConfigError(f.where() + "." + key + ": expected a string");
        s = v->get<std::string>();
        present = true;
    }
    if (present) out = parse(s);
}

}  // namespace

dsp::Window window_from_string(const std::string& s) {
    return pick<dsp::Window>(s, {{"hann", dsp::Window::Hann}, {"rectangular", dsp::Window::Rectangular}}, "window");
}
dsp::Framing framing_from_string(const std::string& s) {
    return pick<dsp::Framing>(s, {{"centered", dsp::Framing::Centered}, {"causal", dsp::Framing::Causal}}, "framing");
}
conditioner::FilterOrientation orientation_from_string(const std::string& s) {
    using O = conditioner::FilterOrientation;
    return pick<O>(s, {{"time_freq", O::TimeFreq}, {"freq_time", O::FreqTime}}, "filter orientation");
}
losses::Band band_from_string(const std::string& s) {
    return pick<losses::Band>(s, {{"full", losses::Band::Full}, {"high", losses::Band::High}}, "band");
}
losses::LogNorm log_norm_from_string(const std::string& s) {
    return pick<losses::LogNorm>(s, {{"waveform", losses::LogNorm::Waveform}, {"frames", losses::LogNorm::Frames}},
                                 "log norm");
}

json encode(const dsp::StftParams& p) {
    return {{"hop", p.hop}, {"win_length", p.win_length}, {"n_fft", p.n_fft}, {"window", to_string(p.window)},
            {"framing", to_string(p.framing)}};
}

void decode(const json& j, dsp::StftParams& p, const std::string& where) {
    Fields f(j, where);
    f.get("hop", p.hop).get("win_length", p.win_length).get("n_fft", p.n_fft);
    get_enum(f, "window", p.window, window_from_string);
    get_enum(f, "framing", p.framing, framing_from_string);
    f.finish();
}

json encode(const specnet::SpecNetConfig& c) {
    return {{"n_conv_layers", c.n_conv_layers}, {"conv_hidden", c.conv_hidden}, {"kernel", c.kernel},
            {"stride", c.stride}, {"n_attn_blocks", c.n_attn_blocks}, {"attn_heads", c.attn_heads},
            {"attn_dim", c.attn_dim}, {"ffn_dim", c.ffn_dim}, {"causal", c.causal}, {"stft", encode(c.stft)}};
}

void decode(const json& j, specnet::SpecNetConfig& c, const std::string& where) {
    Fields f(j, where);
    f.get("n_conv_layers", c.n_conv_layers).get("conv_hidden", c.conv_hidden).get("kernel", c.kernel);
    f.get("stride", c.stride).get("n_attn_blocks", c.n_attn_blocks).get("attn_heads", c.attn_heads);
    f.get("attn_dim", c.attn_dim).get("ffn_dim", c.ffn_dim).get("causal", c.causal);
    if (const json* s = f.section("stft")) decode(*s, c.stft, where + ".stft");
    f.finish();
}

json encode(const unet::UNetConfig& c) {
    return {{"n_layers", c.n_layers}, {"hidden", c.hidden}, {"stride", c.stride}, {"kernel", c.kernel},
            {"n_attn_blocks", c.n_attn_blocks}, {"attn_heads", c.attn_heads}, {"attn_dim", c.attn_dim},
            {"ffn_dim", c.ffn_dim}, {"channel_cap", c.channel_cap}, {"in_channels", c.in_channels},
            {"causal", c.causal}};
}

void decode(const json& j, unet::UNetConfig& c, const std::string& where) {
    Fields f(j, where);
    f.get("n_layers", c.n_layers).get("hidden", c.hidden).get("stride", c.stride).get("kernel", c.kernel);
    f.get("n_attn_blocks", c.n_attn_blocks).get("attn_heads", c.attn_heads).get("attn_dim", c.attn_dim);
    f.get("ffn_dim", c.ffn_dim).get("channel_cap", c.channel_cap).get("in_channels", c.in_channels);
    f.get("causal", c.causal);
    f.finish();
}

json encode(const conditioner::UpsamplerConfig& c) {
    return {{"time_strides", c.time_strides}, {"filter_a", c.filter_a}, {"filter_b", c.filter_b},
            {"orientation", to_string(c.orientation)}, {"leaky_slope", c.leaky_slope},
            {"cond_channels", c.cond_channels}};
}

void decode(const json& j, conditioner::UpsamplerConfig& c, const std::string& where) {
    Fields f(j, where);
    f.get("time_strides", c.time_strides).get("filter_a", c.filter_a).get("filter_b", c.filter_b);
    get_enum(f, "orientation", c.orientation, orientation_from_string);
    f.get("leaky_slope", c.leaky_slope).get("cond_channels", c.cond_channels);
    f.finish();
}

json encode(const conditioner::HybridConfig& c) {
    return {{"specnet", encode(c.specnet)}, {"upsampler", encode(c.upsampler)}, {"unet", encode(c.unet)},
            {"method", conditioner::to_string(c.method)}};
}

void decode(const json& j, conditioner::HybridConfig& c, const std::string& where) {
    Fields f(j, where);
    if (const json* s = f.section("specnet")) decode(*s, c.specnet, where + ".specnet");
    if (const json* s = f.section("upsampler")) decode(*s, c.upsampler, where + ".upsampler");
    if (const json* s = f.section("unet")) decode(*s, c.unet, where + ".unet");
    get_enum(f, "method", c.method, conditioner::method_from_string);
    f.finish();
}

json encode(const training::OptimConfig& c) {
    return {{"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}, {"lr_max", c.lr_max},
            {"warmup_ratio", c.warmup_ratio}, {"grad_clip", c.grad_clip}, {"total_iters", c.total_iters},
            {"batch", c.batch}};
}

void decode(const json& j, training::OptimConfig& c, const std::string& where) {
    Fields f(j, where);
    f.get("beta1", c.beta1).get("beta2", c.beta2).get("eps", c.eps).get("lr_max", c.lr_max);
    f.get("warmup_ratio", c.warmup_ratio).get("grad_clip", c.grad_clip).get("total_iters", c.total_iters);
    f.get("batch", c.batch);
    f.finish();
}

json encode(const training::Stage2Options& s) {
    json res = json::array();
    for (const auto& p : s.resolutions.resolutions) res.push_back(encode(p));
    return {{"band", to_string(s.band)}, {"log_norm", to_string(s.log_norm)}, {"freeze_specnet", s.freeze_specnet},
            {"resolutions", res}};
}

void decode(const json& j, training::Stage2Options& s, const std::string& where) {
    Fields f(j, where);
    get_enum(f, "band", s.band, band_from_string);
    get_enum(f, "log_norm", s.log_norm, log_norm_from_string);
    f.get("freeze_specnet", s.freeze_specnet);
    if (const json* r = f.section("resolutions")) {
        if (!r->is_array()) throw ConfigError(where + ".resolutions: expected an array");
        s.resolutions.resolutions.clear();
        for (std::size_t i = 0; i < r->size(); ++i) {
            dsp::StftParams p;
            decode((*r)[i], p, where + ".resolutions[" + std::to_string(i) + "]");
            s.resolutions.resolutions.push_back(p);
        }
    }
    f.finish();
}

json encode(const data::CorpusConfig& c) {
    json kinds = json::array();
    for (auto k : c.noise_kinds) kinds.push_back(data::to_string(k));
    return {{"clips", c.clips}, {"seconds", c.seconds}, {"noise_kinds", kinds}, {"snr_min", c.snr_min},
            {"snr_max", c.snr_max}, {"sample_rate", c.sample_rate}, {"seed", c.seed}};
}

void decode(const json& j, data::CorpusConfig& c, const std::string& where) {
    Fields f(j, where);
    f.get("clips", c.clips).get("seconds", c.seconds).get("snr_min", c.snr_min).get("snr_max", c.snr_max);
    f.get("sample_rate", c.sample_rate).get("seed", c.seed);
    if (const json* k = f.section("noise_kinds")) {
        if (!k->is_array()) throw ConfigError(where + ".noise_kinds: expected an array");
        c.noise_kinds.clear();
        for (const auto& v : *k) c.noise_kinds.push_back(data::noise_kind_from_string(v.get<std::string>()));
    }
    f.finish();
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string config_hash(const json& j) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
    return buf;
}

}  // namespace hdn::config

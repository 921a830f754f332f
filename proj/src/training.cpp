#include "hdn/training.hpp"

#include "hdn/config.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace hdn::training {

namespace {

constexpr char kMagic[8] = {'H', 'D', 'N', 'C', 'K', 'P', 'T', '\0'};
constexpr const char* kFirstMoment = "adam.m.";
constexpr const char* kSecondMoment = "adam.v.";

template <class T>
void write_le(std::ostream& os, const T* v, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(v), static_cast<std::streamsize>(n * sizeof(T)));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            char b[sizeof(T)];
            std::memcpy(b, v + i, sizeof(T));
            std::reverse(b, b + sizeof(T));
            os.write(b, sizeof(T));
        }
    }
}

template <class T>
void read_le(const char* src, T* v, std::size_t n) {
    std::memcpy(v, src, n * sizeof(T));
    if constexpr (std::endian::native != std::endian::little) {
        for (std::size_t i = 0; i < n; ++i) {
            auto* b = reinterpret_cast<char*>(v + i);
            std::reverse(b, b + sizeof(T));
        }
    }
}

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void rng_from_string(std::mt19937_64& rng, const std::string& s) {
    std::istringstream is(s);
    is >> rng;
    if (!is) throw std::runtime_error("checkpoint: corrupt rng state");
}

nn::Tensor<float> to_float_row(std::span<const double> x) {
    nn::Tensor<float> t({1, x.size()});
    for (std::size_t i = 0; i < x.size(); ++i) t[i] = static_cast<float>(x[i]);
    return t;
}

void append_params(Checkpoint& c, const nn::ParamList<float>& params) {
    for (const auto& p : params) c.tensors.push_back({p.name, p.var->value()});
}

Checkpoint without_prefix(const Checkpoint& c, const std::string& keep) {
    Checkpoint out = c;
    out.tensors.clear();
    for (const auto& t : c.tensors)
        if (t.name.starts_with(keep)) out.tensors.push_back(t);
    return out;
}

}  // namespace

void OptimConfig::validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("optim: betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw std::invalid_argument("optim: eps must be > 0");
    if (!(lr_max > 0.0)) throw std::invalid_argument("optim: lr_max must be > 0");
    if (!(warmup_ratio > 0.0 && warmup_ratio < 1.0)) throw std::invalid_argument("optim: warmup_ratio must lie in (0, 1)");
    if (!(grad_clip >= 0.0)) throw std::invalid_argument("optim: grad_clip must be >= 0");
    if (total_iters < 1) throw std::invalid_argument("optim: total_iters must be >= 1");
    if (batch < 1) throw std::invalid_argument("optim: batch must be >= 1");
}

OptimConfig stage1_defaults() { return OptimConfig{}; }

OptimConfig stage2_defaults() {
    OptimConfig c;
    c.total_iters = 500'000;
    c.batch = 32;
    return c;
}

double lr_schedule(std::size_t t, const OptimConfig& cfg) {
    if (t > cfg.total_iters) throw std::invalid_argument("lr_schedule: t beyond total_iters");
    const double total = static_cast<double>(cfg.total_iters);
    const double warm = cfg.warmup_ratio * total;
    const double x = static_cast<double>(t);
    if (x < warm) return cfg.lr_max * x / warm;
    const double progress = (x - warm) / (total - warm);
    return cfg.lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double global_grad_norm(const nn::ParamList<float>& params) {
    double s = 0.0;
    for (const auto& p : params)
        for (float g : p.var->grad().vec()) s += static_cast<double>(g) * g;
    return std::sqrt(s);
}

double Adam::step(const nn::ParamList<float>& params, double lr) {
    const double norm = global_grad_norm(params);
    const double scale = (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t), bc2 = 1.0 - std::pow(cfg_.beta2, t);
    for (const auto& p : params) {
        const auto& g = p.var->grad();
        if (g.empty()) continue;
        auto& value = p.var->mutable_value();
        auto [mi, fresh_m] = m_.try_emplace(p.name, value.shape());
        auto [vi, fresh_v] = v_.try_emplace(p.name, value.shape());
        auto& m = mi->second;
        auto& v = vi->second;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double gi = scale * g[i];
            m[i] = static_cast<float>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi);
            v[i] = static_cast<float>(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi);
            const double mh = m[i] / bc1, vh = v[i] / bc2;
            value[i] = static_cast<float>(value[i] - lr * mh / (std::sqrt(vh) + cfg_.eps));
        }
    }
    return norm;
}

const NamedTensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    nlohmann::json index = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& t : c.tensors) {
        index.push_back({{"name", t.name}, {"shape", t.value.shape()}, {"offset", offset}});
        offset += t.value.size() * sizeof(float);
    }
    const nlohmann::json header{{"format_version", c.format_version},
                                {"kind", c.kind},
                                {"config", c.config},
                                {"iteration", c.iteration},
                                {"rng_state", c.rng_state},
                                {"optimizer", c.optimizer},
                                {"training", c.training},
                                {"tensors", index},
                                {"payload_bytes", offset}};
    const std::string text = header.dump();
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("checkpoint " + path.string() + ": cannot open for writing");
        out.write(kMagic, sizeof kMagic);
        const std::uint64_t len = text.size();
        write_le(out, &len, 1);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& t : c.tensors) write_le(out, t.value.data(), t.value.size());
        if (!out) throw std::runtime_error("checkpoint " + path.string() + ": write failed");
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint " + path.string() + ": cannot open");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto fail = [&](const std::string& what) -> std::runtime_error {
        return std::runtime_error("checkpoint " + path.string() + ": " + what);
    };
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw fail("not a checkpoint file");
    std::uint64_t len = 0;
    read_le(bytes.data() + 8, &len, 1);
    if (len > bytes.size() - 16) throw fail("truncated header");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    } catch (const nlohmann::json::exception& e) {
        throw fail(std::string("corrupt header: ") + e.what());
    }

    Checkpoint c;
    try {
        c.format_version = h.at("format_version").get<std::uint32_t>();
        if (c.format_version != kCheckpointVersion)
            throw fail("unsupported format_version " + std::to_string(c.format_version) + " (expected " +
                       std::to_string(kCheckpointVersion) + ")");
        c.kind = h.at("kind").get<std::string>();
        c.config = h.at("config");
        c.iteration = h.at("iteration").get<std::uint64_t>();
        c.rng_state = h.at("rng_state").get<std::string>();
        c.optimizer = h.at("optimizer");
        c.training = h.at("training");
        const auto payload = h.at("payload_bytes").get<std::uint64_t>();
        const std::size_t base = 16 + len;
        if (bytes.size() - base != payload)
            throw fail("payload is " + std::to_string(bytes.size() - base) + " bytes, expected " +
                       std::to_string(payload) + " (truncated or corrupt)");
        for (const auto& e : h.at("tensors")) {
            const auto shape = e.at("shape").get<nn::Shape>();
            const auto offset = e.at("offset").get<std::uint64_t>();
            const std::size_t n = nn::shape_numel(shape);
            if (offset + n * sizeof(float) > payload) throw fail("tensor index out of range");
            nn::Tensor<float> t(shape);
            read_le(bytes.data() + base + offset, t.data(), n);
            c.tensors.push_back({e.at("name").get<std::string>(), std::move(t)});
        }
    } catch (const nlohmann::json::exception& e) {
        throw fail(std::string("corrupt header: ") + e.what());
    }
    return c;
}

Checkpoint make_checkpoint(const specnet::SpecNetModel& m) {
    Checkpoint c;
    c.kind = "specnet";
    c.config = config::encode(m.config);
    append_params(c, const_cast<specnet::SpecNetModel&>(m).parameters());
    return c;
}

Checkpoint make_checkpoint(const conditioner::HybridModel& m) {
    Checkpoint c;
    c.kind = "hybrid";
    c.config = config::encode(m.config);
    append_params(c, const_cast<conditioner::HybridModel&>(m).parameters());
    return c;
}

void restore_parameters(const Checkpoint& c, const nn::ParamList<float>& params) {
    std::size_t model_tensors = 0;
    for (const auto& t : c.tensors)
        if (!t.name.starts_with("adam.")) ++model_tensors;
    if (model_tensors != params.size())
        throw std::runtime_error("checkpoint holds " + std::to_string(model_tensors) + " parameter tensors, model has " +
                                 std::to_string(params.size()));
    for (const auto& p : params) {
        const NamedTensor* t = c.find(p.name);
        if (!t) throw std::runtime_error("checkpoint lacks parameter " + p.name);
        if (t->value.shape() != p.var->value().shape())
            throw std::runtime_error("checkpoint parameter " + p.name + " has shape " + nn::shape_str(t->value.shape()) +
                                     ", model expects " + nn::shape_str(p.var->value().shape()));
        p.var->mutable_value() = t->value;
    }
}

specnet::SpecNetModel load_specnet(const Checkpoint& c) {
    if (c.kind != "specnet") throw std::runtime_error("expected a specnet checkpoint, got '" + c.kind + "'");
    specnet::SpecNetConfig cfg;
    config::decode(c.config, cfg);
    auto m = specnet::SpecNetModel::init(cfg, 0);
    restore_parameters(c, m.parameters());
    return m;
}

void load_into(const Checkpoint& c, specnet::SpecNetModel& m) {
    if (c.kind != "specnet") throw std::runtime_error("expected a specnet checkpoint, got '" + c.kind + "'");
    if (c.config != config::encode(m.config)) throw std::runtime_error("checkpoint config does not match the model");
    restore_parameters(c, m.parameters());
}

conditioner::HybridModel load_hybrid(const Checkpoint& c) {
    if (c.kind != "hybrid") throw std::runtime_error("expected a hybrid checkpoint, got '" + c.kind + "'");
    conditioner::HybridConfig cfg;
    config::decode(c.config, cfg);
    auto m = conditioner::HybridModel::init(cfg, 0);
    restore_parameters(c, m.parameters());
    return m;
}

specnet::SpecNetModel load_specnet_any(const Checkpoint& c) {
    if (c.kind == "specnet") return load_specnet(c);
    if (c.kind != "hybrid") throw std::runtime_error("unknown checkpoint kind '" + c.kind + "'");
    conditioner::HybridConfig cfg;
    config::decode(c.config, cfg);
    auto m = specnet::SpecNetModel::init(cfg.specnet, 0);
    restore_parameters(without_prefix(c, "specnet."), m.parameters());
    return m;
}

std::vector<TrainingPair> load_pairs(const std::filesystem::path& manifest_path) {
    std::vector<TrainingPair> out;
    for (const auto& r : data::read_manifest(manifest_path)) {
        auto p = data::load_pair(manifest_path, r);
        out.push_back({std::move(p.clean), std::move(p.noisy)});
    }
    return out;
}

TrainerBase::TrainerBase(std::vector<TrainingPair> pairs, TrainerOptions options, std::size_t hop)
    : pairs_(std::move(pairs)), options_(std::move(options)), adam_(options_.optim), rng_(options_.seed), hop_(hop) {
    options_.optim.validate();
    if (pairs_.empty()) throw std::invalid_argument("training: empty training set");
}

void TrainerBase::check_pairs() const {
    const std::size_t need = std::max(min_clip(), options_.clip_samples);
    for (std::size_t i = 0; i < pairs_.size(); ++i) {
        if (pairs_[i].clean.size() != pairs_[i].noisy.size())
            throw std::invalid_argument("training: pair " + std::to_string(i) + " has mismatched lengths");
        if (pairs_[i].clean.size() < need)
            throw std::invalid_argument("training: pair " + std::to_string(i) + " is shorter than " +
                                        std::to_string(need) + " samples");
    }
    if (options_.clip_samples > 0 && options_.clip_samples < min_clip())
        throw std::invalid_argument("training: clip_samples below the " + std::to_string(min_clip()) +
                                    "-sample minimum");
}

std::vector<TrainingPair> TrainerBase::draw_batch() {
    std::vector<std::size_t> idx(pairs_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (options_.optim.batch < idx.size()) {
        std::shuffle(idx.begin(), idx.end(), rng_);
        idx.resize(options_.optim.batch);
    }
    std::vector<TrainingPair> batch;
    for (std::size_t i : idx) {
        const auto& p = pairs_[i];
        const std::size_t clip = options_.clip_samples;
        if (clip == 0 || clip >= p.clean.size()) {
            batch.push_back(p);
            continue;
        }
        const std::size_t starts = (p.clean.size() - clip) / hop_ + 1;
        const std::size_t start = hop_ * std::uniform_int_distribution<std::size_t>(0, starts - 1)(rng_);
        auto cut = [&](const dsp::Waveform& w) {
            return dsp::Waveform{{w.samples.begin() + start, w.samples.begin() + start + clip}, w.sample_rate};
        };
        batch.push_back({cut(p.clean), cut(p.noisy)});
    }
    return batch;
}

IterationLog TrainerBase::step() {
    return step(lr_schedule(std::min(iteration_, options_.optim.total_iters), options_.optim));
}

IterationLog TrainerBase::step(double lr) {
    const auto params = trainable();
    for (const auto& p : params) p.var->zero_grad();
    IterationLog log;
    log.lr = lr;
    log.loss = accumulate(draw_batch(), log.terms);
    log.grad_norm = global_grad_norm(params);
    if (!std::isfinite(log.loss) || !std::isfinite(log.grad_norm)) {
        std::string where;
        if (!options_.diagnostic_path.empty()) {
            auto c = checkpoint();
            c.training["diverged"] = true;
            save_checkpoint(options_.diagnostic_path, c);
            where = "; diagnostic checkpoint at " + options_.diagnostic_path.string();
        }
        throw TrainingDiverged("training diverged at iteration " + std::to_string(iteration_ + 1) + " (loss " +
                               std::to_string(log.loss) + ")" + where);
    }
    adam_.step(params, log.lr);
    log.iteration = ++iteration_;
    return log;
}

Checkpoint TrainerBase::checkpoint() const {
    Checkpoint c = model_checkpoint();
    c.iteration = iteration_;
    c.rng_state = rng_to_string(rng_);
    c.optimizer = {{"config", config::encode(options_.optim)}, {"steps", adam_.steps()}};
    c.training["clip_samples"] = options_.clip_samples;
    c.training["seed"] = options_.seed;
    auto& adam = const_cast<Adam&>(adam_);
    for (const auto& [name, t] : adam.first_moments()) c.tensors.push_back({kFirstMoment + name, t});
    for (const auto& [name, t] : adam.second_moments()) c.tensors.push_back({kSecondMoment + name, t});
    return c;
}

void TrainerBase::restore(const Checkpoint& c) {
    iteration_ = c.iteration;
    rng_from_string(rng_, c.rng_state);
    adam_.set_steps(c.optimizer.at("steps").get<std::uint64_t>());
    const std::string m = kFirstMoment, v = kSecondMoment;
    for (const auto& t : c.tensors) {
        if (t.name.starts_with(m)) adam_.first_moments()[t.name.substr(m.size())] = t.value;
        if (t.name.starts_with(v)) adam_.second_moments()[t.name.substr(v.size())] = t.value;
    }
}

namespace {

TrainerOptions options_from(const Checkpoint& c, std::filesystem::path diagnostic_path) {
    TrainerOptions o;
    config::decode(c.optimizer.at("config"), o.optim);
    o.clip_samples = c.training.at("clip_samples").get<std::size_t>();
    o.seed = c.training.at("seed").get<std::uint64_t>();
    o.diagnostic_path = std::move(diagnostic_path);
    return o;
}

}  // namespace

SpecNetTrainer::SpecNetTrainer(specnet::SpecNetModel model, std::vector<TrainingPair> pairs, TrainerOptions options)
    : TrainerBase(std::move(pairs), std::move(options), model.config.stft.hop), model_(std::move(model)) {
    check_pairs();
}

SpecNetTrainer SpecNetTrainer::resume(const Checkpoint& c, std::vector<TrainingPair> pairs,
                                      std::filesystem::path diagnostic_path) {
    SpecNetTrainer t(load_specnet(without_prefix(c, "specnet.")), std::move(pairs),
                     options_from(c, std::move(diagnostic_path)));
    t.restore(c);
    return t;
}

std::size_t SpecNetTrainer::min_clip() const {
    const auto p = model_.config.input_stft();
    return p.framing == dsp::Framing::Causal ? p.hop : p.win_length;
}

double SpecNetTrainer::accumulate(const std::vector<TrainingPair>& batch, std::map<std::string, double>& terms) {
    const auto p = model_.config.input_stft();
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double total = 0.0, passthrough = 0.0;
    for (const auto& item : batch) {
        const auto y = dsp::spectrogram(item.clean.samples, p);
        const auto y_noisy = dsp::spectrogram(item.noisy.samples, p);
        const auto out = model_.forward(nn::constant(y_noisy.values.cast<float>()));
        double value = 0.0;
        const auto objective = nn::external_objective(out, [&](const nn::Tensor<float>& y_hat) {
            nn::Tensor<double> g;
            value = losses::spec_loss(y, {y_hat.cast<double>(), p}, &g);
            g *= inv_b;
            return std::pair{value * inv_b, g.cast<float>()};
        });
        objective.backward();
        total += value * inv_b;
        passthrough += losses::spec_loss(y, y_noisy) * inv_b;
    }
    terms["spec_loss"] = total;
    terms["passthrough"] = passthrough;
    return total;
}

double SpecNetTrainer::evaluate(const std::vector<TrainingPair>& pairs) const {
    nn::NoGradGuard no_grad;
    const auto p = model_.config.input_stft();
    double total = 0.0;
    for (const auto& item : pairs) {
        const auto y = dsp::spectrogram(item.clean.samples, p);
        const auto y_hat = model_.predict(dsp::spectrogram(item.noisy.samples, p));
        total += losses::spec_loss(y, y_hat);
    }
    return total / static_cast<double>(pairs.size());
}

HybridTrainer::HybridTrainer(conditioner::HybridModel model, std::vector<TrainingPair> pairs, TrainerOptions options,
                             Stage2Options stage2)
    : TrainerBase(std::move(pairs), std::move(options), model.config.specnet.stft.hop),
      model_(std::move(model)),
      stage2_(std::move(stage2)) {
    stage2_.resolutions.validate();
    check_pairs();
}

HybridTrainer HybridTrainer::resume(const Checkpoint& c, std::vector<TrainingPair> pairs,
                                    std::filesystem::path diagnostic_path) {
    Stage2Options s;
    config::decode(c.training.at("stage2"), s);
    auto model_only = c;
    std::erase_if(model_only.tensors, [](const NamedTensor& t) { return t.name.starts_with("adam."); });
    HybridTrainer t(load_hybrid(model_only), std::move(pairs), options_from(c, std::move(diagnostic_path)), s);
    t.restore(c);
    return t;
}

nn::ParamList<float> HybridTrainer::trainable() {
    return stage2_.freeze_specnet ? model_.waveform_parameters() : model_.parameters();
}

Checkpoint HybridTrainer::model_checkpoint() const {
    Checkpoint c = make_checkpoint(model_);
    c.training["stage2"] = config::encode(stage2_);
    return c;
}

std::size_t HybridTrainer::min_clip() const {
    std::size_t need = model_.config.specnet.stft.hop;
    for (const auto& r : stage2_.resolutions.resolutions) need = std::max(need, r.win_length);
    return need;
}

double HybridTrainer::accumulate(const std::vector<TrainingPair>& batch, std::map<std::string, double>& terms) {
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const auto& item : batch) {
        const auto noisy = nn::constant(to_float_row(item.noisy.samples));
        nn::Var<float> out;
        if (stage2_.freeze_specnet) {
            out = model_.forward_waveform(noisy, model_.predict_spectrogram(item.noisy.samples));
        } else {
            const auto y = model_.noisy_spectrogram(item.noisy.samples);
            out = model_.forward_waveform(noisy, model_.spec.forward(nn::constant(y.values.cast<float>())));
        }
        losses::LossBreakdown br;
        const auto objective = nn::external_objective(out, [&](const nn::Tensor<float>& x_hat) {
            std::vector<double> xh(x_hat.vec().begin(), x_hat.vec().end()), g;
            br = losses::hybrid_loss(item.clean.samples, xh, stage2_.resolutions, stage2_.band, stage2_.log_norm, &g);
            nn::Tensor<float> gf(x_hat.shape());
            for (std::size_t i = 0; i < g.size(); ++i) gf[i] = static_cast<float>(g[i] * inv_b);
            return std::pair{br.total * inv_b, gf};
        });
        objective.backward();
        total += br.total * inv_b;
        for (const auto& [k, v] : br.terms) terms[k] += v * inv_b;
    }
    terms["total"] = total;
    return total;
}

double HybridTrainer::evaluate(const std::vector<TrainingPair>& pairs) const {
    nn::NoGradGuard no_grad;
    double total = 0.0;
    for (const auto& item : pairs) {
        const auto out = model_.denoise(item.noisy);
        total += losses::hybrid_loss(item.clean.samples, out.samples, stage2_.resolutions, stage2_.band,
                                     stage2_.log_norm)
                     .total;
    }
    return total / static_cast<double>(pairs.size());
}

}  // namespace hdn::training

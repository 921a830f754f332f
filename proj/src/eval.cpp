#include "hdn/eval.hpp"

#include "hdn/data.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <regex>
#include <stdexcept>

namespace hdn::eval {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

void check_pair(std::span<const double> reference, std::span<const double> estimate, const char* what) {
    if (reference.size() != estimate.size()) {
        throw std::invalid_argument(std::string(what) + ": reference has " + std::to_string(reference.size()) +
                                    " samples, estimate " + std::to_string(estimate.size()));
    }
    if (dot(reference, reference) == 0.0) throw std::invalid_argument(std::string(what) + ": silent reference");
}

double clamp_db(double signal, double residual) {
    if (signal <= 0.0) return -kSiSdrCapDb;
    if (residual <= 0.0) return kSiSdrCapDb;
    return std::clamp(10.0 * std::log10(signal / residual), -kSiSdrCapDb, kSiSdrCapDb);
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    return out + "'";
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
    for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) s.replace(pos, from.size(), to);
    return s;
}

}  // namespace

double si_sdr(std::span<const double> reference, std::span<const double> estimate) {
    check_pair(reference, estimate, "si_sdr");
    const double alpha = dot(estimate, reference) / dot(reference, reference);
    double target = 0.0, residual = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const double t = alpha * reference[i];
        const double e = estimate[i] - t;
        target += t * t;
        residual += e * e;
    }
    return clamp_db(target, residual);
}

double snr(std::span<const double> reference, std::span<const double> estimate) {
    check_pair(reference, estimate, "snr");
    double residual = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const double e = estimate[i] - reference[i];
        residual += e * e;
    }
    return clamp_db(dot(reference, reference), residual);
}

double lsd(std::span<const double> reference, std::span<const double> estimate, const dsp::StftParams& p) {
    if (reference.size() != estimate.size()) throw std::invalid_argument("lsd: length mismatch");
    const auto a = dsp::spectrogram(reference, p);
    const auto b = dsp::spectrogram(estimate, p);
    if (a.frames() == 0) throw std::invalid_argument("lsd: signal shorter than one frame");
    double total = 0.0;
    for (std::size_t t = 0; t < a.frames(); ++t) {
        double acc = 0.0;
        for (std::size_t f = 0; f < a.bins(); ++f) {
            const double pa = std::max(a.values.at(f, t) * a.values.at(f, t), kLsdPowerFloor);
            const double pb = std::max(b.values.at(f, t) * b.values.at(f, t), kLsdPowerFloor);
            const double d = 10.0 * std::log10(pa / pb);
            acc += d * d;
        }
        total += std::sqrt(acc / static_cast<double>(a.bins()));
    }
    return total / static_cast<double>(a.frames());
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b, ZeroHandling zeros) {
    if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: paired samples differ in length");
    if (a.size() < 5) throw std::invalid_argument("wilcoxon: need at least 5 pairs, got " + std::to_string(a.size()));
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        d[i] = a[i] - b[i];
        if (!std::isfinite(d[i])) throw std::invalid_argument("wilcoxon: non-finite value");
    }
    if (std::all_of(d.begin(), d.end(), [](double x) { return x == 0.0; })) {
        throw std::invalid_argument("degenerate pairs");
    }
    if (zeros == ZeroHandling::Wilcoxon) std::erase(d, 0.0);

    // Doubled average ranks of |d|, so tied ranks stay integral.
    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto i, auto j) { return std::abs(d[i]) < std::abs(d[j]); });
    std::vector<long> rank2(d.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
        for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = static_cast<long>(i + j + 2);
        i = j + 1;
    }

    std::vector<long> active;
    long w2 = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d[i] == 0.0) continue;
        active.push_back(rank2[i]);
        if (d[i] > 0.0) w2 += rank2[i];
    }

    WilcoxonResult r;
    r.n = active.size();
    r.w_plus = static_cast<double>(w2) / 2.0;
    r.exact = r.n <= kWilcoxonExactMax;
    if (r.exact) {
        const long total = std::accumulate(active.begin(), active.end(), 0L);
        std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
        count[0] = 1.0;
        long reach = 0;
        for (long rk : active) {
            reach += rk;
            for (long s = reach; s >= rk; --s) count[s] += count[s - rk];
        }
        const double all = std::ldexp(1.0, static_cast<int>(r.n));
        double lower = 0.0, upper = 0.0;
        for (long s = 0; s <= total; ++s) {
            if (s <= w2) lower += count[s];
            if (s >= w2) upper += count[s];
        }
        r.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / all);
    } else {
        double mean = 0.0, var = 0.0;
        for (long rk : active) {
            const double x = static_cast<double>(rk) / 2.0;
            mean += x / 2.0;
            var += x * x / 4.0;
        }
        const double z = std::max(0.0, std::abs(r.w_plus - mean) - 0.5) / std::sqrt(var);
        r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
    }
    return r;
}

void RtfOptions::validate() const {
    if (batch < 1) throw std::invalid_argument("rtf: batch must be >= 1");
    if (!(seconds > 0.0)) throw std::invalid_argument("rtf: seconds must be positive");
    if (sample_rate <= 0) throw std::invalid_argument("rtf: sample_rate must be positive");
    if (trials < 3) throw std::invalid_argument("rtf: need at least 3 trials");
}

nlohmann::json RtfReport::to_json() const {
    return {{"rtf", {{"specnet", specnet}, {"unet", unet}, {"full", full}}},
            {"trials", trials},
            {"batch", options.batch},
            {"seconds", options.seconds},
            {"sample_rate", options.sample_rate},
            {"warmup", options.warmup}};
}

RtfReport rtf_benchmark(const conditioner::HybridModel& model, const RtfOptions& opt) {
    opt.validate();
    const std::size_t len = static_cast<std::size_t>(std::llround(opt.seconds * opt.sample_rate));
    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> dist(0.0, 0.1);
    std::vector<dsp::Waveform> inputs(opt.batch);
    std::vector<nn::Tensor<float>> unet_inputs;
    for (auto& w : inputs) {
        w = dsp::Waveform{std::vector<double>(len), opt.sample_rate};
        for (auto& v : w.samples) v = dist(rng);
        nn::Tensor<float> t({model.config.unet.in_channels, len});
        for (std::size_t i = 0; i < len; ++i) t[i] = static_cast<float>(w.samples[i]);
        unet_inputs.push_back(std::move(t));
    }

    const std::map<std::string, std::function<void()>> parts{
        {"specnet", [&] {
             for (const auto& w : inputs) model.predict_spectrogram(w.samples);
         }},
        {"unet", [&] {
             nn::NoGradGuard no_grad;
             for (const auto& t : unet_inputs) model.unet.forward(nn::constant(t));
         }},
        {"full", [&] {
             for (const auto& w : inputs) model.denoise(w);
         }},
    };

    RtfReport report;
    report.options = opt;
    const double audio = static_cast<double>(opt.batch) * static_cast<double>(len) / opt.sample_rate;
    for (const auto& [name, run] : parts) {
        for (std::size_t i = 0; i < opt.warmup; ++i) run();
        auto& times = report.trials[name];
        for (std::size_t i = 0; i < opt.trials; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            run();
            times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / audio);
        }
    }
    report.specnet = median(report.trials["specnet"]);
    report.unet = median(report.trials["unet"]);
    report.full = median(report.trials["full"]);
    return report;
}

void ExternalMetric::validate() const {
    if (name.empty()) throw std::invalid_argument("external metric: empty name");
    if (command.find("{ref}") == std::string::npos || command.find("{est}") == std::string::npos) {
        throw std::invalid_argument("external metric '" + name + "': command needs {ref} and {est}");
    }
    const std::regex re(pattern);
    if (re.mark_count() < 1) throw std::invalid_argument("external metric '" + name + "': pattern needs a capture group");
}

double run_external_metric(const ExternalMetric& m, const std::filesystem::path& ref,
                           const std::filesystem::path& est) {
    m.validate();
    const std::string cmd =
        replace_all(replace_all(m.command, "{ref}", shell_quote(ref.string())), "{est}", shell_quote(est.string()));
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) throw std::runtime_error("external metric '" + m.name + "': cannot start command");
    std::string output;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) output.append(buf, n);
    const int status = pclose(pipe);
    if (status != 0) throw std::runtime_error("external metric '" + m.name + "': command exited with status " + std::to_string(status));
    std::smatch match;
    if (!std::regex_search(output, match, std::regex(m.pattern))) {
        throw std::runtime_error("external metric '" + m.name + "': pattern not found in output");
    }
    try {
        return std::stod(match[1].str());
    } catch (const std::exception&) {
        throw std::runtime_error("external metric '" + m.name + "': cannot parse '" + match[1].str() + "'");
    }
}

ItemMetrics score_item(const dsp::Waveform& clean, const dsp::Waveform& noisy, const dsp::Waveform& denoised,
                       const dsp::StftParams& lsd_stft) {
    ItemMetrics m;
    m.si_sdr_db = si_sdr(clean.samples, denoised.samples);
    m.snr_db = snr(clean.samples, denoised.samples);
    m.lsd_db = lsd(clean.samples, denoised.samples, lsd_stft);
    m.noisy_si_sdr_db = si_sdr(clean.samples, noisy.samples);
    m.noisy_snr_db = snr(clean.samples, noisy.samples);
    m.noisy_lsd_db = lsd(clean.samples, noisy.samples, lsd_stft);
    return m;
}

void finalize(MetricReport& report) {
    report.count = report.items.size();
    report.failed = 0;
    report.aggregates.clear();
    std::map<std::string, std::vector<double>> columns;
    std::vector<double> denoised, noisy;
    for (const auto& item : report.items) {
        if (item.error) {
            ++report.failed;
            continue;
        }
        columns["si_sdr_db"].push_back(item.si_sdr_db);
        columns["lsd_db"].push_back(item.lsd_db);
        columns["snr_db"].push_back(item.snr_db);
        columns["noisy_si_sdr_db"].push_back(item.noisy_si_sdr_db);
        columns["noisy_lsd_db"].push_back(item.noisy_lsd_db);
        columns["noisy_snr_db"].push_back(item.noisy_snr_db);
        columns["si_sdr_improvement_db"].push_back(item.si_sdr_db - item.noisy_si_sdr_db);
        for (const auto& [name, v] : item.external) columns["external." + name].push_back(v);
        denoised.push_back(item.si_sdr_db);
        noisy.push_back(item.noisy_si_sdr_db);
    }
    for (const auto& [name, values] : columns) {
        report.aggregates[name] = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    }
    if (denoised.size() >= 5 && denoised != noisy) {
        report.aggregates["si_sdr_wilcoxon_p"] = wilcoxon_signed_rank(denoised, noisy).p_value;
    }
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json items_json = nlohmann::json::array();
    for (const auto& it : items) {
        nlohmann::json j{{"index", it.index}, {"noisy", it.noisy_path}};
        if (it.error) {
            j["error"] = *it.error;
        } else {
            j["si_sdr_db"] = it.si_sdr_db;
            j["lsd_db"] = it.lsd_db;
            j["snr_db"] = it.snr_db;
            j["noisy_si_sdr_db"] = it.noisy_si_sdr_db;
            j["noisy_lsd_db"] = it.noisy_lsd_db;
            j["noisy_snr_db"] = it.noisy_snr_db;
            if (!it.external.empty()) j["external"] = it.external;
        }
        items_json.push_back(std::move(j));
    }
    return {{"version", kReportVersion}, {"config_hash", config_hash}, {"count", count},
            {"failed", failed},          {"items", std::move(items_json)}, {"aggregates", aggregates}};
}

MetricReport evaluate_testset(const std::filesystem::path& manifest, const Denoiser& denoise,
                              const EvalOptions& opt) {
    for (const auto& m : opt.external) m.validate();
    const data::Manifest records = data::read_manifest(manifest);

    std::filesystem::path out_dir = opt.denoised_dir;
    const bool temporary = out_dir.empty() && !opt.external.empty();
    if (temporary) {
        out_dir = std::filesystem::temp_directory_path() / ("hdn-eval-" + std::to_string(std::random_device{}()));
    }
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    MetricReport report;
    report.config_hash = opt.config_hash;
    for (std::size_t i = 0; i < records.size(); ++i) {
        ItemMetrics item;
        try {
            const data::LoadedPair pair = data::load_pair(manifest, records[i]);
            const dsp::Waveform out = denoise(pair.noisy);
            item = score_item(pair.clean, pair.noisy, out, opt.lsd_stft);
            if (!out_dir.empty()) {
                char name[32];
                std::snprintf(name, sizeof name, "%05zu.wav", i);
                const auto est = out_dir / name;
                data::write_wav(est, out);
                const auto ref = data::resolve(manifest, records[i].clean_path);
                for (const auto& m : opt.external) item.external[m.name] = run_external_metric(m, ref, est);
            }
        } catch (const std::exception& e) {
            item = ItemMetrics{};
            item.error = e.what();
        }
        item.index = i;
        item.noisy_path = records[i].noisy_path;
        report.items.push_back(std::move(item));
    }
    if (temporary) std::filesystem::remove_all(out_dir);
    finalize(report);
    return report;
}

void write_report(const std::filesystem::path& path, const MetricReport& report) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report " + path.string());
    out << report.to_json().dump(2) << '\n';
    if (!out) throw std::runtime_error("failed writing report " + path.string());
}

}  // namespace hdn::eval

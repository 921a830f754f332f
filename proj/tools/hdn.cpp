#include "hdn/config.hpp"
#include "hdn/data.hpp"
#include "hdn/eval.hpp"
#include "hdn/run_config.hpp"
#include "hdn/runtime.hpp"
#include "hdn/streaming.hpp"
#include "hdn/training.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using hdn::config::json;
using hdn::config::RunConfig;

namespace {

// Precedence, lowest first: defaults, --config file, --set overrides, HDN_CKPT_DIR,
// subcommand flags.
struct Globals {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

class Log {
public:
    explicit Log(bool quiet) : quiet_(quiet), start_(std::chrono::steady_clock::now()) {}

    void event(const std::string& name, json fields = json::object()) const {
        if (quiet_) return;
        fields["event"] = name;
        fields["elapsed_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        std::cerr << fields.dump() << '\n';
    }

private:
    bool quiet_;
    std::chrono::steady_clock::time_point start_;
};

RunConfig resolve_config(const Globals& g) {
    json j = json::object();
    if (!g.config_path.empty()) {
        std::ifstream in(g.config_path);
        if (!in) throw hdn::config::ConfigError("cannot open config " + g.config_path);
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw hdn::config::ConfigError("config " + g.config_path + ": " + e.what());
        }
    }
    for (const auto& o : g.overrides) hdn::config::apply_override(j, o);
    RunConfig cfg;
    hdn::config::decode(j, cfg);
    if (const char* dir = std::getenv("HDN_CKPT_DIR"); dir && *dir) cfg.ckpt_dir = dir;
    if (g.seed) cfg.seed = *g.seed;
    return cfg;
}

void write_snapshot(const fs::path& path, const RunConfig& cfg, json extra = json::object()) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    json j = hdn::config::encode(cfg);
    j["config_hash"] = hdn::config::config_hash(j);
    if (!extra.empty()) j["run"] = std::move(extra);
    std::ofstream out(path);
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write config snapshot " + path.string());
}

fs::path beside(const fs::path& output) { return fs::path(output.string() + ".config.json"); }

json log_fields(const hdn::training::IterationLog& l) {
    return {{"iteration", l.iteration}, {"lr", l.lr}, {"loss", l.loss}, {"grad_norm", l.grad_norm}, {"terms", l.terms}};
}

template <class Trainer>
void run_training(Trainer& trainer, const hdn::config::StageSettings& stage, const fs::path& out, const Log& log,
                  const std::string& stage_name) {
    const std::size_t total = trainer.optim().total_iters;
    log.event("train_start", {{"stage", stage_name}, {"from_iteration", trainer.iteration()}, {"total_iters", total}});
    while (trainer.iteration() < total) {
        const auto l = trainer.step();
        if (l.iteration % stage.log_every == 0 || l.iteration == total) log.event("iteration", log_fields(l));
        if (stage.checkpoint_every > 0 && l.iteration % stage.checkpoint_every == 0 && l.iteration < total) {
            hdn::training::save_checkpoint(out, trainer.checkpoint());
            log.event("checkpoint", {{"path", out.string()}, {"iteration", l.iteration}});
        }
    }
    hdn::training::save_checkpoint(out, trainer.checkpoint());
    log.event("checkpoint", {{"path", out.string()}, {"iteration", trainer.iteration()}, {"final", true}});
}

hdn::training::TrainerOptions trainer_options(const hdn::config::StageSettings& s, const RunConfig& cfg,
                                              const fs::path& out) {
    hdn::training::TrainerOptions o;
    o.optim = s.optim;
    o.clip_samples = s.clip_samples;
    o.seed = cfg.seed;
    o.diagnostic_path = fs::path(out.string() + ".diverged");
    return o;
}

hdn::conditioner::HybridModel load_hybrid_file(const fs::path& path) {
    const auto c = hdn::training::load_checkpoint(path);
    if (c.kind != "hybrid") {
        throw std::invalid_argument(path.string() + " holds a '" + c.kind + "' checkpoint; a hybrid one is needed");
    }
    return hdn::training::load_hybrid(c);
}

// Subcommand flags. Unset optionals leave the resolved config untouched.
struct StageFlags {
    std::optional<std::size_t> iters, batch, clip;
    std::optional<double> lr;

    void add(CLI::App* app) {
        app->add_option("--iters", iters, "Total optimizer iterations");
        app->add_option("--batch", batch, "Batch size");
        app->add_option("--lr", lr, "Peak learning rate");
        app->add_option("--clip", clip, "Training clip length in samples (0 = whole pairs)");
    }
    void apply(hdn::config::StageSettings& s) const {
        if (iters) s.optim.total_iters = *iters;
        if (batch) s.optim.batch = *batch;
        if (lr) s.optim.lr_max = *lr;
        if (clip) s.clip_samples = *clip;
    }
};

int cmd_gen_data(const Globals& g, const std::string& out_flag, std::optional<std::size_t> clips,
                 std::optional<double> seconds, std::optional<std::uint64_t> data_seed) {
    RunConfig cfg = resolve_config(g);
    if (clips) cfg.data.clips = *clips;
    if (seconds) cfg.data.seconds = *seconds;
    if (data_seed) cfg.data.seed = *data_seed;
    cfg.validate();
    const fs::path dir = out_flag.empty() ? cfg.data_dir : fs::path(out_flag);
    Log log(g.quiet);
    log.event("gen_data_start", {{"dir", dir.string()}, {"clips", cfg.data.clips}, {"seconds", cfg.data.seconds}});
    const fs::path manifest = hdn::data::generate_corpus(dir, cfg.data);
    write_snapshot(dir / "resolved_config.json", cfg);
    log.event("gen_data_done", {{"manifest", manifest.string()}});
    std::cout << manifest.string() << '\n';
    return 0;
}

int cmd_train_spec(const Globals& g, const StageFlags& flags, const std::string& manifest_flag,
                   const std::string& out_flag, const std::string& resume) {
    RunConfig cfg = resolve_config(g);
    flags.apply(cfg.stage1);
    cfg.validate();
    const fs::path manifest = manifest_flag.empty() ? cfg.data_dir / "manifest.jsonl" : fs::path(manifest_flag);
    const fs::path out = out_flag.empty() ? cfg.ckpt_dir / "specnet.ckpt" : fs::path(out_flag);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    Log log(g.quiet);
    auto pairs = hdn::training::load_pairs(manifest);
    log.event("data_loaded", {{"manifest", manifest.string()}, {"pairs", pairs.size()}});
    write_snapshot(beside(out), cfg, {{"command", "train-spec"}, {"manifest", manifest.string()}, {"resume", resume}});
    auto trainer = resume.empty()
                       ? hdn::training::SpecNetTrainer(hdn::specnet::SpecNetModel::init(cfg.model.specnet, cfg.seed),
                                                       std::move(pairs), trainer_options(cfg.stage1, cfg, out))
                       : hdn::training::SpecNetTrainer::resume(hdn::training::load_checkpoint(resume),
                                                               std::move(pairs), out.string() + ".diverged");
    run_training(trainer, cfg.stage1, out, log, "specnet");
    return 0;
}

int cmd_train_full(const Globals& g, const StageFlags& flags, const std::string& manifest_flag,
                   const std::string& spec_flag, const std::string& out_flag, const std::string& resume,
                   const std::string& method, const std::string& band, bool unfreeze) {
    RunConfig cfg = resolve_config(g);
    flags.apply(cfg.stage2);
    if (!method.empty()) cfg.model.method = hdn::conditioner::method_from_string(method);
    if (!band.empty()) cfg.stage2_options.band = hdn::config::band_from_string(band);
    if (unfreeze) cfg.stage2_options.freeze_specnet = false;
    cfg.model.resolve();
    cfg.validate();
    const fs::path manifest = manifest_flag.empty() ? cfg.data_dir / "manifest.jsonl" : fs::path(manifest_flag);
    const fs::path spec_path = spec_flag.empty() ? cfg.ckpt_dir / "specnet.ckpt" : fs::path(spec_flag);
    const fs::path out = out_flag.empty() ? cfg.ckpt_dir / "hybrid.ckpt" : fs::path(out_flag);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    Log log(g.quiet);
    auto pairs = hdn::training::load_pairs(manifest);
    log.event("data_loaded", {{"manifest", manifest.string()}, {"pairs", pairs.size()}});
    write_snapshot(beside(out), cfg,
                   {{"command", "train-full"}, {"manifest", manifest.string()}, {"spec_ckpt", spec_path.string()},
                    {"resume", resume}});
    std::optional<hdn::training::HybridTrainer> trainer;
    if (resume.empty()) {
        auto spec = hdn::training::load_specnet_any(hdn::training::load_checkpoint(spec_path));
        if (!(spec.config == cfg.model.specnet)) {
            log.event("warning", {{"message", "spectrogram denoiser config taken from " + spec_path.string()}});
        }
        trainer.emplace(hdn::conditioner::HybridModel::from_specnet(std::move(spec), cfg.model, cfg.seed),
                        std::move(pairs), trainer_options(cfg.stage2, cfg, out), cfg.stage2_options);
    } else {
        trainer.emplace(hdn::training::HybridTrainer::resume(hdn::training::load_checkpoint(resume), std::move(pairs),
                                                             out.string() + ".diverged"));
    }
    run_training(*trainer, cfg.stage2, out, log, "hybrid");
    return 0;
}

int cmd_denoise(const Globals& g, const std::string& in, const std::string& out_flag, const std::string& ckpt_flag,
                const std::string& format) {
    RunConfig cfg = resolve_config(g);
    cfg.validate();
    const fs::path ckpt = ckpt_flag.empty() ? cfg.ckpt_dir / "hybrid.ckpt" : fs::path(ckpt_flag);
    Log log(g.quiet);
    const auto model = load_hybrid_file(ckpt);
    const auto noisy = hdn::data::read_wav(in);
    if (noisy.sample_rate != cfg.data.sample_rate) {
        throw std::invalid_argument(in + ": sample rate " + std::to_string(noisy.sample_rate) + " Hz, expected " +
                                    std::to_string(cfg.data.sample_rate));
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto clean = model.denoise(noisy);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const fs::path out(out_flag);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    hdn::data::write_wav(out, clean, format == "pcm16" ? hdn::data::WavFormat::Pcm16 : hdn::data::WavFormat::Float32);
    write_snapshot(beside(out), cfg, {{"command", "denoise"}, {"in", in}, {"ckpt", ckpt.string()}});
    log.event("denoised", {{"in", in}, {"out", out.string()}, {"seconds", noisy.seconds()}, {"wall_s", wall}});
    return 0;
}

int cmd_stream(const Globals& g, const std::string& ckpt_flag, std::size_t chunk) {
    RunConfig cfg = resolve_config(g);
    cfg.validate();
    if (chunk < 1) throw std::invalid_argument("--chunk must be >= 1");
    const fs::path ckpt = ckpt_flag.empty() ? cfg.ckpt_dir / "hybrid.ckpt" : fs::path(ckpt_flag);
    Log log(g.quiet);
    auto model = std::make_shared<const hdn::conditioner::HybridModel>(load_hybrid_file(ckpt));
    auto st = hdn::streaming::stream_open(model, cfg.streaming);
    write_snapshot(cfg.out_dir / "stream.config.json", cfg, {{"command", "stream"}, {"ckpt", ckpt.string()}});
    log.event("stream_open", {{"ckpt", ckpt.string()}, {"block", st.block_size()}});

    std::vector<float> in_buf(chunk), out_buf;
    std::vector<double> samples;
    const auto emit = [&](const std::vector<double>& y) {
        out_buf.assign(y.begin(), y.end());
        if (std::fwrite(out_buf.data(), sizeof(float), out_buf.size(), stdout) != out_buf.size()) {
            throw std::runtime_error("stream: write to stdout failed");
        }
        std::fflush(stdout);
    };
    while (true) {
        const std::size_t n = std::fread(in_buf.data(), sizeof(float), chunk, stdin);
        if (n == 0) break;
        samples.assign(in_buf.begin(), in_buf.begin() + static_cast<std::ptrdiff_t>(n));
        emit(hdn::streaming::stream_push(st, samples));
    }
    if (std::ferror(stdin)) throw std::runtime_error("stream: read from stdin failed");
    emit(hdn::streaming::stream_close(st));
    log.event("stream_close", {{"consumed", st.consumed}, {"emitted", st.emitted}});
    return 0;
}

int cmd_eval(const Globals& g, const std::string& manifest_flag, const std::string& ckpt_flag,
             const std::string& out_flag, const std::string& denoised_dir) {
    RunConfig cfg = resolve_config(g);
    cfg.validate();
    const fs::path manifest = manifest_flag.empty() ? cfg.data_dir / "manifest.jsonl" : fs::path(manifest_flag);
    const fs::path ckpt = ckpt_flag.empty() ? cfg.ckpt_dir / "hybrid.ckpt" : fs::path(ckpt_flag);
    const fs::path out = out_flag.empty() ? cfg.out_dir / "report.json" : fs::path(out_flag);
    Log log(g.quiet);
    const auto c = hdn::training::load_checkpoint(ckpt);
    if (c.kind != "hybrid") throw std::invalid_argument(ckpt.string() + " is not a hybrid checkpoint");
    const auto model = hdn::training::load_hybrid(c);

    hdn::eval::EvalOptions opt = cfg.eval;
    opt.denoised_dir = denoised_dir;
    opt.config_hash = hdn::config::config_hash({{"run", hdn::config::encode(cfg)}, {"model", c.config}});
    const auto report = hdn::eval::evaluate_testset(
        manifest, [&](const hdn::dsp::Waveform& w) { return model.denoise(w); }, opt);
    hdn::eval::write_report(out, report);
    write_snapshot(beside(out), cfg, {{"command", "eval"}, {"manifest", manifest.string()}, {"ckpt", ckpt.string()}});
    log.event("eval_done", {{"report", out.string()}, {"count", report.count}, {"failed", report.failed},
                            {"aggregates", report.aggregates}});
    return 0;
}

int cmd_bench(const Globals& g, const std::string& ckpt_flag, bool random_weights, const std::string& out_flag,
              std::optional<std::size_t> batch, std::optional<double> seconds, std::optional<std::size_t> trials) {
    RunConfig cfg = resolve_config(g);
    if (batch) cfg.rtf.batch = *batch;
    if (seconds) cfg.rtf.seconds = *seconds;
    if (trials) cfg.rtf.trials = *trials;
    cfg.validate();
    Log log(g.quiet);
    const fs::path ckpt = ckpt_flag.empty() ? cfg.ckpt_dir / "hybrid.ckpt" : fs::path(ckpt_flag);
    const auto model =
        random_weights ? hdn::conditioner::HybridModel::init(cfg.model, cfg.seed) : load_hybrid_file(ckpt);
    const fs::path out = out_flag.empty() ? cfg.out_dir / "rtf.json" : fs::path(out_flag);
    log.event("bench_start", {{"batch", cfg.rtf.batch}, {"seconds", cfg.rtf.seconds}, {"trials", cfg.rtf.trials}});
    const auto report = hdn::eval::rtf_benchmark(model, cfg.rtf);
    json j = report.to_json();
    j["source"] = random_weights ? "random" : ckpt.string();
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream(out) << j.dump(2) << '\n';
    write_snapshot(beside(out), cfg, {{"command", "bench-rtf"}});
    std::cout << j["rtf"].dump() << '\n';
    log.event("bench_done", {{"out", out.string()}});
    return 0;
}

int cmd_inspect(const Globals& g, const std::string& ckpt) {
    RunConfig cfg = resolve_config(g);
    const auto c = hdn::training::load_checkpoint(ckpt);
    std::size_t params = 0, moments = 0;
    for (const auto& t : c.tensors) (t.name.rfind("adam.", 0) == 0 ? moments : params) += t.value.size();
    json j{{"path", ckpt},
           {"format_version", c.format_version},
           {"kind", c.kind},
           {"iteration", c.iteration},
           {"tensors", c.tensors.size()},
           {"parameters", params},
           {"optimizer_values", moments},
           {"config", c.config},
           {"optimizer", c.optimizer},
           {"training", c.training}};
    std::cout << j.dump(2) << '\n';
    write_snapshot(cfg.out_dir / "inspect-ckpt.config.json", cfg, {{"command", "inspect-ckpt"}, {"ckpt", ckpt}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    hdn::tune_allocator();
    CLI::App app{"Two-stage speech denoiser: data generation, training, inference, streaming and evaluation"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    std::uint64_t seed = 0;
    app.add_option("-c,--config", g.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--set", g.overrides, "Override a config key, e.g. stage1.optim.lr_max=1e-3")->take_all();
    auto* seed_opt = app.add_option("--seed", seed, "Global seed");
    app.add_flag("-q,--quiet", g.quiet, "Suppress the JSON event log on stderr");

    std::function<int()> action;

    std::string gen_out;
    std::optional<std::size_t> gen_clips;
    std::optional<double> gen_seconds;
    std::optional<std::uint64_t> gen_seed;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic clean/noise/noisy corpus and manifest");
    gen->add_option("--out", gen_out, "Output directory (default paths.data_dir)");
    gen->add_option("--clips", gen_clips, "Number of clips");
    gen->add_option("--seconds", gen_seconds, "Clip duration");
    gen->add_option("--data-seed", gen_seed, "Corpus seed");
    gen->callback([&] { action = [&] { return cmd_gen_data(g, gen_out, gen_clips, gen_seconds, gen_seed); }; });

    StageFlags spec_flags;
    std::string spec_manifest, spec_out, spec_resume;
    auto* ts = app.add_subcommand("train-spec", "Train the spectrogram denoiser (stage 1)");
    spec_flags.add(ts);
    ts->add_option("--manifest", spec_manifest, "Training manifest (default <data_dir>/manifest.jsonl)");
    ts->add_option("--out", spec_out, "Checkpoint path (default <ckpt_dir>/specnet.ckpt)");
    ts->add_option("--resume", spec_resume, "Continue from a training checkpoint");
    ts->callback([&] { action = [&] { return cmd_train_spec(g, spec_flags, spec_manifest, spec_out, spec_resume); }; });

    StageFlags full_flags;
    std::string full_manifest, full_spec, full_out, full_resume, full_method, full_band;
    bool full_unfreeze = false;
    auto* tf = app.add_subcommand("train-full", "Train the waveform stage on top of a spectrogram denoiser (stage 2)");
    full_flags.add(tf);
    tf->add_option("--manifest", full_manifest, "Training manifest (default <data_dir>/manifest.jsonl)");
    tf->add_option("--spec-ckpt", full_spec, "Stage-1 checkpoint (default <ckpt_dir>/specnet.ckpt)");
    tf->add_option("--out", full_out, "Checkpoint path (default <ckpt_dir>/hybrid.ckpt)");
    tf->add_option("--resume", full_resume, "Continue from a training checkpoint");
    tf->add_option("--method", full_method, "Conditioning method")
        ->check(CLI::IsMember({"addition", "concatenation", "film"}));
    tf->add_option("--band", full_band, "Multi-resolution loss band")->check(CLI::IsMember({"full", "high"}));
    tf->add_flag("--unfreeze", full_unfreeze, "Also train the spectrogram denoiser");
    tf->callback([&] {
        action = [&] {
            return cmd_train_full(g, full_flags, full_manifest, full_spec, full_out, full_resume, full_method,
                                  full_band, full_unfreeze);
        };
    });

    std::string dn_in, dn_out, dn_ckpt, dn_format = "float32";
    auto* dn = app.add_subcommand("denoise", "Denoise a mono WAV file");
    dn->add_option("--in", dn_in, "Noisy input WAV")->required()->check(CLI::ExistingFile);
    dn->add_option("--out", dn_out, "Output WAV")->required();
    dn->add_option("--ckpt", dn_ckpt, "Hybrid checkpoint (default <ckpt_dir>/hybrid.ckpt)");
    dn->add_option("--format", dn_format, "Output sample format")->check(CLI::IsMember({"float32", "pcm16"}));
    dn->callback([&] { action = [&] { return cmd_denoise(g, dn_in, dn_out, dn_ckpt, dn_format); }; });

    std::string st_ckpt;
    std::size_t st_chunk = 256;
    auto* st = app.add_subcommand("stream", "Denoise raw float32 16 kHz mono PCM from stdin to stdout");
    st->add_option("--ckpt", st_ckpt, "Hybrid checkpoint with causal models (default <ckpt_dir>/hybrid.ckpt)");
    st->add_option("--chunk", st_chunk, "Samples read from stdin per push");
    st->callback([&] { action = [&] { return cmd_stream(g, st_ckpt, st_chunk); }; });

    std::string ev_manifest, ev_ckpt, ev_out, ev_denoised;
    auto* ev = app.add_subcommand("eval", "Score a checkpoint on a manifest and write a JSON report");
    ev->add_option("--manifest", ev_manifest, "Test manifest (default <data_dir>/manifest.jsonl)");
    ev->add_option("--ckpt", ev_ckpt, "Hybrid checkpoint (default <ckpt_dir>/hybrid.ckpt)");
    ev->add_option("--out", ev_out, "Report path (default <out_dir>/report.json)");
    ev->add_option("--denoised-dir", ev_denoised, "Keep denoised WAVs here");
    ev->callback([&] { action = [&] { return cmd_eval(g, ev_manifest, ev_ckpt, ev_out, ev_denoised); }; });

    std::string rb_ckpt, rb_out;
    bool rb_random = false;
    std::optional<std::size_t> rb_batch, rb_trials;
    std::optional<double> rb_seconds;
    auto* rb = app.add_subcommand("bench-rtf", "Measure real-time factors of the submodules and the full pipeline");
    rb->add_option("--ckpt", rb_ckpt, "Hybrid checkpoint (default <ckpt_dir>/hybrid.ckpt)");
    rb->add_flag("--random", rb_random, "Benchmark the configured model with random weights");
    rb->add_option("--out", rb_out, "Report path (default <out_dir>/rtf.json)");
    rb->add_option("--batch", rb_batch, "Utterances per trial");
    rb->add_option("--seconds", rb_seconds, "Utterance duration");
    rb->add_option("--trials", rb_trials, "Timed trials (>= 3)");
    rb->callback([&] {
        action = [&] { return cmd_bench(g, rb_ckpt, rb_random, rb_out, rb_batch, rb_seconds, rb_trials); };
    });

    std::string ic_ckpt;
    auto* ic = app.add_subcommand("inspect-ckpt", "Print a checkpoint's header as JSON");
    ic->add_option("--ckpt", ic_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
    ic->callback([&] { action = [&] { return cmd_inspect(g, ic_ckpt); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }
    if (seed_opt->count() > 0) g.seed = seed;

    try {
        return action();
    } catch (const hdn::config::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

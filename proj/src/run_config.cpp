#include "hdn/run_config.hpp"

#include <fstream>

namespace hdn::config {

namespace {

json encode(const StageSettings& s) {
    return {{"optim", config::encode(s.optim)},
            {"clip_samples", s.clip_samples},
            {"log_every", s.log_every},
            {"checkpoint_every", s.checkpoint_every}};
}

void decode(const json& j, StageSettings& s, const std::string& where) {
    Fields f(j, where);
    if (const json* o = f.section("optim")) config::decode(*o, s.optim, where + ".optim");
    f.get("clip_samples", s.clip_samples).get("log_every", s.log_every).get("checkpoint_every", s.checkpoint_every);
    f.finish();
}

json encode_eval(const eval::EvalOptions& e) {
    json ext = json::array();
    for (const auto& m : e.external) ext.push_back({{"name", m.name}, {"command", m.command}, {"pattern", m.pattern}});
    return {{"lsd_stft", config::encode(e.lsd_stft)}, {"external", ext}};
}

void decode_eval(const json& j, eval::EvalOptions& e, const std::string& where) {
    Fields f(j, where);
    if (const json* s = f.section("lsd_stft")) config::decode(*s, e.lsd_stft, where + ".lsd_stft");
    if (const json* ext = f.section("external")) {
        if (!ext->is_array()) throw ConfigError(where + ".external: expected an array");
        e.external.clear();
        for (std::size_t i = 0; i < ext->size(); ++i) {
            eval::ExternalMetric m;
            Fields g((*ext)[i], where + ".external[" + std::to_string(i) + "]");
            g.get("name", m.name).get("command", m.command).get("pattern", m.pattern);
            g.finish();
            e.external.push_back(std::move(m));
        }
    }
    f.finish();
}

json encode_rtf(const eval::RtfOptions& r) {
    return {{"batch", r.batch},   {"seconds", r.seconds}, {"sample_rate", r.sample_rate},
            {"trials", r.trials}, {"warmup", r.warmup},   {"seed", r.seed}};
}

void decode_rtf(const json& j, eval::RtfOptions& r, const std::string& where) {
    Fields f(j, where);
    f.get("batch", r.batch).get("seconds", r.seconds).get("sample_rate", r.sample_rate);
    f.get("trials", r.trials).get("warmup", r.warmup).get("seed", r.seed);
    f.finish();
}

json parse_value(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error&) {
        return text;
    }
}

}  // namespace

RunConfig::RunConfig() { model.resolve(); }

void RunConfig::validate() const {
    model.validate();
    stage1.optim.validate();
    stage2.optim.validate();
    stage2_options.resolutions.validate();
    data.validate();
    streaming.validate();
    eval.lsd_stft.validate();
    for (const auto& m : eval.external) m.validate();
    rtf.validate();
    for (const auto* s : {&stage1, &stage2}) {
        if (s->log_every < 1) throw ConfigError("log_every must be >= 1");
    }
}

json encode(const RunConfig& c) {
    return {{"seed", c.seed},
            {"model", config::encode(c.model)},
            {"stage1", encode(c.stage1)},
            {"stage2", encode(c.stage2)},
            {"stage2_options", config::encode(c.stage2_options)},
            {"data", config::encode(c.data)},
            {"streaming", {{"attention_history", c.streaming.attention_history}}},
            {"eval", encode_eval(c.eval)},
            {"rtf", encode_rtf(c.rtf)},
            {"paths", {{"data_dir", c.data_dir.string()}, {"ckpt_dir", c.ckpt_dir.string()}, {"out_dir", c.out_dir.string()}}}};
}

void decode(const json& j, RunConfig& c) {
    if (!j.is_object()) throw ConfigError("config: expected an object at the top level");
    Fields f(j, "config");
    f.get("seed", c.seed);
    if (const json* s = f.section("model")) config::decode(*s, c.model, "model");
    if (const json* s = f.section("stage1")) decode(*s, c.stage1, "stage1");
    if (const json* s = f.section("stage2")) decode(*s, c.stage2, "stage2");
    if (const json* s = f.section("stage2_options")) config::decode(*s, c.stage2_options, "stage2_options");
    if (const json* s = f.section("data")) config::decode(*s, c.data, "data");
    if (const json* s = f.section("streaming")) {
        Fields g(*s, "streaming");
        g.get("attention_history", c.streaming.attention_history);
        g.finish();
    }
    if (const json* s = f.section("eval")) decode_eval(*s, c.eval, "eval");
    if (const json* s = f.section("rtf")) decode_rtf(*s, c.rtf, "rtf");
    if (const json* s = f.section("paths")) {
        Fields g(*s, "paths");
        std::string data_dir = c.data_dir.string(), ckpt_dir = c.ckpt_dir.string(), out_dir = c.out_dir.string();
        g.get("data_dir", data_dir).get("ckpt_dir", ckpt_dir).get("out_dir", out_dir);
        g.finish();
        c.data_dir = data_dir;
        c.ckpt_dir = ckpt_dir;
        c.out_dir = out_dir;
    }
    f.finish();
    c.model.resolve();
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    RunConfig c;
    decode(j, c);
    return c;
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected key=value");
    const std::string key = assignment.substr(0, eq);
    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("override '" + assignment + "': empty key component");
        if (!node->is_object()) throw ConfigError("override '" + assignment + "': '" + part + "' is not inside a section");
        if (dot == std::string::npos) {
            (*node)[part] = parse_value(assignment.substr(eq + 1));
            return;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

}  // namespace hdn::config

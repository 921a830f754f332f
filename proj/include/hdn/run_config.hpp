#pragma once

#include "hdn/config.hpp"
#include "hdn/eval.hpp"
#include "hdn/streaming.hpp"

#include <filesystem>

namespace hdn::config {

struct StageSettings {
    training::OptimConfig optim;
    std::size_t clip_samples = 160000;
    std::size_t log_every = 10;
    std::size_t checkpoint_every = 1000;  // 0 disables intermediate checkpoints
};

struct RunConfig {
    std::uint64_t seed = 0;
    conditioner::HybridConfig model;
    StageSettings stage1{training::stage1_defaults()};
    StageSettings stage2{training::stage2_defaults()};
    training::Stage2Options stage2_options;
    data::CorpusConfig data;
    streaming::StreamConfig streaming;
    eval::EvalOptions eval;
    eval::RtfOptions rtf;
    std::filesystem::path data_dir = "data";
    std::filesystem::path ckpt_dir = "checkpoints";
    std::filesystem::path out_dir = "out";

    RunConfig();
    void validate() const;
};

json encode(const RunConfig& c);
void decode(const json& j, RunConfig& c);

// Parses a config file over the defaults; unknown keys are errors.
RunConfig load_run_config(const std::filesystem::path& path);

// Sets one dotted key, e.g. "stage1.optim.lr_max=1e-3"; the value is parsed as JSON and
// falls back to a plain string.
void apply_override(json& j, const std::string& assignment);

}  // namespace hdn::config

#pragma once

#include "hdn/conditioner.hpp"
#include "hdn/data.hpp"
#include "hdn/losses.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hdn::training {

struct OptimConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lr_max = 2e-4;
    double warmup_ratio = 0.05;
    double grad_clip = 5.0;  // global-norm threshold; 0 disables clipping
    std::size_t total_iters = 1'000'000;
    std::size_t batch = 64;

    void validate() const;
    bool operator==(const OptimConfig&) const = default;
};

OptimConfig stage1_defaults();
OptimConfig stage2_defaults();

// Linear warmup to lr_max over warmup_ratio * total_iters, then half-cosine decay to 0.
double lr_schedule(std::size_t t, const OptimConfig& cfg);

double global_grad_norm(const nn::ParamList<float>& params);

class Adam {
public:
    explicit Adam(OptimConfig cfg = {}) : cfg_(cfg) {}

    // Clips gradients to cfg.grad_clip, applies one update at lr, and returns the
    // gradient norm measured before clipping.
    double step(const nn::ParamList<float>& params, double lr);

    std::uint64_t steps() const noexcept { return steps_; }
    const OptimConfig& config() const noexcept { return cfg_; }

    // First and second moments keyed by parameter name.
    std::map<std::string, nn::Tensor<float>>& first_moments() { return m_; }
    std::map<std::string, nn::Tensor<float>>& second_moments() { return v_; }
    void set_steps(std::uint64_t s) { steps_ = s; }

private:
    OptimConfig cfg_;
    std::uint64_t steps_ = 0;
    std::map<std::string, nn::Tensor<float>> m_, v_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    nn::Tensor<float> value;
};

// On disk: 8-byte magic, u64 little-endian header length, JSON header, then the raw
// little-endian float32 payload of every tensor in header order.
struct Checkpoint {
    std::uint32_t format_version = kCheckpointVersion;
    std::string kind;  // "specnet" or "hybrid"
    nlohmann::json config;
    std::uint64_t iteration = 0;
    std::string rng_state;
    nlohmann::json optimizer = nlohmann::json::object();
    nlohmann::json training = nlohmann::json::object();
    std::vector<NamedTensor> tensors;

    const NamedTensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const specnet::SpecNetModel& m);
Checkpoint make_checkpoint(const conditioner::HybridModel& m);

// Copies tensors into params by name. Missing, extra or misshapen tensors are errors.
void restore_parameters(const Checkpoint& c, const nn::ParamList<float>& params);

specnet::SpecNetModel load_specnet(const Checkpoint& c);
void load_into(const Checkpoint& c, specnet::SpecNetModel& m);  // rejects a different config
conditioner::HybridModel load_hybrid(const Checkpoint& c);

// Accepts either checkpoint kind; the spectrogram denoiser is extracted from a hybrid one.
specnet::SpecNetModel load_specnet_any(const Checkpoint& c);

struct TrainingPair {
    dsp::Waveform clean;
    dsp::Waveform noisy;
};

std::vector<TrainingPair> load_pairs(const std::filesystem::path& manifest_path);

struct IterationLog {
    std::size_t iteration = 0;
    double lr = 0.0;
    double loss = 0.0;
    double grad_norm = 0.0;
    std::map<std::string, double> terms;
};

struct TrainerOptions {
    OptimConfig optim;
    std::size_t clip_samples = 0;  // 0 trains on whole pairs
    std::uint64_t seed = 0;
    std::filesystem::path diagnostic_path;  // written when the loss diverges
};

struct Stage2Options {
    losses::Band band = losses::Band::Full;
    losses::LogNorm log_norm = losses::LogNorm::Waveform;
    bool freeze_specnet = true;
    losses::ResolutionSet resolutions = losses::ResolutionSet::standard();
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TrainerBase {
public:
    virtual ~TrainerBase() = default;

    // One optimizer iteration over a batch at the scheduled learning rate.
    IterationLog step();
    // Same, at a fixed learning rate.
    IterationLog step(double lr);
    std::size_t iteration() const noexcept { return iteration_; }
    const OptimConfig& optim() const noexcept { return options_.optim; }
    Checkpoint checkpoint() const;

protected:
    TrainerBase(std::vector<TrainingPair> pairs, TrainerOptions options, std::size_t hop);

    // Returns the batch-mean loss after accumulating its gradient into the parameters.
    virtual double accumulate(const std::vector<TrainingPair>& batch, std::map<std::string, double>& terms) = 0;
    virtual nn::ParamList<float> trainable() = 0;
    virtual Checkpoint model_checkpoint() const = 0;
    virtual std::size_t min_clip() const = 0;

    void restore(const Checkpoint& c);
    void check_pairs() const;
    std::vector<TrainingPair> draw_batch();

    std::vector<TrainingPair> pairs_;
    TrainerOptions options_;
    Adam adam_;
    std::mt19937_64 rng_;
    std::size_t iteration_ = 0;
    std::size_t hop_;
};

// Stage 1: spectrogram denoiser on the spectrogram loss.
class SpecNetTrainer : public TrainerBase {
public:
    SpecNetTrainer(specnet::SpecNetModel model, std::vector<TrainingPair> pairs, TrainerOptions options);
    // Optimizer settings, clip length and seed come from the checkpoint.
    static SpecNetTrainer resume(const Checkpoint& c, std::vector<TrainingPair> pairs,
                                 std::filesystem::path diagnostic_path = {});

    specnet::SpecNetModel& model() { return model_; }

    // Mean spectrogram loss over whole pairs without updating.
    double evaluate(const std::vector<TrainingPair>& pairs) const;

private:
    double accumulate(const std::vector<TrainingPair>& batch, std::map<std::string, double>& terms) override;
    nn::ParamList<float> trainable() override { return model_.parameters(); }
    Checkpoint model_checkpoint() const override { return make_checkpoint(model_); }
    std::size_t min_clip() const override;

    specnet::SpecNetModel model_;
};

// Stage 2: upsampler, conditioner and U-Net on l1 + multi-resolution STFT loss, fed by the
// spectrogram denoiser's predictions.
class HybridTrainer : public TrainerBase {
public:
    HybridTrainer(conditioner::HybridModel model, std::vector<TrainingPair> pairs, TrainerOptions options,
                  Stage2Options stage2 = {});
    static HybridTrainer resume(const Checkpoint& c, std::vector<TrainingPair> pairs,
                                std::filesystem::path diagnostic_path = {});

    conditioner::HybridModel& model() { return model_; }
    const Stage2Options& stage2() const { return stage2_; }

    double evaluate(const std::vector<TrainingPair>& pairs) const;

private:
    double accumulate(const std::vector<TrainingPair>& batch, std::map<std::string, double>& terms) override;
    nn::ParamList<float> trainable() override;
    Checkpoint model_checkpoint() const override;
    std::size_t min_clip() const override;

    conditioner::HybridModel model_;
    Stage2Options stage2_;
};

}  // namespace hdn::training

#pragma once

#include "hdn/training.hpp"

#include "json.hpp"

#include <set>
#include <stdexcept>
#include <string>

namespace hdn::config {

using nlohmann::json;

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Reads keys out of a JSON object, leaving absent keys at their defaults. finish() rejects
// any key that was never asked for.
class Fields {
public:
    Fields(const json& j, std::string where);

    template <class T>
    Fields& get(const std::string& key, T& out) {
        seen_.insert(key);
        if (auto it = j_.find(key); it != j_.end()) {
            try {
                out = it->template get<T>();
            } catch (const json::exception&) {
                throw ConfigError(where_ + "." + key + ": wrong type");
            }
        }
        return *this;
    }

    // Sub-object or null when absent.
    const json* section(const std::string& key);
    const std::string& where() const { return where_; }
    void finish() const;

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

std::string to_string(dsp::Window w);
std::string to_string(dsp::Framing f);
std::string to_string(conditioner::FilterOrientation o);
std::string to_string(losses::Band b);
std::string to_string(losses::LogNorm n);

dsp::Window window_from_string(const std::string& s);
dsp::Framing framing_from_string(const std::string& s);
conditioner::FilterOrientation orientation_from_string(const std::string& s);
losses::Band band_from_string(const std::string& s);
losses::LogNorm log_norm_from_string(const std::string& s);

json encode(const dsp::StftParams& p);
json encode(const specnet::SpecNetConfig& c);
json encode(const unet::UNetConfig& c);
json encode(const conditioner::UpsamplerConfig& c);
json encode(const conditioner::HybridConfig& c);
json encode(const training::OptimConfig& c);
json encode(const training::Stage2Options& s);
json encode(const data::CorpusConfig& c);

void decode(const json& j, dsp::StftParams& p, const std::string& where = "stft");
void decode(const json& j, specnet::SpecNetConfig& c, const std::string& where = "specnet");
void decode(const json& j, unet::UNetConfig& c, const std::string& where = "unet");
void decode(const json& j, conditioner::UpsamplerConfig& c, const std::string& where = "upsampler");
void decode(const json& j, conditioner::HybridConfig& c, const std::string& where = "model");
void decode(const json& j, training::OptimConfig& c, const std::string& where = "optim");
void decode(const json& j, training::Stage2Options& s, const std::string& where = "stage2");
void decode(const json& j, data::CorpusConfig& c, const std::string& where = "data");

// 64-bit FNV-1a of the compact serialization.
std::uint64_t fnv1a(const std::string& s);
std::string config_hash(const json& j);

}  // namespace hdn::config

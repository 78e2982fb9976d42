#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "cavm/adam.hpp"
#include "cavm/autoregression.hpp"
#include "cavm/codec.hpp"

namespace cavm {

struct LossWeights {
    double l1 = 1.0;
    double adv = 0.01;
    double l2 = 1.0;
    /// Where the autoregression regression loss is measured: "image" (after
    /// decoding), "token" (against f_CE tokens of the target) or "both".
    std::string l2_space = "image";
};

struct OptimizerConfig {
    AdamSettings adam;
    std::size_t batch_size = 1;
};

struct TrainingConfig {
    std::size_t pretrain_steps = 3000;
    std::size_t ar_steps = 1500;
    std::size_t checkpoint_interval = 0; // 0: only at the end
    std::size_t log_interval = 100;
    bool freeze_pretrained = true;
    std::uint64_t seed = 1;
};

struct ModelConfig {
    std::string preset = "toy";
    codec::CodecGeometry geometry;
    ar::ArConfig ar;
    OptimizerConfig optimizer;
    LossWeights loss;
    TrainingConfig training;
    std::size_t tumor_dilation = 2;

    /// Checks every component and the token-width and sequence-length
    /// agreement between the codec and the autoregression streams.
    void validate() const;
};

/// A config file: model settings plus optional dataset and output locations.
struct RunConfig {
    ModelConfig model;
    std::string data_dir;
    std::string out_dir;
};

ModelConfig toy_preset();
ModelConfig paper_preset();
/// Throws ConfigError for names other than "toy" and "paper".
ModelConfig preset(const std::string& name);

nlohmann::json to_json(const ModelConfig& config);
/// Starts from the preset named by "preset" (default "toy") and applies every
/// other key. Unknown keys and wrong types throw ConfigError naming the key.
ModelConfig model_config_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Parses config text; syntax errors report "<source>:<line>:<column>".
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// FNV-1a over the canonical JSON form.
std::uint64_t config_hash(const ModelConfig& config);

} // namespace cavm

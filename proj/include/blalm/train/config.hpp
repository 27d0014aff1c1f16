#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "blalm/layers/layers.hpp"
#include "blalm/mixers/mixer.hpp"
#include "blalm/optim/optimizers.hpp"

namespace blalm::train {

enum class Precision { Float32, Float64 };
std::string to_string(Precision p);
Precision parse_precision(const std::string& text);

struct ModelConfig {
    LayerConfig layer;
    mixers::MixerConfig mixer;
    std::size_t num_layers = 4;
    std::size_t vocab_size = 15000;
    bool tie_embeddings = false;

    void validate() const;
};

struct RunConfig {
    ModelConfig model;
    optim::OptimizerConfig optimizer;
    double peak_lr = 4e-4;
    double warmup_fraction = 0.10;

    std::size_t context_length = 512;
    std::size_t global_batch_size = 64;
    std::size_t micro_batch_size = 8;
    std::size_t epochs = 10;
    std::uint64_t seed = 0;
    Precision precision = Precision::Float32;
    bool deterministic = true;
    bool mask_across_separator = false;
    double validation_fraction = 0.02;
    std::uint64_t max_steps = 0;  // 0: no limit

    std::string train_blocks;       // packed block file
    std::string validation_blocks;  // empty: hold out validation_fraction of train_blocks
    std::string checkpoint_dir = "checkpoints";

    std::vector<std::string> overrides;  // "key=value" as applied, for run metadata

    std::size_t accumulation_steps() const { return global_batch_size / micro_batch_size; }
    void validate() const;  // ConfigError
};

// Parses YAML text; every key must be known. Overrides ("model.num_layers=2")
// are applied to the document before parsing, last one wins.
RunConfig parse_run_config(const std::string& yaml_text, const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// Canonical YAML with every field spelled out; parse_run_config inverts it.
std::string to_yaml(const RunConfig& cfg);
std::string model_yaml(const ModelConfig& model, Precision precision);

// FNV-1a of model_yaml: checkpoints refuse to load into a different architecture.
std::uint64_t model_digest(const ModelConfig& model, Precision precision);

}  // namespace blalm::train

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "blalm/optim/optimizers.hpp"
#include "blalm/train/config.hpp"
#include "blalm/train/model.hpp"

namespace blalm::train {

// Where training stands; enough to resume mid-epoch.
struct TrainerState {
    std::size_t epoch = 0;          // epoch in progress (0-based)
    std::size_t batch = 0;          // next global batch within that epoch
    std::uint64_t global_step = 0;  // optimizer steps taken
    double epoch_loss_sum = 0.0;    // losses of the batches already done in this epoch
    std::uint64_t rng_seed = 0;
    std::uint64_t rng_counter = 0;
    double best_val_perplexity = 0.0;  // 0: none yet
    std::size_t best_epoch = 0;
};

// Layout: "BLCK", u32 version, u64 model digest, u32 scalar bytes, then
// length-prefixed (u64) run config YAML and trainer-state JSON, a u64 tensor
// count and per tensor: u64 name length, name, u32 rank, u64 dims, u64 byte
// length, little-endian values. Names are "param/<name>" and "optim/<state>".
struct Checkpoint {
    std::uint32_t version = 1;
    std::uint64_t digest = 0;
    std::uint32_t scalar_bytes = 4;
    std::string config_yaml;
    RunConfig config;
    TrainerState state;
    struct Blob {
        Shape shape;
        std::vector<unsigned char> bytes;
    };
    std::map<std::string, Blob> tensors;
};

template <typename S>
void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, const Model<S>& model,
                     const optim::Optimizer<S>* optimizer, const TrainerState& state);

// InputError on unreadable or malformed files.
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies parameters (and optimizer state when given) out of a checkpoint.
// ConfigError starting "config mismatch" when the architecture or precision
// differs from the checkpoint's.
template <typename S>
void restore_checkpoint(const Checkpoint& ck, Model<S>& model, optim::Optimizer<S>* optimizer);

}  // namespace blalm::train

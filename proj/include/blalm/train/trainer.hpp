#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "blalm/data/packing.hpp"
#include "blalm/optim/optimizers.hpp"
#include "blalm/optim/schedule.hpp"
#include "blalm/train/checkpoint.hpp"
#include "blalm/train/metrics.hpp"
#include "blalm/train/model.hpp"

namespace blalm::train {

struct EvalResult {
    double mean_loss = 0.0;
    double perplexity = 0.0;  // exp(mean_loss)
    std::uint64_t positions = 0;
};

// Mean next-token cross-entropy over every position of every block, without
// recording a graph.
template <typename S>
EvalResult evaluate_perplexity(Model<S>& model, const data::PackedBlocks& blocks, bool mask_separator = false);

struct BlockSplit {
    data::PackedBlocks train;
    data::PackedBlocks validation;
};

// Seeded hold-out: round(fraction * N) blocks (at least one when fraction > 0
// and N >= 2) go to validation; both parts keep their original order.
BlockSplit holdout_split(const data::PackedBlocks& blocks, double fraction, std::uint64_t seed);

struct TrainResult {
    std::vector<EpochMetrics> epochs;
    std::vector<double> step_losses;  // losses of the steps run by this call
    std::uint64_t global_step = 0;
    bool finished = false;  // false when stopped by max_steps
    std::filesystem::path last_checkpoint;
};

template <typename S>
class Trainer {
public:
    // Throws ConfigError when the training set cannot fill one global batch or
    // the block length differs from context_length.
    Trainer(RunConfig cfg, data::PackedBlocks train, data::PackedBlocks validation, MetricsLog* log = nullptr);

    // Continues from a checkpoint of the same architecture.
    void resume(const Checkpoint& ck);

    // Trains until all epochs are done or cfg.max_steps optimizer steps have
    // been taken in total. Saves a checkpoint after every epoch (and at a
    // max_steps stop). A non-finite loss raises DivergenceError naming the step
    // and the last good checkpoint.
    TrainResult run();

    void save(const std::filesystem::path& path) const;

    Model<S>& model() noexcept { return model_; }
    const TrainerState& state() const noexcept { return state_; }
    const RunConfig& config() const noexcept { return cfg_; }
    std::size_t steps_per_epoch() const noexcept { return steps_per_epoch_; }
    std::uint64_t total_steps() const noexcept { return schedule_.total_steps; }
    const optim::Schedule& schedule() const noexcept { return schedule_; }

private:
    double train_step(const std::vector<std::size_t>& order, std::size_t batch);
    std::vector<std::size_t> epoch_order(std::size_t epoch) const;

    RunConfig cfg_;
    data::PackedBlocks train_;
    data::PackedBlocks validation_;
    MetricsLog* log_;
    Model<S> model_;
    optim::Optimizer<S> optimizer_;
    optim::Schedule schedule_;
    std::size_t steps_per_epoch_ = 0;
    TrainerState state_;
    std::vector<double> epoch_val_perplexity_;
    std::filesystem::path last_checkpoint_;
};

}  // namespace blalm::train

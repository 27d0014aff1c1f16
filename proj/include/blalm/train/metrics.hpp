#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "blalm/train/config.hpp"
#include "blalm/train/model.hpp"

namespace blalm::train {

inline constexpr const char* kMetricsSchema = "blalm.metrics/1";

struct EpochMetrics {
    std::size_t epoch = 0;  // 1-based
    std::uint64_t step = 0;
    double train_loss = 0.0;  // mean over the epoch's optimizer steps
    double val_loss = 0.0;
    double val_perplexity = 0.0;
    std::uint64_t val_positions = 0;
    std::vector<AlphaEntry> alpha;
    double seconds = 0.0;
    std::string checkpoint;
};

// Append-only JSON lines, one object per record, each tagged with the schema
// and a "type" (run, step, epoch, warning, eval).
class MetricsLog {
public:
    MetricsLog() = default;  // keeps records in memory only
    explicit MetricsLog(const std::filesystem::path& path);

    // `initial_alpha` is the trace before the first step (epoch 0).
    void run_start(const RunConfig& cfg, std::uint64_t total_steps, std::size_t train_blocks,
                   std::size_t validation_blocks, const std::vector<AlphaEntry>& initial_alpha);
    void step(std::uint64_t step, std::size_t epoch, double lr, double train_loss);
    void epoch(const EpochMetrics& m);
    void warning(const std::string& what);
    // Free-form record; `json_object` must be a JSON object text.
    void raw(const std::string& type, const std::string& json_object);

    const std::vector<std::string>& lines() const noexcept { return lines_; }

private:
    void emit(std::string line);

    std::ofstream out_;
    std::vector<std::string> lines_;
};

}  // namespace blalm::train

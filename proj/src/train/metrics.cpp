#include "blalm/train/metrics.hpp"

#include <nlohmann/json.hpp>

#include "blalm/core/errors.hpp"
#include "blalm/core/rng.hpp"

namespace blalm::train {

using nlohmann::json;

namespace {

json alpha_json(const std::vector<AlphaEntry>& trace) {
    json out = json::array();
    for (const auto& a : trace) {
        out.push_back({{"layer", a.layer}, {"alpha", a.raw}, {"effective", a.effective}});
    }
    return out;
}

}  // namespace

MetricsLog::MetricsLog(const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    out_.open(path, std::ios::app);
    if (!out_) {
        throw InputError("cannot open metrics file " + path.string());
    }
}

void MetricsLog::emit(std::string line) {
    if (out_.is_open()) {
        out_ << line << '\n';
        out_.flush();
    }
    lines_.push_back(std::move(line));
}

void MetricsLog::run_start(const RunConfig& cfg, std::uint64_t total_steps, std::size_t train_blocks,
                           std::size_t validation_blocks, const std::vector<AlphaEntry>& initial_alpha) {
    json j = {{"schema", kMetricsSchema},
              {"type", "run"},
              {"config", to_yaml(cfg)},
              {"overrides", cfg.overrides},
              {"seed", cfg.seed},
              {"rng", std::string(SeededRng::kAlgorithm)},
              {"total_steps", total_steps},
              {"train_blocks", train_blocks},
              {"validation_blocks", validation_blocks},
              {"alpha", alpha_json(initial_alpha)}};
    emit(j.dump());
}

void MetricsLog::step(std::uint64_t step, std::size_t epoch, double lr, double train_loss) {
    json j = {{"schema", kMetricsSchema}, {"type", "step"}, {"step", step},
              {"epoch", epoch},           {"lr", lr},       {"train_loss", train_loss}};
    emit(j.dump());
}

void MetricsLog::epoch(const EpochMetrics& m) {
    json j = {{"schema", kMetricsSchema},
              {"type", "epoch"},
              {"epoch", m.epoch},
              {"step", m.step},
              {"train_loss", m.train_loss},
              {"val_loss", m.val_loss},
              {"val_perplexity", m.val_perplexity},
              {"val_positions", m.val_positions},
              {"alpha", alpha_json(m.alpha)},
              {"seconds", m.seconds},
              {"checkpoint", m.checkpoint}};
    emit(j.dump());
}

void MetricsLog::warning(const std::string& what) {
    emit(json{{"schema", kMetricsSchema}, {"type", "warning"}, {"message", what}}.dump());
}

void MetricsLog::raw(const std::string& type, const std::string& json_object) {
    auto j = json::parse(json_object);
    j["schema"] = kMetricsSchema;
    j["type"] = type;
    emit(j.dump());
}

}  // namespace blalm::train

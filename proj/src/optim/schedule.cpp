#include "blalm/optim/schedule.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "blalm/core/errors.hpp"

namespace blalm::optim {

std::uint64_t Schedule::warmup_steps() const {
    return static_cast<std::uint64_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
}

void Schedule::validate() const {
    if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) {
        throw ConfigError("schedule: peak_lr must be positive");
    }
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) {
        throw ConfigError("schedule: warmup_fraction must lie in (0, 1)");
    }
    if (total_steps == 0) {
        throw ConfigError("schedule: total_steps must be positive");
    }
}

double cosine_lr(std::uint64_t step, const Schedule& s) {
    s.validate();
    if (step > s.total_steps) {
        throw InputError("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(s.total_steps) +
                         "]");
    }
    const std::uint64_t warmup = s.warmup_steps();
    if (step < warmup) {
        return s.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
    }
    if (step == s.total_steps) {
        return 0.0;
    }
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(s.total_steps - warmup);
    return s.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace blalm::optim

#pragma once

#include <cstdint>

namespace blalm::optim {

struct Schedule {
    double peak_lr = 4e-4;
    std::uint64_t total_steps = 1;
    double warmup_fraction = 0.10;

    // W = round(warmup_fraction * total_steps)
    std::uint64_t warmup_steps() const;
    void validate() const;  // ConfigError
};

// Linear ramp 0 -> peak over [0, W], then half-cosine down to 0 at total_steps.
// Throws InputError when step > total_steps.
double cosine_lr(std::uint64_t step, const Schedule& schedule);

}  // namespace blalm::optim

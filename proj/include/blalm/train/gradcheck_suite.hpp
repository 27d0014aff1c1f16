#pragma once

#include <optional>
#include <string>
#include <vector>

#include "blalm/mixers/mixer.hpp"

namespace blalm::train {

struct GradcheckRow {
    std::string family;
    std::size_t d = 0;
    std::size_t steps = 0;
    double max_rel_error = 0.0;
    std::string worst_parameter;
    double analytic = 0.0;  // gradients at the worst element
    double numeric = 0.0;
    bool passed = false;
};

struct GradcheckOptions {
    std::vector<std::size_t> widths{4, 8};
    std::vector<std::size_t> lengths{1, 3, 9};
    double epsilon = 3e-5;  // balances rounding noise against truncation on the exp gates
    double tolerance = 1e-5;
    std::uint64_t seed = 7;
    std::string corrupt;  // family whose output gradient is scaled by 1.5 (negative control)
    std::vector<std::string> only;  // empty: every family
    // Adds a "configured_mixer" family: the full mixer with these settings
    // (window capped at 2 and feature width derived, so small d and T exercise them).
    std::optional<mixers::MixerConfig> configured_mixer;
};

// Names of the checked op families in report order.
std::vector<std::string> gradcheck_families();

// 64-bit finite-difference check of every family at every (d, T), on the
// projected loss sum(out * R) with a fixed random R.
std::vector<GradcheckRow> run_gradcheck_suite(const GradcheckOptions& opt = {});

}  // namespace blalm::train

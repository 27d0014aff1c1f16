#pragma once

#include <functional>
#include <string>
#include <vector>

#include "blalm/core/autograd.hpp"

namespace blalm {

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;  // gradient values at worst_index
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed() const noexcept { return max_rel_error <= tolerance; }
};

// `fn` must rebuild its graph from the current parameter values on every call
// (bind them with Var::bind) and return a single-element loss.
//
// Compares reverse-mode gradients to central differences
// (f(x+eps) - f(x-eps)) / (2 eps) elementwise with relative error
// |g - d| / max(|g|, |d|, 1e-8). Parameters are restored afterwards.
GradCheckReport grad_check(const std::function<Var<double>()>& fn, const std::vector<Parameter<double>*>& params,
                           double epsilon, double tolerance);

}  // namespace blalm

#include "blalm/core/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace blalm {

namespace {

double evaluate(const std::function<Var<double>()>& fn) {
    NoGradGuard no_grad;
    const Var<double> out = fn();
    if (out.value().size() != 1) {
        throw ContractViolation("grad_check: function must return a single element, got " +
                                shape_string(out.shape()));
    }
    const double v = out.value()[0];
    if (!std::isfinite(v)) {
        throw DivergenceError("grad_check: divergent function", 0);
    }
    return v;
}

}  // namespace

GradCheckReport grad_check(const std::function<Var<double>()>& fn, const std::vector<Parameter<double>*>& params,
                           double epsilon, double tolerance) {
    if (!(epsilon > 0.0)) {
        throw ContractViolation("grad_check: epsilon must be positive");
    }
    for (auto* p : params) {
        p->zero_grad();
    }
    const Var<double> loss = fn();
    if (loss.value().size() != 1) {
        throw ContractViolation("grad_check: function must return a single element");
    }
    if (!std::isfinite(loss.value()[0])) {
        throw DivergenceError("grad_check: divergent function", 0);
    }
    backward(loss, 1.0);

    GradCheckReport report;
    report.tolerance = tolerance;
    for (auto* p : params) {
        if (p->grad.shape() != p->value.shape()) {
            throw ContractViolation("grad_check: gradient shape mismatch for " + p->name);
        }
        GradCheckEntry entry;
        entry.name = p->name;
        const Tensor<double> analytic = p->grad;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double original = p->value[i];
            p->value[i] = original + epsilon;
            const double plus = evaluate(fn);
            p->value[i] = original - epsilon;
            const double minus = evaluate(fn);
            p->value[i] = original;

            const double numeric = (plus - minus) / (2.0 * epsilon);
            const double g = analytic[i];
            const double rel = std::abs(g - numeric) / std::max({std::abs(g), std::abs(numeric), 1e-8});
            if (i == 0 || rel > entry.max_rel_error) {
                entry.max_rel_error = rel;
                entry.worst_index = i;
                entry.analytic = g;
                entry.numeric = numeric;
            }
        }
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace blalm

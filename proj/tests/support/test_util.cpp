#include "test_util.hpp"

#include "blalm/core/ops.hpp"

namespace blalm::testing {

GradCheckReport check_projected(CheckSet& set, const std::function<Var<double>()>& forward, std::uint64_t seed,
                                double epsilon, double tolerance) {
    Tensor<double> projection;
    auto fn = [&]() {
        const Var<double> out = forward();
        if (projection.shape() != out.shape()) {
            SeededRng rng(seed);
            projection = random_tensor(out.shape(), rng);
        }
        return ops::sum(ops::mul(out, Var<double>::constant(projection)));
    };
    return grad_check(fn, set.pointers(), epsilon, tolerance);
}

}  // namespace blalm::testing

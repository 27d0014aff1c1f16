#include "blalm/mixers/feature_maps.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "blalm/core/ops.hpp"

namespace blalm::mixers {

template <typename S>
Var<S> hedgehog_map(const Var<S>& x, const Var<S>& w_phi) {
    const auto& shape = x.shape();
    if (w_phi.value().rank() != 2 || w_phi.value().cols() < 1) {
        throw ConfigError("hedgehog_map: feature matrix must be [d_h, f] with f >= 1, got " +
                          shape_string(w_phi.shape()));
    }
    if (shape.empty() || shape.back() != w_phi.value().rows()) {
        throw ContractViolation("hedgehog_map: input " + shape_string(shape) + " vs feature matrix " +
                                shape_string(w_phi.shape()));
    }
    const std::size_t d = shape.back();
    const std::size_t rows = d == 0 ? 0 : x.value().size() / d;
    const auto z = ops::matmul(ops::reshape(x, {rows, d}), w_phi);
    const auto features = ops::softmax(ops::concat_cols<S>({z, ops::neg(z)}), 1);
    Shape out_shape = shape;
    out_shape.back() = 2 * w_phi.value().cols();
    return ops::reshape(features, out_shape);
}

namespace {

// tanh whose result stays strictly inside (-1, 1): for |a| beyond ~19 (double)
// or ~9 (float) the rounded tanh is exactly +-1, so step one ulp inwards.
template <typename S>
Var<S> open_tanh(const Var<S>& a) {
    Tensor<S> out(a.shape());
    const S edge = std::nextafter(S{1}, S{0});
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::clamp(std::tanh(a.value()[i]), -edge, edge);
    }
    return make_op<S>(std::move(out), {a}, [](Node<S>& self) {
        auto& p = self.parent(0);
        if (!p.requires_grad) {
            return;
        }
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * (S{1} - self.value[i] * self.value[i]);
        }
    });
}

}  // namespace

template <typename S>
Var<S> combine(const Var<S>& h_la, const Var<S>& h_swa, CombineMode mode, const Var<S>& alpha) {
    if (h_la.shape() != h_swa.shape()) {
        throw ContractViolation("combine: shape mismatch " + shape_string(h_la.shape()) + " vs " +
                                shape_string(h_swa.shape()));
    }
    switch (mode) {
        case CombineMode::FixedHalf:
            return ops::add(ops::scale(h_la, 0.5), ops::scale(h_swa, 0.5));
        case CombineMode::DynMod:
            return ops::add(h_la, ops::scale_by(h_swa, alpha));
        case CombineMode::DynModBounded:
            return ops::add(h_la, ops::scale_by(h_swa, open_tanh(alpha)));
    }
    throw ContractViolation("combine: unknown mode");
}

template Var<float> hedgehog_map(const Var<float>&, const Var<float>&);
template Var<double> hedgehog_map(const Var<double>&, const Var<double>&);
template Var<float> combine(const Var<float>&, const Var<float>&, CombineMode, const Var<float>&);
template Var<double> combine(const Var<double>&, const Var<double>&, CombineMode, const Var<double>&);

}  // namespace blalm::mixers

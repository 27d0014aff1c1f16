#pragma once

#include "blalm/core/autograd.hpp"

namespace blalm::mixers {

// Hedgehog map: softmax(concat(x W, -x W)) over the trailing axis.
// x is [..., d_h], W is [d_h, f]; the result is [..., 2f], positive, rows sum to 1.
template <typename S>
Var<S> hedgehog_map(const Var<S>& x, const Var<S>& w_phi);

enum class CombineMode { FixedHalf, DynMod, DynModBounded };

// FixedHalf:     (a + b) / 2
// DynMod:        a + alpha * b
// DynModBounded: a + tanh(alpha) * b
// `alpha` holds one element and is ignored for FixedHalf.
template <typename S>
Var<S> combine(const Var<S>& h_la, const Var<S>& h_swa, CombineMode mode, const Var<S>& alpha);

}  // namespace blalm::mixers

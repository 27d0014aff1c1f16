#pragma once

#include <cstddef>

#include "blalm/core/autograd.hpp"

namespace blalm::mixers {

// Softmax attention over q, k, v laid out as [T, heads * head_dim]. Position t
// attends to s in [t - window + 1, t]; window 0 means the whole prefix.
// Scores are scaled by 1/sqrt(head_dim).
template <typename S>
Var<S> multihead_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, std::size_t num_heads,
                           std::size_t window);

// [T, heads, head_dim] entry points. RoPE must already be applied.
template <typename S>
Var<S> causal_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v);

// Throws ConfigError when window < 1.
template <typename S>
Var<S> swa_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, std::size_t window);

}  // namespace blalm::mixers

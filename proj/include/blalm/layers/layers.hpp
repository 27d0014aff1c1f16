#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "blalm/core/autograd.hpp"

namespace blalm {

struct LayerConfig {
    std::size_t hidden_size = 128;
    std::size_t intermediate_size = 192;
    std::size_t num_heads = 4;
    double rope_base = 10000.0;
    std::size_t short_conv_kernel = 4;
    double norm_epsilon = 1e-6;

    std::size_t head_dim() const noexcept { return num_heads == 0 ? 0 : hidden_size / num_heads; }

    // Throws ConfigError: hidden size must split evenly into heads of even width.
    void validate() const;
};

namespace layers {

// x / sqrt(mean(x^2) + eps) * gain over the trailing axis.
template <typename S>
Var<S> rmsnorm(const Var<S>& x, const Var<S>& gain, double eps);

// (silu(x W_gate) * (x W_up)) W_down, no biases.
template <typename S>
Var<S> swiglu_ffn(const Var<S>& x, const Var<S>& w_gate, const Var<S>& w_up, const Var<S>& w_down);

// Rotates pairs (2j, 2j+1) of every head by pos * base^(-2j/head_dim).
// x is [T, heads * head_dim] or [T, heads, head_dim].
template <typename S>
Var<S> rope_apply(const Var<S>& x, std::span<const std::size_t> positions, std::size_t num_heads, double base);

// Causal depthwise convolution, x [T, d], kernel [d, k]:
// out[t, c] = sum_j kernel[c, j] * x[t - k + 1 + j, c], reading zeros before t = 0.
template <typename S>
Var<S> short_conv(const Var<S>& x, const Var<S>& kernel);

template <typename S>
Var<S> embed(std::span<const std::int32_t> ids, const Var<S>& table);

// h [T, d] times weight^T for weight [V, d]; pass the embedding table when tied.
template <typename S>
Var<S> lm_head(const Var<S>& h, const Var<S>& weight);

}  // namespace layers
}  // namespace blalm

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "blalm/core/autograd.hpp"

// Differentiable operation vocabulary. Every op validates shapes and throws
// ContractViolation on mismatch. Matrices are row-major 2-axis tensors.
namespace blalm::ops {

template <typename S> Var<S> add(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> sub(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> mul(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> div(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> maximum(const Var<S>& a, const Var<S>& b);

template <typename S> Var<S> scale(const Var<S>& a, double factor);
template <typename S> Var<S> add_scalar(const Var<S>& a, double value);
template <typename S> Var<S> neg(const Var<S>& a);
// a * s where s holds a single element.
template <typename S> Var<S> scale_by(const Var<S>& a, const Var<S>& s);

template <typename S> Var<S> exp(const Var<S>& a);
template <typename S> Var<S> tanh(const Var<S>& a);
template <typename S> Var<S> sigmoid(const Var<S>& a);
template <typename S> Var<S> silu(const Var<S>& a);
template <typename S> Var<S> abs(const Var<S>& a);
template <typename S> Var<S> reciprocal(const Var<S>& a);
// max(a, floor) elementwise.
template <typename S> Var<S> clamp_min(const Var<S>& a, double floor);

template <typename S> Var<S> sum(const Var<S>& a);
template <typename S> Var<S> mean(const Var<S>& a);

// op(a) * op(b) with optional transposes of either operand.
template <typename S> Var<S> matmul(const Var<S>& a, const Var<S>& b, bool transpose_a = false, bool transpose_b = false);
template <typename S> Var<S> transpose(const Var<S>& a);
template <typename S> Var<S> reshape(const Var<S>& a, Shape shape);

template <typename S> Var<S> slice_cols(const Var<S>& a, std::size_t start, std::size_t count);
template <typename S> Var<S> slice_rows(const Var<S>& a, std::size_t start, std::size_t count);
template <typename S> Var<S> concat_cols(const std::vector<Var<S>>& parts);
template <typename S> Var<S> concat_rows(const std::vector<Var<S>>& parts);

template <typename S> Var<S> softmax(const Var<S>& a, std::size_t axis);

// Row lookup: out[i] = table[ids[i]].
template <typename S> Var<S> gather_rows(const Var<S>& table, std::span<const std::int32_t> ids);

// Mean next-token cross-entropy over rows whose weight is nonzero.
// logits: [T, V]; targets: T ids; weights: empty (all ones) or T entries.
template <typename S>
Var<S> cross_entropy(const Var<S>& logits, std::span<const std::int32_t> targets,
                     std::span<const std::uint8_t> weights = {});

// Plain-tensor matrix product shared by ops that need it outside the graph.
template <typename S>
Tensor<S> matmul_values(const Tensor<S>& a, const Tensor<S>& b, bool transpose_a = false, bool transpose_b = false);

}  // namespace blalm::ops

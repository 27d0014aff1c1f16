#include "blalm/mixers/attention.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "blalm/core/ops.hpp"
#include "core/eigen_view.hpp"

namespace blalm::mixers {

using detail::block_view;
using detail::RowMatrix;

template <typename S>
Var<S> multihead_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, std::size_t num_heads,
                           std::size_t window) {
    const auto& qv = q.value();
    detail::require_rank(qv.shape(), 2, "attention");
    if (k.shape() != qv.shape() || v.shape() != qv.shape()) {
        throw ContractViolation("attention: q " + shape_string(qv.shape()) + ", k " + shape_string(k.shape()) +
                                ", v " + shape_string(v.shape()) + " must agree");
    }
    if (num_heads == 0 || qv.cols() % num_heads != 0) {
        throw ContractViolation("attention: width " + std::to_string(qv.cols()) + " not divisible by heads");
    }
    const std::size_t steps = qv.rows();
    const std::size_t hd = qv.cols() / num_heads;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
    const auto lo = [window](std::size_t t) { return (window == 0 || t + 1 < window) ? std::size_t{0} : t + 1 - window; };

    Tensor<S> out(qv.shape());
    // probabilities per head, rows t, cols s (zero outside the window)
    auto probs = std::make_shared<std::vector<RowMatrix<S>>>(num_heads);
    for (std::size_t h = 0; h < num_heads; ++h) {
        const auto qh = block_view(qv, h * hd, hd);
        const auto kh = block_view(k.value(), h * hd, hd);
        const auto vh = block_view(v.value(), h * hd, hd);
        RowMatrix<S> p = (qh * kh.transpose()) * scale;
        for (std::size_t t = 0; t < steps; ++t) {
            const std::size_t s0 = lo(t);
            S mx = -std::numeric_limits<S>::infinity();
            for (std::size_t s = s0; s <= t; ++s) {
                mx = std::max(mx, p(t, s));
            }
            S total = 0;
            for (std::size_t s = 0; s < steps; ++s) {
                if (s < s0 || s > t) {
                    p(t, s) = 0;
                } else {
                    p(t, s) = std::exp(p(t, s) - mx);
                    total += p(t, s);
                }
            }
            for (std::size_t s = s0; s <= t; ++s) {
                p(t, s) /= total;
            }
        }
        block_view(out, h * hd, hd).noalias() = p * vh;
        (*probs)[h] = std::move(p);
    }
    return make_op<S>(std::move(out), {q, k, v}, [probs, num_heads, hd, scale](Node<S>& self) {
        auto& pq = self.parent(0);
        auto& pk = self.parent(1);
        auto& pv = self.parent(2);
        for (std::size_t h = 0; h < num_heads; ++h) {
            const auto& p = (*probs)[h];
            const auto dout = block_view(self.grad, h * hd, hd);
            if (pv.requires_grad) {
                block_view(pv.grad_buffer(), h * hd, hd).noalias() += p.transpose() * dout;
            }
            if (!pq.requires_grad && !pk.requires_grad) {
                continue;
            }
            RowMatrix<S> ds = dout * block_view(pv.value, h * hd, hd).transpose();
            // softmax backward row by row: ds = p * (dp - sum(dp * p))
            const Eigen::Matrix<S, Eigen::Dynamic, 1> dots = (ds.array() * p.array()).rowwise().sum();
            ds = (p.array() * (ds.array().colwise() - dots.array())).matrix() * scale;
            if (pq.requires_grad) {
                block_view(pq.grad_buffer(), h * hd, hd).noalias() += ds * block_view(pk.value, h * hd, hd);
            }
            if (pk.requires_grad) {
                block_view(pk.grad_buffer(), h * hd, hd).noalias() += ds.transpose() * block_view(pq.value, h * hd, hd);
            }
        }
    });
}

namespace {

template <typename S>
Var<S> attention_rank3(const Var<S>& q, const Var<S>& k, const Var<S>& v, std::size_t window) {
    detail::require_rank(q.shape(), 3, "attention");
    const Shape shape = q.shape();
    const Shape flat{shape[0], shape[1] * shape[2]};
    if (k.shape() != shape || v.shape() != shape) {
        throw ContractViolation("attention: q, k, v shapes must agree");
    }
    auto out = multihead_attention(ops::reshape(q, flat), ops::reshape(k, flat), ops::reshape(v, flat), shape[1],
                                   window);
    return ops::reshape(out, shape);
}

}  // namespace

template <typename S>
Var<S> causal_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v) {
    return attention_rank3(q, k, v, 0);
}

template <typename S>
Var<S> swa_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, std::size_t window) {
    if (window < 1) {
        throw ConfigError("swa_attention: window must be >= 1");
    }
    return attention_rank3(q, k, v, window);
}

#define BLALM_INSTANTIATE_ATTENTION(S)                                                                          \
    template Var<S> multihead_attention(const Var<S>&, const Var<S>&, const Var<S>&, std::size_t, std::size_t); \
    template Var<S> causal_attention(const Var<S>&, const Var<S>&, const Var<S>&);                              \
    template Var<S> swa_attention(const Var<S>&, const Var<S>&, const Var<S>&, std::size_t);

BLALM_INSTANTIATE_ATTENTION(float)
BLALM_INSTANTIATE_ATTENTION(double)

#undef BLALM_INSTANTIATE_ATTENTION

}  // namespace blalm::mixers

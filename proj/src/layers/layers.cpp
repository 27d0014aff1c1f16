#include "blalm/layers/layers.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "blalm/core/ops.hpp"

namespace blalm {

void LayerConfig::validate() const {
    if (hidden_size == 0 || num_heads == 0 || intermediate_size == 0) {
        throw ConfigError("hidden_size, num_heads and intermediate_size must be positive");
    }
    if (hidden_size % num_heads != 0) {
        throw ConfigError("hidden_size " + std::to_string(hidden_size) + " not divisible by num_heads " +
                          std::to_string(num_heads));
    }
    if (head_dim() % 2 != 0) {
        throw ConfigError("head_dim " + std::to_string(head_dim()) + " must be even for rotary embeddings");
    }
    if (short_conv_kernel < 1) {
        throw ConfigError("short_conv_kernel must be >= 1");
    }
    if (!(norm_epsilon > 0.0) || !(rope_base > 0.0)) {
        throw ConfigError("norm_epsilon and rope_base must be positive");
    }
}

namespace layers {

template <typename S>
Var<S> rmsnorm(const Var<S>& x, const Var<S>& gain, double eps) {
    if (!(eps >= 0.0)) {
        throw ContractViolation("rmsnorm: eps must be nonnegative");
    }
    const auto& xv = x.value();
    if (xv.rank() == 0 || gain.value().rank() != 1 || xv.shape().back() != gain.value().size()) {
        throw ContractViolation("rmsnorm: gain " + shape_string(gain.shape()) + " does not match input " +
                                shape_string(xv.shape()));
    }
    const std::size_t d = gain.value().size();
    const std::size_t rows = d == 0 ? 0 : xv.size() / d;
    Tensor<S> out(xv.shape());
    std::vector<S> inv_rms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const S* row = xv.raw() + r * d;
        S ms = 0;
        for (std::size_t j = 0; j < d; ++j) {
            ms += row[j] * row[j];
        }
        ms /= static_cast<S>(d);
        inv_rms[r] = S{1} / std::sqrt(ms + static_cast<S>(eps));
        for (std::size_t j = 0; j < d; ++j) {
            out[r * d + j] = row[j] * inv_rms[r] * gain.value()[j];
        }
    }
    return make_op<S>(std::move(out), {x, gain}, [inv_rms = std::move(inv_rms), d, rows](Node<S>& self) {
        auto& px = self.parent(0);
        auto& pg = self.parent(1);
        for (std::size_t r = 0; r < rows; ++r) {
            const S* row = px.value.raw() + r * d;
            const S* dy = self.grad.raw() + r * d;
            const S inv = inv_rms[r];
            if (pg.requires_grad) {
                auto& gg = pg.grad_buffer();
                for (std::size_t j = 0; j < d; ++j) {
                    gg[j] += dy[j] * row[j] * inv;
                }
            }
            if (px.requires_grad) {
                // dx = inv * (dxhat - xhat * mean(dxhat * xhat)), dxhat = dy * gain
                S dot = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    dot += dy[j] * pg.value[j] * row[j] * inv;
                }
                dot /= static_cast<S>(d);
                S* gx = px.grad_buffer().raw() + r * d;
                for (std::size_t j = 0; j < d; ++j) {
                    gx[j] += inv * (dy[j] * pg.value[j] - row[j] * inv * dot);
                }
            }
        }
    });
}

template <typename S>
Var<S> swiglu_ffn(const Var<S>& x, const Var<S>& w_gate, const Var<S>& w_up, const Var<S>& w_down) {
    if (w_gate.shape() != w_up.shape() || w_down.value().rank() != 2 ||
        w_down.value().rows() != w_gate.value().cols() || w_down.value().cols() != w_gate.value().rows()) {
        throw ContractViolation("swiglu_ffn: inconsistent weight shapes " + shape_string(w_gate.shape()) + ", " +
                                shape_string(w_up.shape()) + ", " + shape_string(w_down.shape()));
    }
    const auto gate = ops::silu(ops::matmul(x, w_gate));
    const auto up = ops::matmul(x, w_up);
    return ops::matmul(ops::mul(gate, up), w_down);
}

template <typename S>
Var<S> rope_apply(const Var<S>& x, std::span<const std::size_t> positions, std::size_t num_heads, double base) {
    const auto& xv = x.value();
    std::size_t steps = 0;
    std::size_t head_dim = 0;
    if (xv.rank() == 3) {
        if (xv.dim(1) != num_heads) {
            throw ContractViolation("rope_apply: head axis " + std::to_string(xv.dim(1)) + " != num_heads");
        }
        steps = xv.dim(0);
        head_dim = xv.dim(2);
    } else if (xv.rank() == 2 && num_heads > 0 && xv.cols() % num_heads == 0) {
        steps = xv.rows();
        head_dim = xv.cols() / num_heads;
    } else {
        throw ContractViolation("rope_apply: cannot split " + shape_string(xv.shape()) + " into " +
                                std::to_string(num_heads) + " heads");
    }
    if (head_dim % 2 != 0) {
        throw ConfigError("rope_apply: head_dim " + std::to_string(head_dim) + " is odd");
    }
    if (positions.size() != steps) {
        throw ContractViolation("rope_apply: " + std::to_string(positions.size()) + " positions for " +
                                std::to_string(steps) + " steps");
    }
    const std::size_t pairs = head_dim / 2;
    // Angles in double so 32-bit runs still rotate by the exact same amounts.
    std::vector<S> cos_table(steps * pairs);
    std::vector<S> sin_table(steps * pairs);
    for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t j = 0; j < pairs; ++j) {
            const double theta = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
            const double angle = static_cast<double>(positions[t]) * theta;
            cos_table[t * pairs + j] = static_cast<S>(std::cos(angle));
            sin_table[t * pairs + j] = static_cast<S>(std::sin(angle));
        }
    }
    const std::size_t width = num_heads * head_dim;
    Tensor<S> out(xv.shape());
    for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t h = 0; h < num_heads; ++h) {
            for (std::size_t j = 0; j < pairs; ++j) {
                const std::size_t i0 = t * width + h * head_dim + 2 * j;
                const S c = cos_table[t * pairs + j];
                const S s = sin_table[t * pairs + j];
                out[i0] = xv[i0] * c - xv[i0 + 1] * s;
                out[i0 + 1] = xv[i0] * s + xv[i0 + 1] * c;
            }
        }
    }
    return make_op<S>(std::move(out), {x},
                      [cos_table = std::move(cos_table), sin_table = std::move(sin_table), steps, num_heads,
                       head_dim, pairs, width](Node<S>& self) {
                          auto& p = self.parent(0);
                          if (!p.requires_grad) {
                              return;
                          }
                          auto& g = p.grad_buffer();
                          for (std::size_t t = 0; t < steps; ++t) {
                              for (std::size_t h = 0; h < num_heads; ++h) {
                                  for (std::size_t j = 0; j < pairs; ++j) {
                                      const std::size_t i0 = t * width + h * head_dim + 2 * j;
                                      const S c = cos_table[t * pairs + j];
                                      const S s = sin_table[t * pairs + j];
                                      g[i0] += self.grad[i0] * c + self.grad[i0 + 1] * s;
                                      g[i0 + 1] += -self.grad[i0] * s + self.grad[i0 + 1] * c;
                                  }
                              }
                          }
                      });
}

template <typename S>
Var<S> short_conv(const Var<S>& x, const Var<S>& kernel) {
    const auto& xv = x.value();
    const auto& kv = kernel.value();
    if (kv.rank() != 2 || kv.cols() < 1) {
        throw ConfigError("short_conv: kernel must be [channels, k] with k >= 1, got " + shape_string(kv.shape()));
    }
    if (xv.rank() != 2 || xv.cols() != kv.rows()) {
        throw ContractViolation("short_conv: input " + shape_string(xv.shape()) + " vs kernel " +
                                shape_string(kv.shape()));
    }
    const std::size_t steps = xv.rows();
    const std::size_t channels = xv.cols();
    const std::size_t k = kv.cols();
    Tensor<S> out({steps, channels});
    for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t j = 0; j < k; ++j) {
            // source row s = t - k + 1 + j
            if (t + 1 + j < k) {
                continue;
            }
            const std::size_t s = t + 1 + j - k;
            for (std::size_t c = 0; c < channels; ++c) {
                out.at(t, c) += kv.at(c, j) * xv.at(s, c);
            }
        }
    }
    return make_op<S>(std::move(out), {x, kernel}, [steps, channels, k](Node<S>& self) {
        auto& px = self.parent(0);
        auto& pk = self.parent(1);
        for (std::size_t t = 0; t < steps; ++t) {
            for (std::size_t j = 0; j < k; ++j) {
                if (t + 1 + j < k) {
                    continue;
                }
                const std::size_t s = t + 1 + j - k;
                for (std::size_t c = 0; c < channels; ++c) {
                    const S dy = self.grad.at(t, c);
                    if (px.requires_grad) {
                        px.grad_buffer().at(s, c) += pk.value.at(c, j) * dy;
                    }
                    if (pk.requires_grad) {
                        pk.grad_buffer().at(c, j) += px.value.at(s, c) * dy;
                    }
                }
            }
        }
    });
}

template <typename S>
Var<S> embed(std::span<const std::int32_t> ids, const Var<S>& table) {
    return ops::gather_rows(table, ids);
}

template <typename S>
Var<S> lm_head(const Var<S>& h, const Var<S>& weight) {
    return ops::matmul(h, weight, false, true);
}

#define BLALM_INSTANTIATE_LAYERS(S)                                                                        \
    template Var<S> rmsnorm(const Var<S>&, const Var<S>&, double);                                          \
    template Var<S> swiglu_ffn(const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&);                 \
    template Var<S> rope_apply(const Var<S>&, std::span<const std::size_t>, std::size_t, double);           \
    template Var<S> short_conv(const Var<S>&, const Var<S>&);                                               \
    template Var<S> embed(std::span<const std::int32_t>, const Var<S>&);                                    \
    template Var<S> lm_head(const Var<S>&, const Var<S>&);

BLALM_INSTANTIATE_LAYERS(float)
BLALM_INSTANTIATE_LAYERS(double)

#undef BLALM_INSTANTIATE_LAYERS

}  // namespace layers
}  // namespace blalm

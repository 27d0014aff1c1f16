#include "blalm/core/ops.hpp"

#include <cmath>
#include <limits>

#include "eigen_view.hpp"

namespace blalm::ops {

using detail::require_rank;
using detail::view;

namespace {

template <typename S>
void require_same(const Var<S>& a, const Var<S>& b, const char* op) {
    a.value().require_same_shape(b.value(), op);
}

template <typename S, typename Fwd, typename Deriv>
Var<S> unary(const Var<S>& a, Fwd fwd, Deriv deriv) {
    const auto& x = a.value();
    Tensor<S> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = fwd(x[i]);
    }
    return make_op<S>(std::move(out), {a}, [deriv](Node<S>& self) {
        auto& p = self.parent(0);
        if (!p.requires_grad) {
            return;
        }
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
        }
    });
}

}  // namespace

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
    require_same(a, b, "add");
    Tensor<S> out = a.value();
    out += b.value();
    return make_op<S>(std::move(out), {a, b}, [](Node<S>& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (self.parent(k).requires_grad) {
                self.parent(k).grad_buffer() += self.grad;
            }
        }
    });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
    require_same(a, b, "sub");
    Tensor<S> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] -= b.value()[i];
    }
    return make_op<S>(std::move(out), {a, b}, [](Node<S>& self) {
        if (self.parent(0).requires_grad) {
            self.parent(0).grad_buffer() += self.grad;
        }
        if (self.parent(1).requires_grad) {
            auto& g = self.parent(1).grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] -= self.grad[i];
            }
        }
    });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
    require_same(a, b, "mul");
    Tensor<S> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= b.value()[i];
    }
    return make_op<S>(std::move(out), {a, b}, [](Node<S>& self) {
        auto& pa = self.parent(0);
        auto& pb = self.parent(1);
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * pb.value[i];
            }
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * pa.value[i];
            }
        }
    });
}

template <typename S>
Var<S> div(const Var<S>& a, const Var<S>& b) {
    require_same(a, b, "div");
    Tensor<S> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] /= b.value()[i];
    }
    return make_op<S>(std::move(out), {a, b}, [](Node<S>& self) {
        auto& pa = self.parent(0);
        auto& pb = self.parent(1);
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] / pb.value[i];
            }
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] -= self.grad[i] * self.value[i] / pb.value[i];
            }
        }
    });
}

template <typename S>
Var<S> maximum(const Var<S>& a, const Var<S>& b) {
    require_same(a, b, "maximum");
    Tensor<S> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::max(out[i], b.value()[i]);
    }
    // Ties route the gradient to `a`.
    return make_op<S>(std::move(out), {a, b}, [](Node<S>& self) {
        auto& pa = self.parent(0);
        auto& pb = self.parent(1);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const bool pick_a = pa.value[i] >= pb.value[i];
            Node<S>& target = pick_a ? pa : pb;
            if (target.requires_grad) {
                target.grad_buffer()[i] += self.grad[i];
            }
        }
    });
}

template <typename S>
Var<S> scale(const Var<S>& a, double factor) {
    const S f = static_cast<S>(factor);
    return unary(a, [f](S x) { return f * x; }, [f](S, S) { return f; });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, double value) {
    const S v = static_cast<S>(value);
    return unary(a, [v](S x) { return x + v; }, [](S, S) { return S{1}; });
}

template <typename S>
Var<S> neg(const Var<S>& a) {
    return scale(a, -1.0);
}

template <typename S>
Var<S> scale_by(const Var<S>& a, const Var<S>& s) {
    if (s.value().size() != 1) {
        throw ContractViolation("scale_by: factor must hold one element, got " + shape_string(s.shape()));
    }
    const S f = s.value()[0];
    Tensor<S> out = a.value();
    for (auto& v : out.data()) {
        v *= f;
    }
    return make_op<S>(std::move(out), {a, s}, [](Node<S>& self) {
        auto& pa = self.parent(0);
        auto& ps = self.parent(1);
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * ps.value[0];
            }
        }
        if (ps.requires_grad) {
            S acc = 0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                acc += self.grad[i] * pa.value[i];
            }
            ps.grad_buffer()[0] += acc;
        }
    });
}

template <typename S>
Var<S> exp(const Var<S>& a) {
    return unary(a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <typename S>
Var<S> tanh(const Var<S>& a) {
    return unary(a, [](S x) { return std::tanh(x); }, [](S, S y) { return S{1} - y * y; });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
    return unary(a, [](S x) { return S{1} / (S{1} + std::exp(-x)); }, [](S, S y) { return y * (S{1} - y); });
}

template <typename S>
Var<S> silu(const Var<S>& a) {
    return unary(
        a, [](S x) { return x / (S{1} + std::exp(-x)); },
        [](S x, S) {
            const S sig = S{1} / (S{1} + std::exp(-x));
            return sig * (S{1} + x * (S{1} - sig));
        });
}

template <typename S>
Var<S> abs(const Var<S>& a) {
    return unary(
        a, [](S x) { return std::abs(x); }, [](S x, S) { return x > 0 ? S{1} : (x < 0 ? S{-1} : S{0}); });
}

template <typename S>
Var<S> reciprocal(const Var<S>& a) {
    return unary(a, [](S x) { return S{1} / x; }, [](S, S y) { return -y * y; });
}

template <typename S>
Var<S> clamp_min(const Var<S>& a, double floor) {
    const S f = static_cast<S>(floor);
    return unary(a, [f](S x) { return std::max(x, f); }, [f](S x, S) { return x > f ? S{1} : S{0}; });
}

template <typename S>
Var<S> sum(const Var<S>& a) {
    S total = 0;
    for (S v : a.value().data()) {
        total += v;
    }
    return make_op<S>(Tensor<S>::scalar(total), {a}, [](Node<S>& self) {
        auto& p = self.parent(0);
        if (!p.requires_grad) {
            return;
        }
        auto& g = p.grad_buffer();
        for (auto& v : g.data()) {
            v += self.grad[0];
        }
    });
}

template <typename S>
Var<S> mean(const Var<S>& a) {
    const std::size_t n = a.value().size();
    if (n == 0) {
        throw ContractViolation("mean of empty tensor");
    }
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

template <typename S>
Tensor<S> matmul_values(const Tensor<S>& a, const Tensor<S>& b, bool ta, bool tb) {
    require_rank(a.shape(), 2, "matmul");
    require_rank(b.shape(), 2, "matmul");
    const std::size_t m = ta ? a.cols() : a.rows();
    const std::size_t ka = ta ? a.rows() : a.cols();
    const std::size_t kb = tb ? b.cols() : b.rows();
    const std::size_t n = tb ? b.rows() : b.cols();
    if (ka != kb) {
        throw ContractViolation("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                                shape_string(b.shape()));
    }
    Tensor<S> out({m, n});
    if (m == 0 || n == 0) {
        return out;
    }
    auto o = view(out);
    const auto va = view(a);
    const auto vb = view(b);
    if (!ta && !tb) {
        o.noalias() = va * vb;
    } else if (ta && !tb) {
        o.noalias() = va.transpose() * vb;
    } else if (!ta && tb) {
        o.noalias() = va * vb.transpose();
    } else {
        o.noalias() = va.transpose() * vb.transpose();
    }
    return out;
}

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b, bool ta, bool tb) {
    Tensor<S> out = matmul_values(a.value(), b.value(), ta, tb);
    return make_op<S>(std::move(out), {a, b}, [ta, tb](Node<S>& self) {
        auto& pa = self.parent(0);
        auto& pb = self.parent(1);
        if (self.grad.empty()) {
            return;
        }
        const auto dc = view(self.grad);
        if (pa.requires_grad && pa.value.size() > 0) {
            auto ga = view(pa.grad_buffer());
            const auto vb = view(pb.value);
            if (!ta && !tb) {
                ga.noalias() += dc * vb.transpose();
            } else if (ta && !tb) {
                ga.noalias() += vb * dc.transpose();
            } else if (!ta && tb) {
                ga.noalias() += dc * vb;
            } else {
                ga.noalias() += vb.transpose() * dc.transpose();
            }
        }
        if (pb.requires_grad && pb.value.size() > 0) {
            auto gb = view(pb.grad_buffer());
            const auto va = view(pa.value);
            if (!ta && !tb) {
                gb.noalias() += va.transpose() * dc;
            } else if (ta && !tb) {
                gb.noalias() += va * dc;
            } else if (!ta && tb) {
                gb.noalias() += dc.transpose() * va;
            } else {
                gb.noalias() += dc.transpose() * va.transpose();
            }
        }
    });
}

template <typename S>
Var<S> transpose(const Var<S>& a) {
    require_rank(a.shape(), 2, "transpose");
    const std::size_t r = a.value().rows();
    const std::size_t c = a.value().cols();
    Tensor<S> out({c, r});
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out.at(j, i) = a.value().at(i, j);
        }
    }
    return make_op<S>(std::move(out), {a}, [r, c](Node<S>& self) {
        auto& p = self.parent(0);
        if (!p.requires_grad) {
            return;
        }
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                g.at(i, j) += self.grad.at(j, i);
            }
        }
    });
}

template <typename S>
Var<S> reshape(const Var<S>& a, Shape shape) {
    Tensor<S> out = a.value().reshaped(std::move(shape));
    return make_op<S>(std::move(out), {a}, [](Node<S>& self) {
        auto& p = self.parent(0);
        if (!p.requires_grad) {
            return;
        }
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i];
        }
    });
}

template <typename S>
Var<S> slice_cols(const Var<S>& a, std::size_t start, std::size_t count) {
    require_rank(a.shape(), 2, "slice_cols");
    const std::size_t rows = a.value().rows();
    const std::size_t cols = a.value().cols();
    if (start + count > cols) {
        throw ContractViolation("slice_cols: range [" + std::to_string(start) + ", " +
                                std::to_string(start + count) + ") exceeds " + std::to_string(cols) + " columns");
    }
    Tensor<S> out({rows, count});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < count; ++c) {
            out.at(r, c) = a.value().at(r, start + c);
        }
    }
    return make_op<S>(std::move(out), {a}, [start, count, rows](Node<S>& self) {
        auto& p = self.parent(0);
        if (!p.requires_grad) {
            return;
        }
        auto& g = p.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < count; ++c) {
                g.at(r, start + c) += self.grad.at(r, c);
            }
        }
    });
}

template <typename S>
Var<S> slice_rows(const Var<S>& a, std::size_t start, std::size_t count) {
    require_rank(a.shape(), 2, "slice_rows");
    const std::size_t rows = a.value().rows();
    const std::size_t cols = a.value().cols();
    if (start + count > rows) {
        throw ContractViolation("slice_rows: range exceeds " + std::to_string(rows) + " rows");
    }
    const auto first = a.value().values().begin() + static_cast<std::ptrdiff_t>(start * cols);
    Tensor<S> out({count, cols}, std::vector<S>(first, first + static_cast<std::ptrdiff_t>(count * cols)));
    return make_op<S>(std::move(out), {a}, [start, cols](Node<S>& self) {
        auto& p = self.parent(0);
        if (!p.requires_grad) {
            return;
        }
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            g[start * cols + i] += self.grad[i];
        }
    });
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
    if (parts.empty()) {
        throw ContractViolation("concat_cols: no inputs");
    }
    const std::size_t rows = parts.front().value().rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_rank(p.shape(), 2, "concat_cols");
        if (p.value().rows() != rows) {
            throw ContractViolation("concat_cols: row counts differ");
        }
        total += p.value().cols();
    }
    Tensor<S> out({rows, total});
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t c = p.value().cols();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < c; ++j) {
                out.at(r, offset + j) = p.value().at(r, j);
            }
        }
        offset += c;
    }
    return make_op<S>(std::move(out), parts, [rows](Node<S>& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            auto& p = self.parent(k);
            const std::size_t c = p.value.cols();
            if (p.requires_grad) {
                auto& g = p.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < c; ++j) {
                        g.at(r, j) += self.grad.at(r, off + j);
                    }
                }
            }
            off += c;
        }
    });
}

template <typename S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
    if (parts.empty()) {
        throw ContractViolation("concat_rows: no inputs");
    }
    const std::size_t cols = parts.front().value().cols();
    std::size_t total = 0;
    std::vector<S> data;
    for (const auto& p : parts) {
        require_rank(p.shape(), 2, "concat_rows");
        if (p.value().cols() != cols) {
            throw ContractViolation("concat_rows: column counts differ");
        }
        total += p.value().rows();
        data.insert(data.end(), p.value().values().begin(), p.value().values().end());
    }
    return make_op<S>(Tensor<S>({total, cols}, std::move(data)), parts, [](Node<S>& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            auto& p = self.parent(k);
            const std::size_t n = p.value.size();
            if (p.requires_grad) {
                auto& g = p.grad_buffer();
                for (std::size_t i = 0; i < n; ++i) {
                    g[i] += self.grad[off + i];
                }
            }
            off += n;
        }
    });
}

template <typename S>
Var<S> softmax(const Var<S>& a, std::size_t axis) {
    Tensor<S> out = blalm::softmax(a.value(), axis);
    const Shape& shape = a.shape();
    std::size_t outer = 1;
    std::size_t inner = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= shape[i];
    }
    for (std::size_t i = axis + 1; i < shape.size(); ++i) {
        inner *= shape[i];
    }
    const std::size_t n = shape[axis];
    return make_op<S>(std::move(out), {a}, [outer, inner, n](Node<S>& self) {
        auto& p = self.parent(0);
        if (!p.requires_grad) {
            return;
        }
        auto& g = p.grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * n * inner + in;
                S dot = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    dot += self.grad[base + j * inner] * self.value[base + j * inner];
                }
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t idx = base + j * inner;
                    g[idx] += self.value[idx] * (self.grad[idx] - dot);
                }
            }
        }
    });
}

template <typename S>
Var<S> gather_rows(const Var<S>& table, std::span<const std::int32_t> ids) {
    require_rank(table.shape(), 2, "gather_rows");
    const std::size_t vocab = table.value().rows();
    const std::size_t width = table.value().cols();
    Tensor<S> out({ids.size(), width});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
            throw InputError("token id " + std::to_string(ids[i]) + " out of range [0, " + std::to_string(vocab) +
                             ")");
        }
        const S* row = table.value().raw() + static_cast<std::size_t>(ids[i]) * width;
        std::copy(row, row + width, out.raw() + i * width);
    }
    std::vector<std::int32_t> kept(ids.begin(), ids.end());
    return make_op<S>(std::move(out), {table}, [kept = std::move(kept), width](Node<S>& self) {
        auto& p = self.parent(0);
        if (!p.requires_grad) {
            return;
        }
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < kept.size(); ++i) {
            S* row = g.raw() + static_cast<std::size_t>(kept[i]) * width;
            const S* src = self.grad.raw() + i * width;
            for (std::size_t j = 0; j < width; ++j) {
                row[j] += src[j];
            }
        }
    });
}

template <typename S>
Var<S> cross_entropy(const Var<S>& logits, std::span<const std::int32_t> targets,
                     std::span<const std::uint8_t> weights) {
    require_rank(logits.shape(), 2, "cross_entropy");
    const std::size_t rows = logits.value().rows();
    const std::size_t vocab = logits.value().cols();
    if (targets.size() != rows) {
        throw ContractViolation("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                std::to_string(rows) + " rows");
    }
    if (!weights.empty() && weights.size() != rows) {
        throw ContractViolation("cross_entropy: weight count mismatch");
    }
    std::vector<std::uint8_t> mask(rows, 1);
    if (!weights.empty()) {
        mask.assign(weights.begin(), weights.end());
    }
    std::size_t counted = 0;
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
            throw InputError("target id " + std::to_string(targets[r]) + " out of range");
        }
        if (mask[r] == 0) {
            continue;
        }
        const S* row = logits.value().raw() + r * vocab;
        S hi = -std::numeric_limits<S>::infinity();
        for (std::size_t j = 0; j < vocab; ++j) {
            hi = std::max(hi, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < vocab; ++j) {
            z += std::exp(static_cast<double>(row[j] - hi));
        }
        total += std::log(z) + static_cast<double>(hi) - static_cast<double>(row[targets[r]]);
        ++counted;
    }
    const double denom = counted == 0 ? 1.0 : static_cast<double>(counted);
    std::vector<std::int32_t> tgt(targets.begin(), targets.end());
    return make_op<S>(Tensor<S>::scalar(static_cast<S>(total / denom)), {logits},
                      [tgt = std::move(tgt), mask = std::move(mask), vocab, denom](Node<S>& self) {
                          auto& p = self.parent(0);
                          if (!p.requires_grad) {
                              return;
                          }
                          auto& g = p.grad_buffer();
                          const S scale = static_cast<S>(static_cast<double>(self.grad[0]) / denom);
                          for (std::size_t r = 0; r < tgt.size(); ++r) {
                              if (mask[r] == 0) {
                                  continue;
                              }
                              const S* row = p.value.raw() + r * vocab;
                              S hi = -std::numeric_limits<S>::infinity();
                              for (std::size_t j = 0; j < vocab; ++j) {
                                  hi = std::max(hi, row[j]);
                              }
                              S z = 0;
                              for (std::size_t j = 0; j < vocab; ++j) {
                                  z += std::exp(row[j] - hi);
                              }
                              S* grow = g.raw() + r * vocab;
                              for (std::size_t j = 0; j < vocab; ++j) {
                                  grow[j] += scale * std::exp(row[j] - hi) / z;
                              }
                              grow[tgt[r]] -= scale;
                          }
                      });
}

#define BLALM_INSTANTIATE_OPS(S)                                                                        \
    template Var<S> add(const Var<S>&, const Var<S>&);                                                  \
    template Var<S> sub(const Var<S>&, const Var<S>&);                                                  \
    template Var<S> mul(const Var<S>&, const Var<S>&);                                                  \
    template Var<S> div(const Var<S>&, const Var<S>&);                                                  \
    template Var<S> maximum(const Var<S>&, const Var<S>&);                                              \
    template Var<S> scale(const Var<S>&, double);                                                       \
    template Var<S> add_scalar(const Var<S>&, double);                                                  \
    template Var<S> neg(const Var<S>&);                                                                 \
    template Var<S> scale_by(const Var<S>&, const Var<S>&);                                             \
    template Var<S> exp(const Var<S>&);                                                                 \
    template Var<S> tanh(const Var<S>&);                                                                \
    template Var<S> sigmoid(const Var<S>&);                                                             \
    template Var<S> silu(const Var<S>&);                                                                \
    template Var<S> abs(const Var<S>&);                                                                 \
    template Var<S> reciprocal(const Var<S>&);                                                          \
    template Var<S> clamp_min(const Var<S>&, double);                                                   \
    template Var<S> sum(const Var<S>&);                                                                 \
    template Var<S> mean(const Var<S>&);                                                                \
    template Tensor<S> matmul_values(const Tensor<S>&, const Tensor<S>&, bool, bool);                   \
    template Var<S> matmul(const Var<S>&, const Var<S>&, bool, bool);                                   \
    template Var<S> transpose(const Var<S>&);                                                           \
    template Var<S> reshape(const Var<S>&, Shape);                                                      \
    template Var<S> slice_cols(const Var<S>&, std::size_t, std::size_t);                                \
    template Var<S> slice_rows(const Var<S>&, std::size_t, std::size_t);                                \
    template Var<S> concat_cols(const std::vector<Var<S>>&);                                            \
    template Var<S> concat_rows(const std::vector<Var<S>>&);                                            \
    template Var<S> softmax(const Var<S>&, std::size_t);                                                \
    template Var<S> gather_rows(const Var<S>&, std::span<const std::int32_t>);                          \
    template Var<S> cross_entropy(const Var<S>&, std::span<const std::int32_t>, std::span<const std::uint8_t>);

BLALM_INSTANTIATE_OPS(float)
BLALM_INSTANTIATE_OPS(double)

#undef BLALM_INSTANTIATE_OPS

}  // namespace blalm::ops

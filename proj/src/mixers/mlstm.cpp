#include "blalm/mixers/mlstm.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "blalm/core/ops.hpp"
#include "core/eigen_view.hpp"

namespace blalm::mixers {

using detail::block_view;
using detail::RowMatrix;

namespace {

struct CellShape {
    std::size_t steps;
    std::size_t heads;
    std::size_t dk;
    std::size_t dv;
};

template <typename S>
CellShape check_cell_inputs(const Var<S>& q, const Var<S>& k, const Var<S>& v, const Var<S>& log_i,
                            const Var<S>& log_f, std::size_t num_heads) {
    for (const auto* x : {&q, &k, &v, &log_i, &log_f}) {
        detail::require_rank(x->shape(), 2, "mlstm");
    }
    const std::size_t steps = q.value().rows();
    if (num_heads == 0 || q.shape() != k.shape() || v.value().rows() != steps || log_i.shape() != log_f.shape() ||
        log_i.value().rows() != steps || log_i.value().cols() != num_heads || q.value().cols() % num_heads != 0 ||
        v.value().cols() % num_heads != 0) {
        throw ContractViolation("mlstm: inconsistent inputs q " + shape_string(q.shape()) + ", k " +
                                shape_string(k.shape()) + ", v " + shape_string(v.shape()) + ", gates " +
                                shape_string(log_i.shape()) + "/" + shape_string(log_f.shape()) + " for " +
                                std::to_string(num_heads) + " heads");
    }
    return {steps, num_heads, q.value().cols() / num_heads, v.value().cols() / num_heads};
}

// Saved forward quantities of one head.
template <typename S>
struct HeadCache {
    RowMatrix<S> weight;            // exp(D - m), lower triangular
    RowMatrix<S> scores;            // q k^T, lower triangular
    std::vector<double> m;
    std::vector<std::size_t> argmax;
    std::vector<S> b;               // row sums of scores * weight
    std::vector<S> den;
    std::vector<bool> floor_active;  // den came from exp(-m)
    std::vector<bool> dead;          // m = -inf: nothing stored yet
};

}  // namespace

template <typename S>
MlstmCellState<S> MlstmCellState<S>::initial(std::size_t num_heads, std::size_t dk, std::size_t dv) {
    MlstmCellState state;
    for (std::size_t h = 0; h < num_heads; ++h) {
        state.C.push_back(Var<S>::constant(Tensor<S>({dv, dk})));
        state.n.push_back(Var<S>::constant(Tensor<S>({1, dk})));
        state.m.push_back(Var<S>::constant(Tensor<S>({1, 1}, {static_cast<S>(kInitialStabilizer)})));
    }
    return state;
}

template <typename S>
Var<S> mlstm_cell_parallel(const Var<S>& q, const Var<S>& k, const Var<S>& v, const Var<S>& log_i,
                           const Var<S>& log_f, std::size_t num_heads) {
    const auto shape = check_cell_inputs(q, k, v, log_i, log_f, num_heads);
    const std::size_t T = shape.steps;
    const std::size_t dk = shape.dk;
    const std::size_t dv = shape.dv;
    const auto& li = log_i.value();
    const auto& lf = log_f.value();
    const double neg_inf = -std::numeric_limits<double>::infinity();

    // Report the first bad input row; inside the products a NaN would spread
    // to every row. -inf gate pre-activations are allowed (closed gates).
    for (std::size_t t = 0; t < T; ++t) {
        bool bad = false;
        for (const auto* x : {&q.value(), &k.value(), &v.value()}) {
            for (std::size_t j = 0; j < x->cols(); ++j) {
                bad = bad || !std::isfinite(x->at(t, j));
            }
        }
        for (std::size_t h = 0; h < num_heads; ++h) {
            bad = bad || std::isnan(li.at(t, h)) || std::isnan(lf.at(t, h)) ||
                  li.at(t, h) == std::numeric_limits<S>::infinity() || lf.at(t, h) == std::numeric_limits<S>::infinity();
        }
        if (bad) {
            throw DivergenceError("state divergence", t);
        }
    }

    Tensor<S> out({T, num_heads * dv});
    auto caches = std::make_shared<std::vector<HeadCache<S>>>(num_heads);
    for (std::size_t h = 0; h < num_heads; ++h) {
        auto& c = (*caches)[h];
        RowMatrix<double> weight = RowMatrix<double>::Zero(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(T));
        c.m.assign(T, neg_inf);
        c.argmax.assign(T, 0);
        c.b.assign(T, 0);
        c.den.assign(T, 0);
        c.floor_active.assign(T, false);
        c.dead.assign(T, false);
        std::vector<double> row(T);
        for (std::size_t t = 0; t < T; ++t) {
            // D_ts = log_i_s + sum_{r=s+1..t} log_f_r, accumulated backwards in double
            double acc = 0.0;
            for (std::size_t s = t + 1; s-- > 0;) {
                row[s] = static_cast<double>(li.at(s, h)) + acc;
                acc += static_cast<double>(lf.at(s, h));
                if (row[s] > c.m[t] || (s == t && row[s] == neg_inf)) {
                    c.m[t] = row[s];
                    c.argmax[t] = s;
                }
            }
            if (std::isnan(c.m[t]) || c.m[t] == std::numeric_limits<double>::infinity()) {
                throw DivergenceError("state divergence", t);
            }
            c.dead[t] = c.m[t] == neg_inf;
            if (c.dead[t]) {
                continue;
            }
            for (std::size_t s = 0; s <= t; ++s) {
                weight(t, s) = std::exp(row[s] - c.m[t]);
            }
        }
        // the products accumulate in double whatever S is; only the cache and
        // the output are stored in S
        const RowMatrix<double> qh = block_view(q.value(), h * dk, dk).template cast<double>();
        const RowMatrix<double> kh = block_view(k.value(), h * dk, dk).template cast<double>();
        const RowMatrix<double> vh = block_view(v.value(), h * dv, dv).template cast<double>();
        const RowMatrix<double> scores = (qh * kh.transpose()).template triangularView<Eigen::Lower>();
        const RowMatrix<double> a = scores.cwiseProduct(weight);
        const RowMatrix<double> num = a * vh;
        c.scores = scores.template cast<S>();
        c.weight = weight.template cast<S>();
        auto oh = block_view(out, h * dv, dv);
        for (std::size_t t = 0; t < T; ++t) {
            const auto r = static_cast<Eigen::Index>(t);
            if (c.dead[t]) {
                oh.row(r).setZero();
                continue;
            }
            const double b = a.row(r).sum();
            const double floor = std::exp(-c.m[t]);
            const double den = std::max(std::abs(b), floor);
            c.b[t] = static_cast<S>(b);
            c.floor_active[t] = floor > std::abs(b);
            c.den[t] = static_cast<S>(den);
            oh.row(r) = (num.row(r) / den).template cast<S>();
        }
    }
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < num_heads * dv; ++j) {
            if (!std::isfinite(out.at(t, j))) {
                throw DivergenceError("state divergence", t);
            }
        }
    }

    return make_op<S>(std::move(out), {q, k, v, log_i, log_f}, [caches, shape](Node<S>& self) {
        const std::size_t T = shape.steps;
        const std::size_t dk = shape.dk;
        const std::size_t dv = shape.dv;
        auto& pq = self.parent(0);
        auto& pk = self.parent(1);
        auto& pv = self.parent(2);
        auto& pi = self.parent(3);
        auto& pf = self.parent(4);
        const bool need_gates = pi.requires_grad || pf.requires_grad;
        for (std::size_t h = 0; h < shape.heads; ++h) {
            const auto& c = (*caches)[h];
            const auto qh = block_view(pq.value, h * dk, dk);
            const auto kh = block_view(pk.value, h * dk, dk);
            const auto vh = block_view(pv.value, h * dv, dv);
            const auto dout = block_view(self.grad, h * dv, dv);
            const auto out_h = block_view(self.value, h * dv, dv);

            // dN = dH / den and the scalar gradient arriving at den
            RowMatrix<S> dn(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(dv));
            std::vector<S> db(T, 0);
            std::vector<double> dm(T, 0.0);
            for (std::size_t t = 0; t < T; ++t) {
                const auto r = static_cast<Eigen::Index>(t);
                if (c.dead[t]) {
                    dn.row(r).setZero();
                    continue;
                }
                dn.row(r) = dout.row(r) / c.den[t];
                const S dden = -dout.row(r).dot(out_h.row(r)) / c.den[t];
                if (c.floor_active[t]) {
                    dm[t] -= static_cast<double>(dden) * std::exp(-c.m[t]);
                } else {
                    db[t] = c.b[t] >= 0 ? dden : -dden;
                }
            }
            RowMatrix<S> da = dn * vh.transpose();
            for (std::size_t t = 0; t < T; ++t) {
                da.row(static_cast<Eigen::Index>(t)).array() += db[t];
            }
            da = da.template triangularView<Eigen::Lower>();
            if (pv.requires_grad) {
                const RowMatrix<S> a = c.scores.cwiseProduct(c.weight);
                block_view(pv.grad_buffer(), h * dv, dv).noalias() += a.transpose() * dn;
            }
            if (pq.requires_grad || pk.requires_grad) {
                const RowMatrix<S> dp = da.cwiseProduct(c.weight);
                if (pq.requires_grad) {
                    block_view(pq.grad_buffer(), h * dk, dk).noalias() += dp * kh;
                }
                if (pk.requires_grad) {
                    block_view(pk.grad_buffer(), h * dk, dk).noalias() += dp.transpose() * qh;
                }
            }
            if (!need_gates) {
                continue;
            }
            // dD = dA * P * W; m collects -sum(dD) plus the floor term and
            // hands it to the position that attained the maximum.
            RowMatrix<S> dd = da.cwiseProduct(c.scores).cwiseProduct(c.weight);
            std::vector<double> gi(T, 0.0);
            std::vector<double> gf(T, 0.0);
            for (std::size_t t = 0; t < T; ++t) {
                if (c.dead[t]) {
                    continue;
                }
                double row_sum = 0.0;
                for (std::size_t s = 0; s <= t; ++s) {
                    row_sum += static_cast<double>(dd(t, s));
                }
                dd(t, c.argmax[t]) += static_cast<S>(dm[t] - row_sum);
                // D_ts = i_s + sum_{r=s+1..t} f_r
                double prefix = 0.0;
                for (std::size_t s = 0; s <= t; ++s) {
                    const double g = static_cast<double>(dd(t, s));
                    gi[s] += g;
                    if (s > 0) {
                        gf[s] += prefix;
                    }
                    prefix += g;
                }
            }
            if (pi.requires_grad) {
                auto& g = pi.grad_buffer();
                for (std::size_t s = 0; s < T; ++s) {
                    g.at(s, h) += static_cast<S>(gi[s]);
                }
            }
            if (pf.requires_grad) {
                auto& g = pf.grad_buffer();
                for (std::size_t s = 0; s < T; ++s) {
                    g.at(s, h) += static_cast<S>(gf[s]);
                }
            }
        }
    });
}

template <typename S>
Var<S> mlstm_cell_step(const Var<S>& q, const Var<S>& k, const Var<S>& v, const Var<S>& log_i, const Var<S>& log_f,
                       MlstmCellState<S>& state, std::size_t step) {
    const std::size_t heads = state.C.size();
    const auto shape = check_cell_inputs(q, k, v, log_i, log_f, heads);
    if (shape.steps != 1) {
        throw ContractViolation("mlstm_cell_step: expected single-row inputs, got " + shape_string(q.shape()));
    }
    std::vector<Var<S>> outputs;
    outputs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const auto qh = ops::slice_cols(q, h * shape.dk, shape.dk);
        const auto kh = ops::slice_cols(k, h * shape.dk, shape.dk);
        const auto vh = ops::slice_cols(v, h * shape.dv, shape.dv);
        const auto ih = ops::slice_cols(log_i, h, 1);
        const auto fh = ops::slice_cols(log_f, h, 1);
        const auto& m_prev = state.m[h];

        const auto carried = ops::add(fh, m_prev);
        const auto m = ops::maximum(carried, ih);
        const auto in_gate = ops::exp(ops::sub(ih, m));
        const auto forget = ops::exp(ops::sub(carried, m));

        state.C[h] = ops::add(ops::scale_by(state.C[h], forget),
                              ops::scale_by(ops::matmul(vh, kh, true, false), in_gate));
        state.n[h] = ops::add(ops::scale_by(state.n[h], forget), ops::scale_by(kh, in_gate));
        state.m[h] = m;
        if (!state.C[h].value().all_finite() || !state.n[h].value().all_finite() ||
            std::isnan(m.value()[0]) || std::isinf(m.value()[0])) {
            throw DivergenceError("state divergence", step);
        }

        const auto retrieved = ops::matmul(qh, state.C[h], false, true);
        const auto den = ops::maximum(ops::abs(ops::matmul(state.n[h], qh, false, true)), ops::exp(ops::neg(m)));
        outputs.push_back(ops::scale_by(retrieved, ops::reciprocal(den)));
    }
    auto h = heads == 1 ? outputs.front() : ops::concat_cols(outputs);
    if (!h.value().all_finite()) {
        throw DivergenceError("state divergence", step);
    }
    return h;
}

template <typename S>
Var<S> mlstm_cell_recurrent(const Var<S>& q, const Var<S>& k, const Var<S>& v, const Var<S>& log_i,
                            const Var<S>& log_f, std::size_t num_heads) {
    const auto shape = check_cell_inputs(q, k, v, log_i, log_f, num_heads);
    if (shape.steps == 0) {
        return Var<S>::constant(Tensor<S>({0, num_heads * shape.dv}));
    }
    auto state = MlstmCellState<S>::initial(num_heads, shape.dk, shape.dv);
    std::vector<Var<S>> rows;
    rows.reserve(shape.steps);
    for (std::size_t t = 0; t < shape.steps; ++t) {
        rows.push_back(mlstm_cell_step(ops::slice_rows(q, t, 1), ops::slice_rows(k, t, 1), ops::slice_rows(v, t, 1),
                                       ops::slice_rows(log_i, t, 1), ops::slice_rows(log_f, t, 1), state, t));
    }
    return ops::concat_rows(rows);
}

template <typename S>
Var<S> head_gate(const Var<S>& x, const Var<S>& gate) {
    detail::require_rank(x.shape(), 2, "head_gate");
    detail::require_rank(gate.shape(), 2, "head_gate");
    const std::size_t T = x.value().rows();
    const std::size_t heads = gate.value().cols();
    if (gate.value().rows() != T || heads == 0 || x.value().cols() % heads != 0) {
        throw ContractViolation("head_gate: x " + shape_string(x.shape()) + " vs gate " + shape_string(gate.shape()));
    }
    const std::size_t width = x.value().cols() / heads;
    Tensor<S> out(x.shape());
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t h = 0; h < heads; ++h) {
            const S g = gate.value().at(t, h);
            for (std::size_t j = 0; j < width; ++j) {
                out.at(t, h * width + j) = x.value().at(t, h * width + j) * g;
            }
        }
    }
    return make_op<S>(std::move(out), {x, gate}, [T, heads, width](Node<S>& self) {
        auto& px = self.parent(0);
        auto& pg = self.parent(1);
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t h = 0; h < heads; ++h) {
                S acc = 0;
                for (std::size_t j = 0; j < width; ++j) {
                    const std::size_t c = h * width + j;
                    acc += self.grad.at(t, c) * px.value.at(t, c);
                    if (px.requires_grad) {
                        px.grad_buffer().at(t, c) += self.grad.at(t, c) * pg.value.at(t, h);
                    }
                }
                if (pg.requires_grad) {
                    pg.grad_buffer().at(t, h) += acc;
                }
            }
        }
    });
}

#define BLALM_INSTANTIATE_MLSTM(S)                                                                              \
    template struct MlstmCellState<S>;                                                                          \
    template Var<S> mlstm_cell_parallel(const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&,             \
                                        const Var<S>&, std::size_t);                                            \
    template Var<S> mlstm_cell_step(const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&,  \
                                    MlstmCellState<S>&, std::size_t);                                           \
    template Var<S> mlstm_cell_recurrent(const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&,            \
                                         const Var<S>&, std::size_t);                                           \
    template Var<S> head_gate(const Var<S>&, const Var<S>&);

BLALM_INSTANTIATE_MLSTM(float)
BLALM_INSTANTIATE_MLSTM(double)

#undef BLALM_INSTANTIATE_MLSTM

}  // namespace blalm::mixers

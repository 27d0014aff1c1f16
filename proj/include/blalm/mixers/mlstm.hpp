#pragma once

#include <cstddef>
#include <vector>

#include "blalm/core/autograd.hpp"

// mLSTM cell on already projected inputs. Layouts: q, k are [T, heads * dk],
// v is [T, heads * dv], log_i and log_f hold the per-head gate
// pre-activations [T, heads]. Both gates are exponential; a running maximum
// m keeps them representable:
//   m_t = max(log_f_t + m_{t-1}, log_i_t)
//   C_t = exp(log_f_t + m_{t-1} - m_t) C_{t-1} + exp(log_i_t - m_t) v_t k_t^T
//   n_t = (same gates) applied to n_{t-1} and k_t
//   h_t = C_t q_t / max(|<n_t, q_t>|, exp(-m_t))
// The exp(-m_t) floor is the unit floor of the unscaled states carried into
// the scaled ones, so h_t does not depend on m.
namespace blalm::mixers {

// Stands in for m = -inf at sequence start without producing inf - inf.
inline constexpr double kInitialStabilizer = -1e30;

template <typename S>
struct MlstmCellState {
    std::vector<Var<S>> C;  // [dv, dk] per head
    std::vector<Var<S>> n;  // [1, dk] per head
    std::vector<Var<S>> m;  // [1, 1] per head

    static MlstmCellState initial(std::size_t num_heads, std::size_t dk, std::size_t dv);
};

// Quadratic parallel form of the whole sequence, returns [T, heads * dv]
// before the output gate. Throws DivergenceError naming the first bad row.
template <typename S>
Var<S> mlstm_cell_parallel(const Var<S>& q, const Var<S>& k, const Var<S>& v, const Var<S>& log_i,
                           const Var<S>& log_f, std::size_t num_heads);

// One recurrent step on single rows ([1, ...] inputs), updating `state`.
// `step` only labels a DivergenceError ("state divergence").
template <typename S>
Var<S> mlstm_cell_step(const Var<S>& q, const Var<S>& k, const Var<S>& v, const Var<S>& log_i, const Var<S>& log_f,
                       MlstmCellState<S>& state, std::size_t step);

// Folds mlstm_cell_step over all rows; the reference for the parallel form.
template <typename S>
Var<S> mlstm_cell_recurrent(const Var<S>& q, const Var<S>& k, const Var<S>& v, const Var<S>& log_i,
                            const Var<S>& log_f, std::size_t num_heads);

// out[t, h*dv + j] = x[t, h*dv + j] * gate[t, h]
template <typename S>
Var<S> head_gate(const Var<S>& x, const Var<S>& gate);

}  // namespace blalm::mixers

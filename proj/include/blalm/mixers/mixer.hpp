#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "blalm/core/parameter_set.hpp"
#include "blalm/core/rng.hpp"
#include "blalm/layers/layers.hpp"
#include "blalm/mixers/feature_maps.hpp"
#include "blalm/mixers/mlstm.hpp"

namespace blalm::mixers {

enum class MixerKind { SelfAttention, MLSTM };
enum class SwaMode { Off, FixedHalf, DynMod, DynModBounded };

std::string to_string(MixerKind kind);
std::string to_string(SwaMode mode);
MixerKind parse_mixer_kind(const std::string& text);  // ConfigError on unknown names
SwaMode parse_swa_mode(const std::string& text);

struct MixerConfig {
    MixerKind kind = MixerKind::MLSTM;
    SwaMode swa = SwaMode::Off;
    std::size_t swa_window = 64;
    bool hedgehog = false;
    std::size_t hedgehog_feature_dim = 0;  // 0: head_dim / 2
    bool short_conv = false;               // on q and k; runs before the Hedgehog map
    bool separate_swa_projections = false;

    std::size_t feature_dim(const LayerConfig& layer) const;
    // Key width seen by the mLSTM cell per head.
    std::size_t key_dim(const LayerConfig& layer) const;
    void validate(const LayerConfig& layer) const;
};

// Bound views of one mixer's parameters. Members stay undefined when the
// corresponding feature is off.
template <typename S>
struct MixerWeights {
    Var<S> w_q, w_k, w_v, w_out;  // [d, d]
    Var<S> w_i, w_f, w_o;         // [d, heads]
    Var<S> conv_q, conv_k;        // [d, kernel]
    Var<S> phi_q, phi_k;          // [head_dim, feature_dim], shared by all heads
    Var<S> alpha;                 // [1]
    Var<S> swa_q, swa_k, swa_v;   // [d, d]
};

// Creates "<prefix>.W_q" etc. Projections draw N(0, 1/fan_in); the output
// projection is further divided by sqrt(2 * num_layers). Conv kernels start
// as the identity tap, feature maps as an identity slice, alpha at 0.
template <typename S>
void add_mixer_parameters(ParameterSet<S>& set, const std::string& prefix, const LayerConfig& layer,
                          const MixerConfig& mixer, SeededRng& rng, std::size_t num_layers);

template <typename S>
MixerWeights<S> bind_mixer(ParameterSet<S>& set, const std::string& prefix);

// Full mixer on x [T, d]: projections, optional short conv, the selected
// token mixer(s), the combination rule and the output projection.
template <typename S>
Var<S> mixer_forward(const Var<S>& x, const LayerConfig& layer, const MixerConfig& mixer, const MixerWeights<S>& w);

// mLSTM path only (SWA ignored), parallel form.
template <typename S>
Var<S> mlstm_parallel(const Var<S>& x, const LayerConfig& layer, const MixerConfig& mixer,
                      const MixerWeights<S>& w);

template <typename S>
struct MlstmState {
    MlstmCellState<S> cell;
    std::vector<Var<S>> q_history;  // most recent projected rows for the short conv, oldest first
    std::vector<Var<S>> k_history;
    std::size_t step = 0;

    static MlstmState initial(const LayerConfig& layer, const MixerConfig& mixer);
};

// One token x_t [1, d] through the mLSTM path, advancing `state`.
template <typename S>
Var<S> mlstm_step(const Var<S>& x_t, MlstmState<S>& state, const LayerConfig& layer, const MixerConfig& mixer,
                  const MixerWeights<S>& w);

// Folds mlstm_step over the rows of x; reference for mlstm_parallel.
template <typename S>
Var<S> mlstm_recurrent(const Var<S>& x, const LayerConfig& layer, const MixerConfig& mixer,
                       const MixerWeights<S>& w);

template <typename S>
struct BlockWeights {
    Var<S> norm_mixer, norm_ffn;  // [d]
    Var<S> w_gate, w_up, w_down;
    MixerWeights<S> mixer;
};

// "<prefix>.norm_mixer.gain", "<prefix>.mixer.*", "<prefix>.norm_ffn.gain", "<prefix>.ffn.W_*".
template <typename S>
void add_block_parameters(ParameterSet<S>& set, const std::string& prefix, const LayerConfig& layer,
                          const MixerConfig& mixer, SeededRng& rng, std::size_t num_layers);

template <typename S>
BlockWeights<S> bind_block(ParameterSet<S>& set, const std::string& prefix);

// x + mixer(rmsnorm(x)), then + swiglu(rmsnorm(.)).
template <typename S>
Var<S> block_forward(const Var<S>& x, const LayerConfig& layer, const MixerConfig& mixer, const BlockWeights<S>& w);

}  // namespace blalm::mixers

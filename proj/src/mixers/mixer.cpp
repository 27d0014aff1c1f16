#include "blalm/mixers/mixer.hpp"

#include <cmath>
#include <numeric>

#include "blalm/core/ops.hpp"
#include "blalm/mixers/attention.hpp"

namespace blalm::mixers {

std::string to_string(MixerKind kind) {
    return kind == MixerKind::SelfAttention ? "self_attention" : "mlstm";
}

std::string to_string(SwaMode mode) {
    switch (mode) {
        case SwaMode::Off: return "off";
        case SwaMode::FixedHalf: return "fixed_half";
        case SwaMode::DynMod: return "dynmod";
        case SwaMode::DynModBounded: return "dynmod_bounded";
    }
    return "off";
}

MixerKind parse_mixer_kind(const std::string& text) {
    if (text == "self_attention") return MixerKind::SelfAttention;
    if (text == "mlstm") return MixerKind::MLSTM;
    throw ConfigError("unknown mixer kind '" + text + "' (expected self_attention or mlstm)");
}

SwaMode parse_swa_mode(const std::string& text) {
    for (auto mode : {SwaMode::Off, SwaMode::FixedHalf, SwaMode::DynMod, SwaMode::DynModBounded}) {
        if (text == to_string(mode)) return mode;
    }
    throw ConfigError("unknown swa mode '" + text + "' (expected off, fixed_half, dynmod or dynmod_bounded)");
}

std::size_t MixerConfig::feature_dim(const LayerConfig& layer) const {
    return hedgehog_feature_dim == 0 ? layer.head_dim() / 2 : hedgehog_feature_dim;
}

std::size_t MixerConfig::key_dim(const LayerConfig& layer) const {
    return hedgehog ? 2 * feature_dim(layer) : layer.head_dim();
}

void MixerConfig::validate(const LayerConfig& layer) const {
    layer.validate();
    if (swa != SwaMode::Off && kind != MixerKind::MLSTM) {
        throw ConfigError("sliding window attention is only combined with the mlstm mixer");
    }
    if (hedgehog && kind != MixerKind::MLSTM) {
        throw ConfigError("hedgehog feature maps apply to the mlstm mixer only");
    }
    if (swa_window < 1) {
        throw ConfigError("swa_window must be >= 1");
    }
    if (hedgehog && feature_dim(layer) < 1) {
        throw ConfigError("hedgehog_feature_dim must be >= 1");
    }
}

namespace {

template <typename S>
Tensor<S> normal_tensor(Shape shape, SeededRng& rng, double stddev) {
    Tensor<S> t(std::move(shape));
    for (auto& v : t.data()) {
        v = static_cast<S>(rng.normal(0.0, stddev));
    }
    return t;
}

CombineMode combine_mode(SwaMode mode) {
    switch (mode) {
        case SwaMode::FixedHalf: return CombineMode::FixedHalf;
        case SwaMode::DynMod: return CombineMode::DynMod;
        case SwaMode::DynModBounded: return CombineMode::DynModBounded;
        case SwaMode::Off: break;
    }
    throw ContractViolation("no combination rule when swa is off");
}

std::vector<std::size_t> iota_positions(std::size_t n) {
    std::vector<std::size_t> pos(n);
    std::iota(pos.begin(), pos.end(), std::size_t{0});
    return pos;
}

// [T, heads * head_dim] -> per-head Hedgehog features [T, heads * 2f]
template <typename S>
Var<S> per_head_features(const Var<S>& x, const Var<S>& w_phi, std::size_t heads) {
    const std::size_t T = x.value().rows();
    const std::size_t hd = x.value().cols() / heads;
    const auto phi = hedgehog_map(ops::reshape(x, {T * heads, hd}), w_phi);
    return ops::reshape(phi, {T, heads * 2 * w_phi.value().cols()});
}

template <typename S>
Var<S> mlstm_queries(const Var<S>& q, const LayerConfig& layer, const MixerConfig& mixer, const MixerWeights<S>& w) {
    auto out = mixer.hedgehog ? per_head_features(q, w.phi_q, layer.num_heads) : q;
    return ops::scale(out, 1.0 / std::sqrt(static_cast<double>(layer.head_dim())));
}

template <typename S>
Var<S> mlstm_keys(const Var<S>& k, const LayerConfig& layer, const MixerConfig& mixer, const MixerWeights<S>& w) {
    return mixer.hedgehog ? per_head_features(k, w.phi_k, layer.num_heads) : k;
}

template <typename S>
Var<S> require(const Var<S>& v, const char* what) {
    if (!v.defined()) {
        throw ContractViolation(std::string("mixer weights lack ") + what);
    }
    return v;
}

template <typename S>
void check_input(const Var<S>& x, const LayerConfig& layer) {
    if (x.value().rank() != 2 || x.value().cols() != layer.hidden_size) {
        throw ContractViolation("mixer: expected [T, " + std::to_string(layer.hidden_size) + "], got " +
                                shape_string(x.shape()));
    }
}

struct Projected {};

}  // namespace

template <typename S>
void add_mixer_parameters(ParameterSet<S>& set, const std::string& prefix, const LayerConfig& layer,
                          const MixerConfig& mixer, SeededRng& rng, std::size_t num_layers) {
    mixer.validate(layer);
    const std::size_t d = layer.hidden_size;
    const std::size_t heads = layer.num_heads;
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));
    const double out_std = proj_std / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(num_layers, 1)));
    const auto M = ShapeClass::Matrix;
    set.add(prefix + ".W_q", normal_tensor<S>({d, d}, rng, proj_std), M);
    set.add(prefix + ".W_k", normal_tensor<S>({d, d}, rng, proj_std), M);
    set.add(prefix + ".W_v", normal_tensor<S>({d, d}, rng, proj_std), M);
    set.add(prefix + ".W_out", normal_tensor<S>({d, d}, rng, out_std), M);
    if (mixer.kind == MixerKind::MLSTM) {
        // Small gate weights: forget gates start near exp(0) = 1.
        const auto G = ShapeClass::ScalarLike;
        set.add(prefix + ".W_i", normal_tensor<S>({d, heads}, rng, 0.02), G);
        set.add(prefix + ".W_f", normal_tensor<S>({d, heads}, rng, 0.02), G);
        set.add(prefix + ".W_o", normal_tensor<S>({d, heads}, rng, 0.02), G);
    }
    if (mixer.short_conv) {
        Tensor<S> kernel({d, layer.short_conv_kernel});
        for (std::size_t c = 0; c < d; ++c) {
            kernel.at(c, layer.short_conv_kernel - 1) = 1;
        }
        set.add(prefix + ".conv_q", kernel, M);
        set.add(prefix + ".conv_k", kernel, M);
    }
    if (mixer.hedgehog) {
        const std::size_t hd = layer.head_dim();
        const std::size_t f = mixer.feature_dim(layer);
        Tensor<S> phi({hd, f});
        for (std::size_t j = 0; j < std::min(hd, f); ++j) {
            phi.at(j, j) = 1;
        }
        set.add(prefix + ".W_phi_q", phi, M);
        set.add(prefix + ".W_phi_k", phi, M);
    }
    if (mixer.swa == SwaMode::DynMod || mixer.swa == SwaMode::DynModBounded) {
        set.add(prefix + ".alpha", Tensor<S>({1}), ShapeClass::ScalarLike);
    }
    if (mixer.swa != SwaMode::Off && mixer.separate_swa_projections) {
        set.add(prefix + ".swa.W_q", normal_tensor<S>({d, d}, rng, proj_std), M);
        set.add(prefix + ".swa.W_k", normal_tensor<S>({d, d}, rng, proj_std), M);
        set.add(prefix + ".swa.W_v", normal_tensor<S>({d, d}, rng, proj_std), M);
    }
}

template <typename S>
MixerWeights<S> bind_mixer(ParameterSet<S>& set, const std::string& prefix) {
    MixerWeights<S> w;
    w.w_q = set.bind(prefix + ".W_q");
    w.w_k = set.bind(prefix + ".W_k");
    w.w_v = set.bind(prefix + ".W_v");
    w.w_out = set.bind(prefix + ".W_out");
    w.w_i = set.bind_optional(prefix + ".W_i");
    w.w_f = set.bind_optional(prefix + ".W_f");
    w.w_o = set.bind_optional(prefix + ".W_o");
    w.conv_q = set.bind_optional(prefix + ".conv_q");
    w.conv_k = set.bind_optional(prefix + ".conv_k");
    w.phi_q = set.bind_optional(prefix + ".W_phi_q");
    w.phi_k = set.bind_optional(prefix + ".W_phi_k");
    w.alpha = set.bind_optional(prefix + ".alpha");
    w.swa_q = set.bind_optional(prefix + ".swa.W_q");
    w.swa_k = set.bind_optional(prefix + ".swa.W_k");
    w.swa_v = set.bind_optional(prefix + ".swa.W_v");
    return w;
}

namespace {

template <typename S>
struct Streams {
    Var<S> q, k, v;  // after the short conv when enabled
};

template <typename S>
Streams<S> project(const Var<S>& x, const MixerConfig& mixer, const MixerWeights<S>& w) {
    Streams<S> s{ops::matmul(x, w.w_q), ops::matmul(x, w.w_k), ops::matmul(x, w.w_v)};
    if (mixer.short_conv) {
        s.q = layers::short_conv(s.q, require(w.conv_q, "conv_q"));
        s.k = layers::short_conv(s.k, require(w.conv_k, "conv_k"));
    }
    return s;
}

// Gated mLSTM output before the output projection.
template <typename S>
Var<S> mlstm_branch(const Var<S>& x, const Streams<S>& s, const LayerConfig& layer, const MixerConfig& mixer,
                    const MixerWeights<S>& w) {
    const auto q = mlstm_queries(s.q, layer, mixer, w);
    const auto k = mlstm_keys(s.k, layer, mixer, w);
    const auto log_i = ops::matmul(x, require(w.w_i, "W_i"));
    const auto log_f = ops::matmul(x, require(w.w_f, "W_f"));
    const auto o = ops::sigmoid(ops::matmul(x, require(w.w_o, "W_o")));
    return head_gate(mlstm_cell_parallel(q, k, s.v, log_i, log_f, layer.num_heads), o);
}

template <typename S>
Var<S> attention_branch(const Var<S>& q, const Var<S>& k, const Var<S>& v, const LayerConfig& layer,
                        std::size_t window) {
    const auto pos = iota_positions(q.value().rows());
    const auto rq = layers::rope_apply(q, pos, layer.num_heads, layer.rope_base);
    const auto rk = layers::rope_apply(k, pos, layer.num_heads, layer.rope_base);
    return multihead_attention(rq, rk, v, layer.num_heads, window);
}

}  // namespace

template <typename S>
Var<S> mixer_forward(const Var<S>& x, const LayerConfig& layer, const MixerConfig& mixer, const MixerWeights<S>& w) {
    check_input(x, layer);
    const auto s = project(x, mixer, w);
    if (mixer.kind == MixerKind::SelfAttention) {
        return ops::matmul(attention_branch(s.q, s.k, s.v, layer, 0), w.w_out);
    }
    auto h = mlstm_branch(x, s, layer, mixer, w);
    if (mixer.swa != SwaMode::Off) {
        Var<S> swa;
        if (mixer.separate_swa_projections) {
            swa = attention_branch(ops::matmul(x, require(w.swa_q, "swa.W_q")), ops::matmul(x, require(w.swa_k, "swa.W_k")),
                                   ops::matmul(x, require(w.swa_v, "swa.W_v")), layer, mixer.swa_window);
        } else {
            swa = attention_branch(s.q, s.k, s.v, layer, mixer.swa_window);
        }
        const auto mode = combine_mode(mixer.swa);
        h = combine(h, swa, mode, mode == CombineMode::FixedHalf ? Var<S>() : require(w.alpha, "alpha"));
    }
    return ops::matmul(h, w.w_out);
}

template <typename S>
Var<S> mlstm_parallel(const Var<S>& x, const LayerConfig& layer, const MixerConfig& mixer,
                      const MixerWeights<S>& w) {
    check_input(x, layer);
    if (mixer.kind != MixerKind::MLSTM) {
        throw ContractViolation("mlstm_parallel on a self-attention mixer");
    }
    return ops::matmul(mlstm_branch(x, project(x, mixer, w), layer, mixer, w), w.w_out);
}

template <typename S>
MlstmState<S> MlstmState<S>::initial(const LayerConfig& layer, const MixerConfig& mixer) {
    MlstmState state;
    state.cell = MlstmCellState<S>::initial(layer.num_heads, mixer.key_dim(layer), layer.head_dim());
    return state;
}

namespace {

// Last row of the short conv over (history, current), zero-padded on the left.
template <typename S>
Var<S> conv_step(const Var<S>& row, std::vector<Var<S>>& history, const Var<S>& kernel) {
    const std::size_t k = kernel.value().cols();
    const std::size_t width = row.value().cols();
    std::vector<Var<S>> window;
    for (std::size_t pad = history.size() + 1; pad < k; ++pad) {
        window.push_back(Var<S>::constant(Tensor<S>({1, width})));
    }
    window.insert(window.end(), history.begin(), history.end());
    window.push_back(row);
    history.push_back(row);
    if (history.size() + 1 > k) {
        history.erase(history.begin());
    }
    const auto conv = layers::short_conv(ops::concat_rows(window), kernel);
    return ops::slice_rows(conv, k - 1, 1);
}

}  // namespace

template <typename S>
Var<S> mlstm_step(const Var<S>& x_t, MlstmState<S>& state, const LayerConfig& layer, const MixerConfig& mixer,
                  const MixerWeights<S>& w) {
    check_input(x_t, layer);
    if (x_t.value().rows() != 1) {
        throw ContractViolation("mlstm_step: expected a single row, got " + shape_string(x_t.shape()));
    }
    auto q = ops::matmul(x_t, w.w_q);
    auto k = ops::matmul(x_t, w.w_k);
    const auto v = ops::matmul(x_t, w.w_v);
    if (mixer.short_conv) {
        q = conv_step(q, state.q_history, require(w.conv_q, "conv_q"));
        k = conv_step(k, state.k_history, require(w.conv_k, "conv_k"));
    }
    const auto log_i = ops::matmul(x_t, require(w.w_i, "W_i"));
    const auto log_f = ops::matmul(x_t, require(w.w_f, "W_f"));
    const auto o = ops::sigmoid(ops::matmul(x_t, require(w.w_o, "W_o")));
    const auto h = mlstm_cell_step(mlstm_queries(q, layer, mixer, w), mlstm_keys(k, layer, mixer, w), v, log_i, log_f,
                                   state.cell, state.step);
    ++state.step;
    return ops::matmul(head_gate(h, o), w.w_out);
}

template <typename S>
Var<S> mlstm_recurrent(const Var<S>& x, const LayerConfig& layer, const MixerConfig& mixer,
                       const MixerWeights<S>& w) {
    check_input(x, layer);
    const std::size_t T = x.value().rows();
    if (T == 0) {
        return Var<S>::constant(Tensor<S>({0, layer.hidden_size}));
    }
    auto state = MlstmState<S>::initial(layer, mixer);
    std::vector<Var<S>> rows;
    rows.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        rows.push_back(mlstm_step(ops::slice_rows(x, t, 1), state, layer, mixer, w));
    }
    return ops::concat_rows(rows);
}

template <typename S>
void add_block_parameters(ParameterSet<S>& set, const std::string& prefix, const LayerConfig& layer,
                          const MixerConfig& mixer, SeededRng& rng, std::size_t num_layers) {
    const std::size_t d = layer.hidden_size;
    const std::size_t f = layer.intermediate_size;
    set.add(prefix + ".norm_mixer.gain", Tensor<S>::full({d}, 1), ShapeClass::ScalarLike);
    add_mixer_parameters(set, prefix + ".mixer", layer, mixer, rng, num_layers);
    set.add(prefix + ".norm_ffn.gain", Tensor<S>::full({d}, 1), ShapeClass::ScalarLike);
    const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
    const double down_std = 1.0 / std::sqrt(static_cast<double>(f)) /
                            std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(num_layers, 1)));
    set.add(prefix + ".ffn.W_gate", normal_tensor<S>({d, f}, rng, in_std), ShapeClass::Matrix);
    set.add(prefix + ".ffn.W_up", normal_tensor<S>({d, f}, rng, in_std), ShapeClass::Matrix);
    set.add(prefix + ".ffn.W_down", normal_tensor<S>({f, d}, rng, down_std), ShapeClass::Matrix);
}

template <typename S>
BlockWeights<S> bind_block(ParameterSet<S>& set, const std::string& prefix) {
    BlockWeights<S> w;
    w.norm_mixer = set.bind(prefix + ".norm_mixer.gain");
    w.norm_ffn = set.bind(prefix + ".norm_ffn.gain");
    w.w_gate = set.bind(prefix + ".ffn.W_gate");
    w.w_up = set.bind(prefix + ".ffn.W_up");
    w.w_down = set.bind(prefix + ".ffn.W_down");
    w.mixer = bind_mixer(set, prefix + ".mixer");
    return w;
}

template <typename S>
Var<S> block_forward(const Var<S>& x, const LayerConfig& layer, const MixerConfig& mixer, const BlockWeights<S>& w) {
    const auto mixed = mixer_forward(layers::rmsnorm(x, w.norm_mixer, layer.norm_epsilon), layer, mixer, w.mixer);
    const auto h = ops::add(x, mixed);
    const auto ffn = layers::swiglu_ffn(layers::rmsnorm(h, w.norm_ffn, layer.norm_epsilon), w.w_gate, w.w_up, w.w_down);
    return ops::add(h, ffn);
}

#define BLALM_INSTANTIATE_MIXER(S)                                                                               \
    template void add_mixer_parameters(ParameterSet<S>&, const std::string&, const LayerConfig&,                 \
                                       const MixerConfig&, SeededRng&, std::size_t);                             \
    template MixerWeights<S> bind_mixer(ParameterSet<S>&, const std::string&);                                   \
    template Var<S> mixer_forward(const Var<S>&, const LayerConfig&, const MixerConfig&, const MixerWeights<S>&); \
    template Var<S> mlstm_parallel(const Var<S>&, const LayerConfig&, const MixerConfig&, const MixerWeights<S>&); \
    template struct MlstmState<S>;                                                                               \
    template Var<S> mlstm_step(const Var<S>&, MlstmState<S>&, const LayerConfig&, const MixerConfig&,            \
                               const MixerWeights<S>&);                                                          \
    template Var<S> mlstm_recurrent(const Var<S>&, const LayerConfig&, const MixerConfig&, const MixerWeights<S>&); \
    template void add_block_parameters(ParameterSet<S>&, const std::string&, const LayerConfig&,                 \
                                       const MixerConfig&, SeededRng&, std::size_t);                             \
    template BlockWeights<S> bind_block(ParameterSet<S>&, const std::string&);                                   \
    template Var<S> block_forward(const Var<S>&, const LayerConfig&, const MixerConfig&, const BlockWeights<S>&);

BLALM_INSTANTIATE_MIXER(float)
BLALM_INSTANTIATE_MIXER(double)

#undef BLALM_INSTANTIATE_MIXER

}  // namespace blalm::mixers

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "blalm/core/parameter_set.hpp"
#include "blalm/mixers/mixer.hpp"
#include "blalm/train/config.hpp"

namespace blalm::train {

struct AlphaEntry {
    std::size_t layer = 0;
    double raw = 0.0;
    double effective = 0.0;  // alpha for DynMod, tanh(alpha) for DynModBounded
};

// Decoder-only LM: "embedding.table" [V, d], blocks "layer.<i>.*",
// "final_norm.gain" [d] and "lm_head.weight" [V, d] unless tied to the table.
template <typename S>
class Model {
public:
    Model(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return cfg_; }
    ParameterSet<S>& parameters() noexcept { return params_; }
    const ParameterSet<S>& parameters() const noexcept { return params_; }

    // Logits [T, V] for ids [T]. Ids must be < vocab_size (InputError).
    Var<S> logits(std::span<const std::int32_t> ids);

    // Mean next-token cross-entropy over the block: inputs block[0..T-2],
    // targets block[1..T-1]. With mask_separator, positions whose input is the
    // document separator do not count. `positions` receives the counted total.
    Var<S> loss(std::span<const std::int32_t> block, bool mask_separator = false, std::size_t* positions = nullptr);

    std::vector<AlphaEntry> alpha_trace() const;

private:
    ModelConfig cfg_;
    ParameterSet<S> params_;
};

}  // namespace blalm::train

#include "blalm/train/model.hpp"

#include <cmath>

#include "blalm/core/ops.hpp"
#include "blalm/data/bpe.hpp"
#include "blalm/optim/optimizers.hpp"

namespace blalm::train {

template <typename S>
Model<S>::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    SeededRng rng(seed);
    const std::size_t d = cfg_.layer.hidden_size;
    const std::size_t v = cfg_.vocab_size;
    // Untied tables draw N(0, 1); a tied table doubles as the head, so it gets the head's N(0, 1/d).
    const double embed_std = cfg_.tie_embeddings ? 1.0 / std::sqrt(static_cast<double>(d)) : 1.0;
    Tensor<S> table({v, d});
    for (std::size_t i = 0; i < table.size(); ++i) {
        table[i] = static_cast<S>(rng.normal(0.0, embed_std));
    }
    params_.add("embedding.table", std::move(table), ShapeClass::ScalarLike);
    for (std::size_t i = 0; i < cfg_.num_layers; ++i) {
        mixers::add_block_parameters(params_, "layer." + std::to_string(i), cfg_.layer, cfg_.mixer, rng,
                                     cfg_.num_layers);
    }
    params_.add("final_norm.gain", Tensor<S>({d}, std::vector<S>(d, S{1})), ShapeClass::ScalarLike);
    if (!cfg_.tie_embeddings) {
        Tensor<S> head({v, d});
        for (std::size_t i = 0; i < head.size(); ++i) {
            head[i] = static_cast<S>(rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(d))));
        }
        params_.add("lm_head.weight", std::move(head), ShapeClass::ScalarLike);
    }
    for (auto* p : params_.pointers()) {
        p->shape_class = optim::classify_parameter(p->name, p->value.shape());
    }
}

template <typename S>
Var<S> Model<S>::logits(std::span<const std::int32_t> ids) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= cfg_.vocab_size) {
            throw InputError("token id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                             " outside vocabulary of " + std::to_string(cfg_.vocab_size));
        }
    }
    const auto table = params_.bind("embedding.table");
    Var<S> h = layers::embed(ids, table);
    for (std::size_t i = 0; i < cfg_.num_layers; ++i) {
        const auto w = mixers::bind_block(params_, "layer." + std::to_string(i));
        h = mixers::block_forward(h, cfg_.layer, cfg_.mixer, w);
    }
    h = layers::rmsnorm(h, params_.bind("final_norm.gain"), cfg_.layer.norm_epsilon);
    return layers::lm_head(h, cfg_.tie_embeddings ? table : params_.bind("lm_head.weight"));
}

template <typename S>
Var<S> Model<S>::loss(std::span<const std::int32_t> block, bool mask_separator, std::size_t* positions) {
    if (block.size() < 2) {
        throw ContractViolation("loss: a block needs at least two tokens");
    }
    const auto inputs = block.first(block.size() - 1);
    const auto targets = block.subspan(1);
    std::vector<std::uint8_t> weights;
    std::size_t counted = inputs.size();
    if (mask_separator) {
        weights.resize(inputs.size());
        counted = 0;
        for (std::size_t t = 0; t < inputs.size(); ++t) {
            weights[t] = inputs[t] == data::BpeTokenizer::kEndOfText ? 0 : 1;
            counted += weights[t];
        }
    }
    if (positions != nullptr) {
        *positions = counted;
    }
    return ops::cross_entropy(logits(inputs), targets, weights);
}

template <typename S>
std::vector<AlphaEntry> Model<S>::alpha_trace() const {
    std::vector<AlphaEntry> trace;
    const auto mode = cfg_.mixer.swa;
    if (mode != mixers::SwaMode::DynMod && mode != mixers::SwaMode::DynModBounded) {
        return trace;
    }
    for (std::size_t i = 0; i < cfg_.num_layers; ++i) {
        const double raw = static_cast<double>(params_.get("layer." + std::to_string(i) + ".mixer.alpha").value[0]);
        double eff = raw;
        if (mode == mixers::SwaMode::DynModBounded) {
            eff = std::clamp(std::tanh(raw), -std::nextafter(1.0, 0.0), std::nextafter(1.0, 0.0));
        }
        trace.push_back({i, raw, eff});
    }
    return trace;
}

template class Model<float>;
template class Model<double>;

}  // namespace blalm::train

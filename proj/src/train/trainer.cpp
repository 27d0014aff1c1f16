#include "blalm/train/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <nlohmann/json.hpp>

#include "blalm/core/ops.hpp"

namespace blalm::train {

template <typename S>
EvalResult evaluate_perplexity(Model<S>& model, const data::PackedBlocks& blocks, bool mask_separator) {
    NoGradGuard no_grad;
    double total = 0.0;
    std::uint64_t positions = 0;
    for (std::size_t b = 0; b < blocks.count(); ++b) {
        std::size_t counted = 0;
        const auto loss = model.loss(blocks.block(b), mask_separator, &counted);
        total += static_cast<double>(loss.item()) * static_cast<double>(counted);
        positions += counted;
    }
    EvalResult r;
    r.positions = positions;
    r.mean_loss = positions == 0 ? 0.0 : total / static_cast<double>(positions);
    r.perplexity = std::exp(r.mean_loss);
    return r;
}

BlockSplit holdout_split(const data::PackedBlocks& blocks, double fraction, std::uint64_t seed) {
    const std::size_t n = blocks.count();
    std::size_t n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (fraction > 0.0 && n >= 2) {
        n_val = std::max<std::size_t>(n_val, 1);
    }
    n_val = std::min(n_val, n);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
        idx[i] = i;
    }
    SeededRng rng = SeededRng(seed).fork(0x76616c);  // "val"
    rng.shuffle(idx);
    std::vector<bool> is_val(n, false);
    for (std::size_t i = 0; i < n_val; ++i) {
        is_val[idx[i]] = true;
    }
    BlockSplit split;
    split.train.context_length = blocks.context_length;
    split.validation.context_length = blocks.context_length;
    for (std::size_t i = 0; i < n; ++i) {
        auto& dst = is_val[i] ? split.validation.tokens : split.train.tokens;
        const auto b = blocks.block(i);
        dst.insert(dst.end(), b.begin(), b.end());
    }
    return split;
}

template <typename S>
Trainer<S>::Trainer(RunConfig cfg, data::PackedBlocks train, data::PackedBlocks validation, MetricsLog* log)
    : cfg_(std::move(cfg)),
      train_(std::move(train)),
      validation_(std::move(validation)),
      log_(log),
      model_(cfg_.model, cfg_.seed),
      optimizer_(model_.parameters().pointers(), cfg_.optimizer) {
    cfg_.validate();
    if (train_.context_length != cfg_.context_length ||
        (validation_.count() > 0 && validation_.context_length != cfg_.context_length)) {
        throw ConfigError("block length " + std::to_string(train_.context_length) +
                          " does not match context_length " + std::to_string(cfg_.context_length));
    }
    steps_per_epoch_ = train_.count() / cfg_.global_batch_size;
    if (steps_per_epoch_ == 0) {
        throw ConfigError(std::to_string(train_.count()) + " training blocks cannot fill a global batch of " +
                          std::to_string(cfg_.global_batch_size));
    }
    schedule_ = optim::Schedule{cfg_.peak_lr, cfg_.epochs * steps_per_epoch_, cfg_.warmup_fraction};
    schedule_.validate();
    state_.rng_seed = cfg_.seed;
}

template <typename S>
void Trainer<S>::resume(const Checkpoint& ck) {
    restore_checkpoint(ck, model_, &optimizer_);
    state_ = ck.state;
    if (state_.rng_seed != cfg_.seed) {
        throw ConfigError("config mismatch: checkpoint was trained with seed " + std::to_string(state_.rng_seed));
    }
}

template <typename S>
std::vector<std::size_t> Trainer<S>::epoch_order(std::size_t epoch) const {
    std::vector<std::size_t> order(train_.count());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    SeededRng rng = SeededRng(cfg_.seed).fork(epoch + 1);
    rng.shuffle(order);
    return order;
}

template <typename S>
double Trainer<S>::train_step(const std::vector<std::size_t>& order, std::size_t batch) {
    const std::size_t g = cfg_.global_batch_size;
    const std::size_t m = cfg_.micro_batch_size;
    const std::size_t first = batch * g;

    // positions across the whole global batch, so every position weighs the same
    std::vector<std::size_t> counts(g, cfg_.context_length - 1);
    if (cfg_.mask_across_separator) {
        for (std::size_t j = 0; j < g; ++j) {
            const auto blk = train_.block(order[first + j]);
            counts[j] = static_cast<std::size_t>(
                std::count_if(blk.begin(), blk.end() - 1, [](auto id) { return id != data::BpeTokenizer::kEndOfText; }));
        }
    }
    std::size_t total = 0;
    for (auto c : counts) {
        total += c;
    }
    const double denom = total == 0 ? 1.0 : static_cast<double>(total);

    model_.parameters().zero_grad();
    double batch_loss = 0.0;
    for (std::size_t micro = 0; micro < g / m; ++micro) {
        Var<S> micro_loss;
        for (std::size_t j = micro * m; j < (micro + 1) * m; ++j) {
            const auto seq = model_.loss(train_.block(order[first + j]), cfg_.mask_across_separator);
            const auto weighted = ops::scale(seq, static_cast<double>(counts[j]) / denom);
            micro_loss = micro_loss.defined() ? ops::add(micro_loss, weighted) : weighted;
        }
        const double value = static_cast<double>(micro_loss.item());
        if (!std::isfinite(value)) {
            throw DivergenceError("non-finite loss at step " + std::to_string(state_.global_step + 1) +
                                      "; last good checkpoint: " +
                                      (last_checkpoint_.empty() ? "none" : last_checkpoint_.string()),
                                  state_.global_step + 1);
        }
        batch_loss += value;
        backward(micro_loss, S{1});
    }
    const double lr = optim::cosine_lr(state_.global_step + 1, schedule_);
    try {
        optimizer_.step(lr);
    } catch (const DivergenceError& e) {
        throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(state_.global_step + 1) +
                                  "; last good checkpoint: " +
                                  (last_checkpoint_.empty() ? "none" : last_checkpoint_.string()),
                              state_.global_step + 1);
    }
    ++state_.global_step;
    if (log_ != nullptr) {
        log_->step(state_.global_step, state_.epoch + 1, lr, batch_loss);
    }
    return batch_loss;
}

template <typename S>
void Trainer<S>::save(const std::filesystem::path& path) const {
    save_checkpoint(path, cfg_, model_, &optimizer_, state_);
}

template <typename S>
TrainResult Trainer<S>::run() {
    TrainResult result;
    if (log_ != nullptr && state_.global_step == 0) {
        log_->run_start(cfg_, schedule_.total_steps, train_.count(), validation_.count(), model_.alpha_trace());
    }
    const std::filesystem::path dir = cfg_.checkpoint_dir;
    while (state_.epoch < cfg_.epochs) {
        const auto start = std::chrono::steady_clock::now();
        const auto order = epoch_order(state_.epoch);
        while (state_.batch < steps_per_epoch_) {
            if (cfg_.max_steps > 0 && state_.global_step >= cfg_.max_steps) {
                last_checkpoint_ = dir / ("step_" + std::to_string(state_.global_step) + ".blck");
                save(last_checkpoint_);
                result.global_step = state_.global_step;
                result.last_checkpoint = last_checkpoint_;
                return result;
            }
            const double loss = train_step(order, state_.batch);
            ++state_.batch;
            state_.epoch_loss_sum += loss;
            result.step_losses.push_back(loss);
        }

        EpochMetrics em;
        em.epoch = state_.epoch + 1;
        em.step = state_.global_step;
        em.train_loss = steps_per_epoch_ == 0 ? 0.0 : state_.epoch_loss_sum / static_cast<double>(steps_per_epoch_);
        if (validation_.count() > 0) {
            const auto ev = evaluate_perplexity(model_, validation_, cfg_.mask_across_separator);
            em.val_loss = ev.mean_loss;
            em.val_perplexity = ev.perplexity;
            em.val_positions = ev.positions;
        }
        em.alpha = model_.alpha_trace();

        state_.epoch += 1;
        state_.batch = 0;
        state_.epoch_loss_sum = 0.0;
        if (validation_.count() > 0 &&
            (state_.best_val_perplexity == 0.0 || em.val_perplexity < state_.best_val_perplexity)) {
            state_.best_val_perplexity = em.val_perplexity;
            state_.best_epoch = em.epoch;
        }
        last_checkpoint_ = dir / ("epoch_" + std::to_string(em.epoch) + ".blck");
        save(last_checkpoint_);
        em.checkpoint = last_checkpoint_.string();
        em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (log_ != nullptr) {
            log_->epoch(em);
        }

        epoch_val_perplexity_.push_back(em.val_perplexity);
        if (validation_.count() > 0 && em.epoch >= 2 && em.epoch <= 3 &&
            em.val_perplexity >= epoch_val_perplexity_[epoch_val_perplexity_.size() - 2]) {
            const std::string msg = "validation perplexity did not decrease in epoch " + std::to_string(em.epoch) +
                                    " (" + std::to_string(epoch_val_perplexity_[epoch_val_perplexity_.size() - 2]) +
                                    " -> " + std::to_string(em.val_perplexity) + ")";
            if (log_ != nullptr) {
                log_->warning(msg);
            }
            std::filesystem::create_directories(dir);
            std::ofstream(dir / "warnings.jsonl", std::ios::app)
                << nlohmann::json{{"type", "warning"}, {"epoch", em.epoch}, {"message", msg}}.dump() << '\n';
        }
        result.epochs.push_back(std::move(em));
    }
    result.finished = true;
    result.global_step = state_.global_step;
    result.last_checkpoint = last_checkpoint_;
    return result;
}

template class Trainer<float>;
template class Trainer<double>;
template EvalResult evaluate_perplexity(Model<float>&, const data::PackedBlocks&, bool);
template EvalResult evaluate_perplexity(Model<double>&, const data::PackedBlocks&, bool);

}  // namespace blalm::train

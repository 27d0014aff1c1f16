#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "blalm/core/autograd.hpp"

namespace blalm::optim {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.1;

    void validate() const;
};

template <typename S>
struct AdamWState {
    Tensor<S> m;
    Tensor<S> v;
    std::uint64_t step = 0;
};

// Bias-corrected Adam update plus decoupled decay p -= lr * wd * p.
// Throws DivergenceError("gradient divergence") on a non-finite gradient.
template <typename S>
void adamw_step(Parameter<S>& p, AdamWState<S>& state, double lr, const AdamWConfig& cfg);

struct NewtonSchulzConfig {
    double a = 3.4445;
    double b = -4.7750;
    double c = 2.0315;
    int iterations = 5;
};

// X0 = G / ||G||_F, then X <- a X + (b A + c A^2) X with A = X X^T, run on the
// orientation with rows <= cols. An all-zero G maps to zero; `was_zero`
// reports that case when given.
template <typename S>
Tensor<S> newton_schulz_orthogonalize(const Tensor<S>& g, const NewtonSchulzConfig& cfg = {},
                                      bool* was_zero = nullptr);

enum class MuonScale {
    Spectral,  // sqrt(max(1, rows / cols))
    RmsMatch,  // 0.2 * sqrt(max(rows, cols)): update RMS comparable to AdamW's
};

struct MuonConfig {
    double momentum = 0.95;
    bool nesterov = true;
    double weight_decay = 0.1;
    MuonScale scale = MuonScale::RmsMatch;
    NewtonSchulzConfig newton_schulz;

    void validate() const;
};

std::string to_string(MuonScale scale);
MuonScale parse_muon_scale(const std::string& text);

template <typename S>
struct MuonState {
    Tensor<S> momentum;
    std::uint64_t step = 0;
    std::uint64_t zero_updates = 0;  // steps whose orthogonalized input was all zero
};

double muon_scale_factor(std::size_t rows, std::size_t cols, MuonScale scale);

// buf <- mu buf + g; O = NS(nesterov ? g + mu buf : buf);
// p <- p - lr * scale * O - lr * wd * p. ContractViolation unless p is Matrix.
template <typename S>
void muon_step(Parameter<S>& p, MuonState<S>& state, double lr, const MuonConfig& cfg);

// Embedding table, lm head, norm gains, DynMod alpha and the per-head gate
// projections are ScalarLike; any other 2-axis weight is Matrix; other 1-axis
// tensors are ScalarLike. Anything else throws ConfigError naming it.
ShapeClass classify_parameter(const std::string& name, const Shape& shape);

template <typename S>
struct Partition {
    std::vector<Parameter<S>*> matrix;
    std::vector<Parameter<S>*> scalar;
};

// Classifies and records the class on every parameter.
template <typename S>
Partition<S> partition_parameters(const std::vector<Parameter<S>*>& params);

enum class OptimizerKind { AdamW, MuonHybrid };
std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& text);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::MuonHybrid;
    AdamWConfig adamw;
    MuonConfig muon;
    double adamw_lr_scale = 1.0;  // AdamW lr = schedule lr * scale inside the hybrid

    void validate() const;
};

// AdamW on everything, or Muon on Matrix parameters and AdamW on the rest.
template <typename S>
class Optimizer {
public:
    Optimizer(std::vector<Parameter<S>*> params, OptimizerConfig cfg);

    // Applies one update with the gradients currently held by the parameters.
    void step(double lr);

    const OptimizerConfig& config() const noexcept { return cfg_; }
    std::uint64_t steps_taken() const noexcept { return steps_; }
    std::uint64_t muon_zero_updates() const noexcept;
    bool uses_muon(const Parameter<S>& p) const;

    // Named state tensors ("adamw.m/<param>", "adamw.v/<param>", "muon.buf/<param>").
    std::vector<std::pair<std::string, const Tensor<S>*>> state_tensors() const;
    // Restores tensors by name; missing or mis-shaped entries throw InputError.
    void load_state(const std::map<std::string, Tensor<S>>& tensors, std::uint64_t steps);

private:
    std::vector<Parameter<S>*> params_;
    OptimizerConfig cfg_;
    std::vector<bool> muon_;
    std::vector<AdamWState<S>> adam_;
    std::vector<MuonState<S>> muon_state_;
    std::uint64_t steps_ = 0;
};

}  // namespace blalm::optim

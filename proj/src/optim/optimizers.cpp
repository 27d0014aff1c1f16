#include "blalm/optim/optimizers.hpp"

#include <algorithm>
#include <cmath>

#include "core/eigen_view.hpp"

namespace blalm::optim {

using detail::RowMatrix;

void AdamWConfig::validate() const {
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        throw ConfigError("adamw: betas must lie in (0, 1)");
    }
    if (!(eps > 0.0) || !(weight_decay >= 0.0)) {
        throw ConfigError("adamw: eps must be positive and weight_decay nonnegative");
    }
}

namespace {

template <typename S>
void require_finite_grad(const Parameter<S>& p) {
    if (p.grad.shape() != p.value.shape()) {
        throw ContractViolation("gradient shape " + shape_string(p.grad.shape()) + " != value shape " +
                                shape_string(p.value.shape()) + " for " + p.name);
    }
    for (std::size_t i = 0; i < p.grad.size(); ++i) {
        if (!std::isfinite(p.grad[i])) {
            throw DivergenceError("gradient divergence in " + p.name, i);
        }
    }
}

}  // namespace

template <typename S>
void adamw_step(Parameter<S>& p, AdamWState<S>& state, double lr, const AdamWConfig& cfg) {
    require_finite_grad(p);
    if (state.m.shape() != p.value.shape()) {
        state.m = Tensor<S>(p.value.shape());
        state.v = Tensor<S>(p.value.shape());
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    const double decay = 1.0 - lr * cfg.weight_decay;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        const double m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        const double v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        state.m[i] = static_cast<S>(m);
        state.v[i] = static_cast<S>(v);
        const double update = (m / c1) / (std::sqrt(v / c2) + cfg.eps);
        p.value[i] = static_cast<S>(decay * p.value[i] - lr * update);
    }
}

template <typename S>
Tensor<S> newton_schulz_orthogonalize(const Tensor<S>& g, const NewtonSchulzConfig& cfg, bool* was_zero) {
    detail::require_rank(g.shape(), 2, "newton_schulz_orthogonalize");
    if (cfg.iterations < 0) {
        throw ConfigError("newton_schulz: iterations must be nonnegative");
    }
    double norm = 0.0;
    for (S x : g.data()) {
        norm += static_cast<double>(x) * static_cast<double>(x);
    }
    norm = std::sqrt(norm);
    if (was_zero != nullptr) {
        *was_zero = norm == 0.0;
    }
    if (norm == 0.0) {
        return Tensor<S>(g.shape());
    }
    if (!std::isfinite(norm)) {
        throw DivergenceError("newton_schulz: non-finite input", 0);
    }
    const bool tall = g.rows() > g.cols();
    RowMatrix<S> x = tall ? RowMatrix<S>(detail::view(g).transpose()) : RowMatrix<S>(detail::view(g));
    x /= static_cast<S>(norm);
    const S a = static_cast<S>(cfg.a);
    const S b = static_cast<S>(cfg.b);
    const S c = static_cast<S>(cfg.c);
    for (int it = 0; it < cfg.iterations; ++it) {
        const RowMatrix<S> gram = x * x.transpose();
        const RowMatrix<S> poly = b * gram + c * (gram * gram);
        x = a * x + poly * x;
    }
    Tensor<S> out(g.shape());
    if (tall) {
        detail::view(out) = x.transpose();
    } else {
        detail::view(out) = x;
    }
    return out;
}

void MuonConfig::validate() const {
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw ConfigError("muon: momentum must lie in [0, 1)");
    }
    if (!(weight_decay >= 0.0)) {
        throw ConfigError("muon: weight_decay must be nonnegative");
    }
    if (newton_schulz.iterations < 1) {
        throw ConfigError("muon: newton_schulz iterations must be >= 1");
    }
}

std::string to_string(MuonScale scale) { return scale == MuonScale::Spectral ? "spectral" : "rms_match"; }

MuonScale parse_muon_scale(const std::string& text) {
    if (text == "spectral") return MuonScale::Spectral;
    if (text == "rms_match") return MuonScale::RmsMatch;
    throw ConfigError("unknown muon update scale '" + text + "' (expected spectral or rms_match)");
}

double muon_scale_factor(std::size_t rows, std::size_t cols, MuonScale scale) {
    const double r = static_cast<double>(rows);
    const double c = static_cast<double>(cols);
    if (scale == MuonScale::Spectral) {
        return std::sqrt(std::max(1.0, r / c));
    }
    return 0.2 * std::sqrt(std::max(r, c));
}

template <typename S>
void muon_step(Parameter<S>& p, MuonState<S>& state, double lr, const MuonConfig& cfg) {
    if (p.shape_class != ShapeClass::Matrix || p.value.rank() != 2) {
        throw ContractViolation("muon_step applied to non-matrix parameter " + p.name);
    }
    require_finite_grad(p);
    if (state.momentum.shape() != p.value.shape()) {
        state.momentum = Tensor<S>(p.value.shape());
    }
    ++state.step;
    const S mu = static_cast<S>(cfg.momentum);
    Tensor<S> input(p.value.shape());
    for (std::size_t i = 0; i < p.value.size(); ++i) {
        state.momentum[i] = mu * state.momentum[i] + p.grad[i];
        input[i] = cfg.nesterov ? p.grad[i] + mu * state.momentum[i] : state.momentum[i];
    }
    bool zero = false;
    const Tensor<S> ortho = newton_schulz_orthogonalize(input, cfg.newton_schulz, &zero);
    if (zero) {
        ++state.zero_updates;
    }
    const double step = lr * muon_scale_factor(p.value.rows(), p.value.cols(), cfg.scale);
    const double decay = 1.0 - lr * cfg.weight_decay;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
        p.value[i] = static_cast<S>(decay * p.value[i] - step * ortho[i]);
    }
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

ShapeClass classify_parameter(const std::string& name, const Shape& shape) {
    if (shape.size() == 1) {
        return ShapeClass::ScalarLike;
    }
    if (shape.size() != 2) {
        throw ConfigError("cannot classify parameter " + name + " of shape " + shape_string(shape) +
                          " (expected 1 or 2 axes)");
    }
    const bool scalar_like = name.rfind("embedding", 0) == 0 || name.rfind("lm_head", 0) == 0 ||
                             ends_with(name, ".gain") || ends_with(name, ".alpha") || ends_with(name, ".W_i") ||
                             ends_with(name, ".W_f") || ends_with(name, ".W_o");
    return scalar_like ? ShapeClass::ScalarLike : ShapeClass::Matrix;
}

template <typename S>
Partition<S> partition_parameters(const std::vector<Parameter<S>*>& params) {
    Partition<S> out;
    for (auto* p : params) {
        p->shape_class = classify_parameter(p->name, p->value.shape());
        (p->shape_class == ShapeClass::Matrix ? out.matrix : out.scalar).push_back(p);
    }
    return out;
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::AdamW ? "adamw" : "muon"; }

OptimizerKind parse_optimizer_kind(const std::string& text) {
    if (text == "adamw") return OptimizerKind::AdamW;
    if (text == "muon") return OptimizerKind::MuonHybrid;
    throw ConfigError("unknown optimizer '" + text + "' (expected adamw or muon)");
}

void OptimizerConfig::validate() const {
    adamw.validate();
    muon.validate();
    if (!(adamw_lr_scale > 0.0)) {
        throw ConfigError("adamw_lr_scale must be positive");
    }
}

template <typename S>
Optimizer<S>::Optimizer(std::vector<Parameter<S>*> params, OptimizerConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    partition_parameters(params_);
    for (auto* p : params_) {
        muon_.push_back(cfg_.kind == OptimizerKind::MuonHybrid && p->shape_class == ShapeClass::Matrix);
    }
    adam_.resize(params_.size());
    muon_state_.resize(params_.size());
}

template <typename S>
void Optimizer<S>::step(double lr) {
    // validate everything first so a bad gradient leaves all parameters untouched
    for (auto* p : params_) {
        require_finite_grad(*p);
    }
    const double adam_lr = cfg_.kind == OptimizerKind::MuonHybrid ? lr * cfg_.adamw_lr_scale : lr;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (muon_[i]) {
            muon_step(*params_[i], muon_state_[i], lr, cfg_.muon);
        } else {
            adamw_step(*params_[i], adam_[i], adam_lr, cfg_.adamw);
        }
    }
    ++steps_;
}

template <typename S>
std::uint64_t Optimizer<S>::muon_zero_updates() const noexcept {
    std::uint64_t n = 0;
    for (const auto& s : muon_state_) {
        n += s.zero_updates;
    }
    return n;
}

template <typename S>
bool Optimizer<S>::uses_muon(const Parameter<S>& p) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i] == &p) {
            return muon_[i];
        }
    }
    throw ContractViolation("parameter " + p.name + " is not managed by this optimizer");
}

template <typename S>
std::vector<std::pair<std::string, const Tensor<S>*>> Optimizer<S>::state_tensors() const {
    std::vector<std::pair<std::string, const Tensor<S>*>> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& name = params_[i]->name;
        if (muon_[i]) {
            out.emplace_back("muon.buf/" + name, &muon_state_[i].momentum);
        } else {
            out.emplace_back("adamw.m/" + name, &adam_[i].m);
            out.emplace_back("adamw.v/" + name, &adam_[i].v);
        }
    }
    return out;
}

template <typename S>
void Optimizer<S>::load_state(const std::map<std::string, Tensor<S>>& tensors, std::uint64_t steps) {
    auto fetch = [&](const std::string& key, const Parameter<S>& p) -> Tensor<S> {
        auto it = tensors.find(key);
        if (it == tensors.end()) {
            throw InputError("optimizer state lacks " + key);
        }
        // never-stepped states are stored empty
        if (steps > 0 && it->second.shape() != p.value.shape()) {
            throw InputError("optimizer state " + key + " has shape " + shape_string(it->second.shape()));
        }
        return it->second;
    };
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& p = *params_[i];
        if (muon_[i]) {
            muon_state_[i].momentum = fetch("muon.buf/" + p.name, p);
            muon_state_[i].step = steps;
        } else {
            adam_[i].m = fetch("adamw.m/" + p.name, p);
            adam_[i].v = fetch("adamw.v/" + p.name, p);
            adam_[i].step = steps;
        }
    }
    steps_ = steps;
}

#define BLALM_INSTANTIATE_OPTIM(S)                                                                        \
    template void adamw_step(Parameter<S>&, AdamWState<S>&, double, const AdamWConfig&);                  \
    template Tensor<S> newton_schulz_orthogonalize(const Tensor<S>&, const NewtonSchulzConfig&, bool*);   \
    template void muon_step(Parameter<S>&, MuonState<S>&, double, const MuonConfig&);                     \
    template Partition<S> partition_parameters(const std::vector<Parameter<S>*>&);                        \
    template class Optimizer<S>;

BLALM_INSTANTIATE_OPTIM(float)
BLALM_INSTANTIATE_OPTIM(double)

#undef BLALM_INSTANTIATE_OPTIM

}  // namespace blalm::optim

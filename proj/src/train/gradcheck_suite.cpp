#include "blalm/train/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <memory>

#include "blalm/core/errors.hpp"
#include "blalm/core/grad_check.hpp"
#include "blalm/core/ops.hpp"
#include "blalm/core/parameter_set.hpp"
#include "blalm/layers/layers.hpp"
#include "blalm/mixers/attention.hpp"
#include "blalm/mixers/feature_maps.hpp"
#include "blalm/mixers/mixer.hpp"

namespace blalm::train {

namespace {

using V = Var<double>;

Tensor<double> gaussian(const Shape& shape, SeededRng& rng, double std = 1.0) {
    Tensor<double> t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = rng.normal(0.0, std);
    }
    return t;
}

// Identity forward; backward scales the incoming gradient.
V scale_gradient(const V& x, double factor) {
    return make_op<double>(x.value(), {x}, [factor](Node<double>& self) {
        auto& p = self.parent(0);
        if (!p.requires_grad) {
            return;
        }
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += factor * self.grad[i];
        }
    });
}

struct Case {
    ParameterSet<double> params;
    std::function<V(ParameterSet<double>&)> forward;
};

LayerConfig layer_for(std::size_t d) {
    LayerConfig l;
    l.hidden_size = d;
    l.num_heads = 2;
    l.intermediate_size = d + d / 2;
    l.short_conv_kernel = 3;
    return l;
}

std::unique_ptr<Case> make_case(const std::string& family, std::size_t d, std::size_t steps, SeededRng& rng,
                                const GradcheckOptions& opt) {
    auto c = std::make_unique<Case>();
    auto& ps = c->params;
    const auto layer = layer_for(d);
    const std::size_t heads = layer.num_heads;
    const std::size_t dh = d / heads;
    auto leaf = [&](const std::string& name, const Shape& shape, double std = 1.0) {
        ps.add(name, gaussian(shape, rng, std), ShapeClass::ScalarLike);
    };

    if (family == "rmsnorm") {
        leaf("x", {steps, d});
        leaf("gain", {d});
        c->forward = [](auto& p) { return layers::rmsnorm(p.bind("x"), p.bind("gain"), 1e-6); };
    } else if (family == "swiglu_ffn") {
        const std::size_t f = layer.intermediate_size;
        leaf("x", {steps, d});
        leaf("W_gate", {d, f}, 0.5);
        leaf("W_up", {d, f}, 0.5);
        leaf("W_down", {f, d}, 0.5);
        c->forward = [](auto& p) {
            return layers::swiglu_ffn(p.bind("x"), p.bind("W_gate"), p.bind("W_up"), p.bind("W_down"));
        };
    } else if (family == "rope_apply") {
        leaf("x", {steps, d});
        c->forward = [steps, heads](auto& p) {
            std::vector<std::size_t> pos(steps);
            for (std::size_t t = 0; t < steps; ++t) {
                pos[t] = 3 * t + 1;
            }
            return layers::rope_apply(p.bind("x"), pos, heads, 10000.0);
        };
    } else if (family == "short_conv") {
        leaf("x", {steps, d});
        leaf("kernel", {d, 3});
        c->forward = [](auto& p) { return layers::short_conv(p.bind("x"), p.bind("kernel")); };
    } else if (family == "causal_attention" || family == "swa_attention") {
        leaf("q", {steps, heads, dh});
        leaf("k", {steps, heads, dh});
        leaf("v", {steps, heads, dh});
        const bool swa = family == "swa_attention";
        c->forward = [swa](auto& p) {
            return swa ? mixers::swa_attention(p.bind("q"), p.bind("k"), p.bind("v"), 2)
                       : mixers::causal_attention(p.bind("q"), p.bind("k"), p.bind("v"));
        };
    } else if (family == "mlstm" || family == "mlstm_full" || family == "configured_mixer") {
        mixers::MixerConfig mc;
        if (family == "configured_mixer") {
            if (!opt.configured_mixer) {
                throw ConfigError("configured_mixer needs a mixer configuration");
            }
            mc = *opt.configured_mixer;
            mc.swa_window = std::min<std::size_t>(mc.swa_window, 2);
            mc.hedgehog_feature_dim = 0;
            mc.validate(layer);
        } else if (family == "mlstm_full") {
            mc.short_conv = true;
            mc.hedgehog = true;
            mc.swa = mixers::SwaMode::DynModBounded;
            mc.swa_window = 2;
        }
        leaf("x", {steps, d}, 0.5);
        mixers::add_mixer_parameters(ps, "mixer", layer, mc, rng, 2);
        // move gates away from their tiny init so their gradients are not negligible
        for (const char* g : {"mixer.W_i", "mixer.W_f", "mixer.W_o"}) {
            if (!ps.contains(g)) {
                continue;
            }
            ps.get(g).value = gaussian(ps.get(g).value.shape(), rng, 0.5);
        }
        if (ps.contains("mixer.alpha")) {
            ps.get("mixer.alpha").value[0] = 0.4;
        }
        c->forward = [layer, mc](auto& p) {
            const auto w = mixers::bind_mixer(p, "mixer");
            return mixers::mixer_forward(p.bind("x"), layer, mc, w);
        };
    } else if (family == "hedgehog_map") {
        leaf("x", {steps, heads, dh});
        leaf("W_phi", {dh, std::max<std::size_t>(dh / 2, 1)});
        c->forward = [](auto& p) { return mixers::hedgehog_map(p.bind("x"), p.bind("W_phi")); };
    } else if (family.rfind("combine_", 0) == 0) {
        const auto mode = family == "combine_fixed_half" ? mixers::CombineMode::FixedHalf
                          : family == "combine_dynmod"   ? mixers::CombineMode::DynMod
                                                         : mixers::CombineMode::DynModBounded;
        leaf("a", {steps, d});
        leaf("b", {steps, d});
        ps.add("alpha", Tensor<double>({1}, {0.7}), ShapeClass::ScalarLike);
        c->forward = [mode](auto& p) { return mixers::combine(p.bind("a"), p.bind("b"), mode, p.bind("alpha")); };
    } else if (family == "cross_entropy_head") {
        const std::size_t vocab = 11;
        leaf("h", {steps, d});
        leaf("gain", {d});
        leaf("W_head", {vocab, d}, 0.2);
        std::vector<std::int32_t> targets(steps);
        for (auto& t : targets) {
            t = static_cast<std::int32_t>(rng.below(vocab));
        }
        c->forward = [targets](auto& p) {
            const auto h = layers::rmsnorm(p.bind("h"), p.bind("gain"), 1e-6);
            return ops::cross_entropy(layers::lm_head(h, p.bind("W_head")), std::span<const std::int32_t>(targets));
        };
    } else {
        throw ConfigError("unknown gradcheck family '" + family + "'");
    }
    return c;
}

}  // namespace

std::vector<std::string> gradcheck_families() {
    return {"rmsnorm",        "swiglu_ffn",         "rope_apply",     "short_conv",
            "causal_attention", "swa_attention",    "mlstm",          "mlstm_full",
            "hedgehog_map",   "combine_fixed_half", "combine_dynmod", "combine_dynmod_bounded",
            "cross_entropy_head"};
}

std::vector<GradcheckRow> run_gradcheck_suite(const GradcheckOptions& opt) {
    auto families = opt.only.empty() ? gradcheck_families() : opt.only;
    if (opt.configured_mixer && opt.only.empty()) {
        families.push_back("configured_mixer");
    }
    if (!opt.corrupt.empty() && std::find(families.begin(), families.end(), opt.corrupt) == families.end()) {
        throw ConfigError("cannot corrupt unknown family '" + opt.corrupt + "'");
    }
    std::vector<GradcheckRow> rows;
    std::uint64_t case_index = 0;
    for (const auto& family : families) {
        for (auto d : opt.widths) {
            for (auto steps : opt.lengths) {
                SeededRng rng = SeededRng(opt.seed).fork(++case_index);
                auto c = make_case(family, d, steps, rng, opt);
                const bool corrupt = family == opt.corrupt;
                Tensor<double> projection;
                SeededRng proj_rng = rng.fork(99);
                auto fn = [&]() {
                    V out = c->forward(c->params);
                    if (corrupt) {
                        out = scale_gradient(out, 1.5);
                    }
                    if (projection.shape() != out.shape()) {
                        projection = gaussian(out.shape(), proj_rng);
                    }
                    return ops::sum(ops::mul(out, V::constant(projection)));
                };
                const auto report = grad_check(fn, c->params.pointers(), opt.epsilon, opt.tolerance);
                GradcheckRow row;
                row.family = family;
                row.d = d;
                row.steps = steps;
                row.max_rel_error = report.max_rel_error;
                row.passed = report.passed();
                for (const auto& e : report.entries) {
                    if (e.max_rel_error == report.max_rel_error) {
                        row.worst_parameter = e.name;
                        row.analytic = e.analytic;
                        row.numeric = e.numeric;
                    }
                }
                rows.push_back(std::move(row));
            }
        }
    }
    return rows;
}

}  // namespace blalm::train

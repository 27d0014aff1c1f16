#include "blalm/train/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

#include "blalm/core/errors.hpp"

namespace blalm::train {

namespace {

void check_keys(const YAML::Node& node, const std::set<std::string>& allowed, const std::string& section) {
    if (!node) {
        return;
    }
    if (!node.IsMap()) {
        throw ConfigError("section '" + section + "' must be a mapping");
    }
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (!allowed.contains(key)) {
            throw ConfigError("unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
        }
    }
}

template <typename T>
void read(const YAML::Node& node, const char* key, T& out, const std::string& section) {
    if (!node || !node[key]) {
        return;
    }
    try {
        out = node[key].as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError("bad value for '" + section + "." + key + "': '" + YAML::Dump(node[key]) + "'");
    }
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void apply_override(YAML::Node& root, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "' is not key=value");
    }
    const std::string path = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    std::vector<std::string> parts;
    std::stringstream ss(path);
    for (std::string p; std::getline(ss, p, '.');) {
        if (p.empty()) {
            throw ConfigError("override key '" + path + "' has an empty component");
        }
        parts.push_back(p);
    }
    // yaml-cpp nodes are handles; reassigning a handle would rebind it, so walk with reset()
    YAML::Node node;
    node.reset(root);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node[parts[i]] || !node[parts[i]].IsMap()) {
            node[parts[i]] = YAML::Node(YAML::NodeType::Map);
        }
        YAML::Node child = node[parts[i]];
        node.reset(child);
    }
    node[parts.back()] = YAML::Load(value.empty() ? "''" : value);
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

std::string to_string(Precision p) { return p == Precision::Float32 ? "float32" : "float64"; }

Precision parse_precision(const std::string& text) {
    if (text == "float32") {
        return Precision::Float32;
    }
    if (text == "float64") {
        return Precision::Float64;
    }
    throw ConfigError("unknown precision '" + text + "' (float32 | float64)");
}

void ModelConfig::validate() const {
    layer.validate();
    mixer.validate(layer);
    if (num_layers == 0) {
        throw ConfigError("num_layers must be positive");
    }
    if (vocab_size < 259) {
        throw ConfigError("vocab_size must cover the 256 bytes and 3 special tokens");
    }
}

void RunConfig::validate() const {
    model.validate();
    optimizer.validate();
    if (!(peak_lr > 0.0) || !(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
        throw ConfigError("lr must be positive and warmup_fraction in [0, 1)");
    }
    if (context_length < 2) {
        throw ConfigError("context_length must be at least 2");
    }
    if (micro_batch_size == 0 || global_batch_size == 0 || global_batch_size % micro_batch_size != 0) {
        throw ConfigError("global_batch_size " + std::to_string(global_batch_size) +
                          " must be a positive multiple of micro_batch_size " + std::to_string(micro_batch_size));
    }
    if (epochs == 0 || epochs > 10) {
        throw ConfigError("epochs must be in [1, 10], got " + std::to_string(epochs));
    }
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
        throw ConfigError("validation_fraction must be in [0, 1)");
    }
}

RunConfig parse_run_config(const std::string& yaml_text, const std::vector<std::string>& overrides) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("config is not valid YAML: ") + e.what());
    }
    if (!root || root.IsNull()) {
        root = YAML::Node(YAML::NodeType::Map);
    }
    for (const auto& o : overrides) {
        apply_override(root, o);
    }
    check_keys(root, {"model", "optimizer", "training", "data"}, "");

    RunConfig cfg;
    cfg.overrides = overrides;
    const auto model = root["model"];
    check_keys(model,
               {"vocab_size", "num_layers", "hidden_size", "intermediate_size", "num_heads", "rope_base",
                "norm_epsilon", "tie_embeddings", "mixer"},
               "model");
    auto& m = cfg.model;
    read(model, "vocab_size", m.vocab_size, "model");
    read(model, "num_layers", m.num_layers, "model");
    read(model, "hidden_size", m.layer.hidden_size, "model");
    read(model, "intermediate_size", m.layer.intermediate_size, "model");
    read(model, "num_heads", m.layer.num_heads, "model");
    read(model, "rope_base", m.layer.rope_base, "model");
    read(model, "norm_epsilon", m.layer.norm_epsilon, "model");
    read(model, "tie_embeddings", m.tie_embeddings, "model");
    const auto mixer = model ? model["mixer"] : YAML::Node();
    check_keys(mixer,
               {"kind", "swa", "swa_window", "hedgehog", "hedgehog_feature_dim", "short_conv", "short_conv_kernel",
                "separate_swa_projections"},
               "model.mixer");
    std::string kind = mixers::to_string(m.mixer.kind);
    std::string swa = mixers::to_string(m.mixer.swa);
    read(mixer, "kind", kind, "model.mixer");
    read(mixer, "swa", swa, "model.mixer");
    m.mixer.kind = mixers::parse_mixer_kind(kind);
    m.mixer.swa = mixers::parse_swa_mode(swa);
    read(mixer, "swa_window", m.mixer.swa_window, "model.mixer");
    read(mixer, "hedgehog", m.mixer.hedgehog, "model.mixer");
    read(mixer, "hedgehog_feature_dim", m.mixer.hedgehog_feature_dim, "model.mixer");
    read(mixer, "short_conv", m.mixer.short_conv, "model.mixer");
    read(mixer, "short_conv_kernel", m.layer.short_conv_kernel, "model.mixer");
    read(mixer, "separate_swa_projections", m.mixer.separate_swa_projections, "model.mixer");

    const auto opt = root["optimizer"];
    check_keys(opt, {"kind", "lr", "warmup_fraction", "adamw_lr_scale", "adamw", "muon"}, "optimizer");
    std::string okind = optim::to_string(cfg.optimizer.kind);
    read(opt, "kind", okind, "optimizer");
    cfg.optimizer.kind = optim::parse_optimizer_kind(okind);
    read(opt, "lr", cfg.peak_lr, "optimizer");
    read(opt, "warmup_fraction", cfg.warmup_fraction, "optimizer");
    read(opt, "adamw_lr_scale", cfg.optimizer.adamw_lr_scale, "optimizer");
    const auto adamw = opt ? opt["adamw"] : YAML::Node();
    check_keys(adamw, {"beta1", "beta2", "eps", "weight_decay"}, "optimizer.adamw");
    read(adamw, "beta1", cfg.optimizer.adamw.beta1, "optimizer.adamw");
    read(adamw, "beta2", cfg.optimizer.adamw.beta2, "optimizer.adamw");
    read(adamw, "eps", cfg.optimizer.adamw.eps, "optimizer.adamw");
    read(adamw, "weight_decay", cfg.optimizer.adamw.weight_decay, "optimizer.adamw");
    const auto muon = opt ? opt["muon"] : YAML::Node();
    check_keys(muon, {"momentum", "nesterov", "weight_decay", "scale", "ns_iterations"}, "optimizer.muon");
    read(muon, "momentum", cfg.optimizer.muon.momentum, "optimizer.muon");
    read(muon, "nesterov", cfg.optimizer.muon.nesterov, "optimizer.muon");
    read(muon, "weight_decay", cfg.optimizer.muon.weight_decay, "optimizer.muon");
    std::string scale = optim::to_string(cfg.optimizer.muon.scale);
    read(muon, "scale", scale, "optimizer.muon");
    cfg.optimizer.muon.scale = optim::parse_muon_scale(scale);
    read(muon, "ns_iterations", cfg.optimizer.muon.newton_schulz.iterations, "optimizer.muon");

    const auto tr = root["training"];
    check_keys(tr,
               {"context_length", "global_batch_size", "micro_batch_size", "epochs", "seed", "precision",
                "deterministic", "mask_across_separator", "validation_fraction", "max_steps"},
               "training");
    read(tr, "context_length", cfg.context_length, "training");
    read(tr, "global_batch_size", cfg.global_batch_size, "training");
    read(tr, "micro_batch_size", cfg.micro_batch_size, "training");
    read(tr, "epochs", cfg.epochs, "training");
    read(tr, "seed", cfg.seed, "training");
    std::string precision = to_string(cfg.precision);
    read(tr, "precision", precision, "training");
    cfg.precision = parse_precision(precision);
    read(tr, "deterministic", cfg.deterministic, "training");
    read(tr, "mask_across_separator", cfg.mask_across_separator, "training");
    read(tr, "validation_fraction", cfg.validation_fraction, "training");
    read(tr, "max_steps", cfg.max_steps, "training");

    const auto data = root["data"];
    check_keys(data, {"train_blocks", "validation_blocks", "checkpoint_dir"}, "data");
    read(data, "train_blocks", cfg.train_blocks, "data");
    read(data, "validation_blocks", cfg.validation_blocks, "data");
    read(data, "checkpoint_dir", cfg.checkpoint_dir, "data");

    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::ifstream f(path);
    if (!f) {
        throw InputError("cannot open config " + path.string());
    }
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_run_config(ss.str(), overrides);
}

std::string model_yaml(const ModelConfig& m, Precision precision) {
    std::ostringstream os;
    os << "model:\n"
       << "  vocab_size: " << m.vocab_size << "\n"
       << "  num_layers: " << m.num_layers << "\n"
       << "  hidden_size: " << m.layer.hidden_size << "\n"
       << "  intermediate_size: " << m.layer.intermediate_size << "\n"
       << "  num_heads: " << m.layer.num_heads << "\n"
       << "  rope_base: " << fmt(m.layer.rope_base) << "\n"
       << "  norm_epsilon: " << fmt(m.layer.norm_epsilon) << "\n"
       << "  tie_embeddings: " << (m.tie_embeddings ? "true" : "false") << "\n"
       << "  mixer:\n"
       << "    kind: " << mixers::to_string(m.mixer.kind) << "\n"
       << "    swa: " << mixers::to_string(m.mixer.swa) << "\n"
       << "    swa_window: " << m.mixer.swa_window << "\n"
       << "    hedgehog: " << (m.mixer.hedgehog ? "true" : "false") << "\n"
       << "    hedgehog_feature_dim: " << m.mixer.hedgehog_feature_dim << "\n"
       << "    short_conv: " << (m.mixer.short_conv ? "true" : "false") << "\n"
       << "    short_conv_kernel: " << m.layer.short_conv_kernel << "\n"
       << "    separate_swa_projections: " << (m.mixer.separate_swa_projections ? "true" : "false") << "\n"
       << "# precision: " << to_string(precision) << "\n";
    return os.str();
}

std::uint64_t model_digest(const ModelConfig& model, Precision precision) {
    return fnv1a(model_yaml(model, precision));
}

std::string to_yaml(const RunConfig& c) {
    std::string model = model_yaml(c.model, c.precision);
    model.erase(model.rfind("# precision"));
    std::ostringstream os;
    const auto& a = c.optimizer.adamw;
    const auto& mu = c.optimizer.muon;
    os << model << "optimizer:\n"
       << "  kind: " << optim::to_string(c.optimizer.kind) << "\n"
       << "  lr: " << fmt(c.peak_lr) << "\n"
       << "  warmup_fraction: " << fmt(c.warmup_fraction) << "\n"
       << "  adamw_lr_scale: " << fmt(c.optimizer.adamw_lr_scale) << "\n"
       << "  adamw:\n"
       << "    beta1: " << fmt(a.beta1) << "\n"
       << "    beta2: " << fmt(a.beta2) << "\n"
       << "    eps: " << fmt(a.eps) << "\n"
       << "    weight_decay: " << fmt(a.weight_decay) << "\n"
       << "  muon:\n"
       << "    momentum: " << fmt(mu.momentum) << "\n"
       << "    nesterov: " << (mu.nesterov ? "true" : "false") << "\n"
       << "    weight_decay: " << fmt(mu.weight_decay) << "\n"
       << "    scale: " << optim::to_string(mu.scale) << "\n"
       << "    ns_iterations: " << mu.newton_schulz.iterations << "\n"
       << "training:\n"
       << "  context_length: " << c.context_length << "\n"
       << "  global_batch_size: " << c.global_batch_size << "\n"
       << "  micro_batch_size: " << c.micro_batch_size << "\n"
       << "  epochs: " << c.epochs << "\n"
       << "  seed: " << c.seed << "\n"
       << "  precision: " << to_string(c.precision) << "\n"
       << "  deterministic: " << (c.deterministic ? "true" : "false") << "\n"
       << "  mask_across_separator: " << (c.mask_across_separator ? "true" : "false") << "\n"
       << "  validation_fraction: " << fmt(c.validation_fraction) << "\n"
       << "  max_steps: " << c.max_steps << "\n"
       << "data:\n"
       << "  train_blocks: " << YAML::Dump(YAML::Node(c.train_blocks)) << "\n"
       << "  validation_blocks: " << YAML::Dump(YAML::Node(c.validation_blocks)) << "\n"
       << "  checkpoint_dir: " << YAML::Dump(YAML::Node(c.checkpoint_dir)) << "\n";
    return os.str();
}

}  // namespace blalm::train

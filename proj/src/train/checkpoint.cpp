#include "blalm/train/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "core/le_io.hpp"

namespace blalm::train {

namespace {

constexpr char kMagic[4] = {'B', 'L', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

std::string state_json(const TrainerState& s) {
    nlohmann::json j = {{"epoch", s.epoch},
                        {"batch", s.batch},
                        {"global_step", s.global_step},
                        {"epoch_loss_sum", s.epoch_loss_sum},
                        {"rng", {{"algorithm", std::string(SeededRng::kAlgorithm)},
                                 {"seed", s.rng_seed},
                                 {"counter", s.rng_counter}}},
                        {"best_val_perplexity", s.best_val_perplexity},
                        {"best_epoch", s.best_epoch}};
    return j.dump();
}

TrainerState parse_state(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        TrainerState s;
        s.epoch = j.at("epoch").get<std::size_t>();
        s.batch = j.at("batch").get<std::size_t>();
        s.global_step = j.at("global_step").get<std::uint64_t>();
        s.epoch_loss_sum = j.at("epoch_loss_sum").get<double>();
        s.rng_seed = j.at("rng").at("seed").get<std::uint64_t>();
        s.rng_counter = j.at("rng").at("counter").get<std::uint64_t>();
        s.best_val_perplexity = j.at("best_val_perplexity").get<double>();
        s.best_epoch = j.at("best_epoch").get<std::size_t>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("checkpoint trainer state: ") + e.what());
    }
}

void put_string(std::ostream& out, const std::string& s) {
    io::put<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, std::uint64_t limit) {
    const auto n = io::get<std::uint64_t>(in);
    if (n > limit) {
        throw InputError("checkpoint string length " + std::to_string(n) + " is implausible");
    }
    std::string s(n, '\0');
    if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
        throw InputError("unexpected end of file");
    }
    return s;
}

template <typename S>
void put_tensor(std::ostream& out, const std::string& name, const Tensor<S>& t) {
    put_string(out, name);
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) {
        io::put<std::uint64_t>(out, d);
    }
    io::put<std::uint64_t>(out, t.size() * sizeof(S));
    io::put_array(out, t.raw(), t.size());
}

template <typename S>
Tensor<S> to_tensor(const Checkpoint::Blob& blob, const std::string& name) {
    Tensor<S> t(blob.shape);
    if (blob.bytes.size() != t.size() * sizeof(S)) {
        throw InputError("checkpoint tensor " + name + " has " + std::to_string(blob.bytes.size()) +
                         " bytes for shape " + shape_string(blob.shape));
    }
    // stored little-endian; reinterpret through the same decoder as the header fields
    std::string raw(reinterpret_cast<const char*>(blob.bytes.data()), blob.bytes.size());
    std::istringstream in(raw);
    io::get_array(in, t.raw(), t.size());
    return t;
}

}  // namespace

template <typename S>
void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, const Model<S>& model,
                     const optim::Optimizer<S>* optimizer, const TrainerState& state) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    // write then rename so a crash never leaves a truncated checkpoint under the final name
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) {
            throw InputError("cannot write checkpoint " + tmp.string());
        }
        f.write(kMagic, 4);
        io::put<std::uint32_t>(f, kVersion);
        io::put<std::uint64_t>(f, model_digest(model.config(), cfg.precision));
        io::put<std::uint32_t>(f, sizeof(S));
        put_string(f, to_yaml(cfg));
        put_string(f, state_json(state));
        const auto& params = model.parameters();
        std::vector<std::pair<std::string, const Tensor<S>*>> tensors;
        for (std::size_t i = 0; i < params.size(); ++i) {
            tensors.emplace_back("param/" + params[i].name, &params[i].value);
        }
        if (optimizer != nullptr) {
            for (const auto& [name, t] : optimizer->state_tensors()) {
                tensors.emplace_back("optim/" + name, t);
            }
        }
        io::put<std::uint64_t>(f, tensors.size());
        for (const auto& [name, t] : tensors) {
            put_tensor(f, name, *t);
        }
        if (!f) {
            throw InputError("failed writing checkpoint " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw InputError("cannot open checkpoint " + path.string());
    }
    const auto size = std::filesystem::file_size(path);
    char magic[4] = {};
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0) {
        throw InputError(path.string() + " is not a checkpoint");
    }
    Checkpoint ck;
    ck.version = io::get<std::uint32_t>(f);
    if (ck.version != kVersion) {
        throw InputError(path.string() + ": unsupported checkpoint version " + std::to_string(ck.version));
    }
    ck.digest = io::get<std::uint64_t>(f);
    ck.scalar_bytes = io::get<std::uint32_t>(f);
    if (ck.scalar_bytes != 4 && ck.scalar_bytes != 8) {
        throw InputError(path.string() + ": scalar width " + std::to_string(ck.scalar_bytes));
    }
    ck.config_yaml = get_string(f, size);
    ck.state = parse_state(get_string(f, size));
    try {
        ck.config = parse_run_config(ck.config_yaml);
    } catch (const ConfigError& e) {
        throw InputError(path.string() + ": stored config is invalid: " + e.what());
    }
    const auto count = io::get<std::uint64_t>(f);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name = get_string(f, size);
        Checkpoint::Blob blob;
        const auto rank = io::get<std::uint32_t>(f);
        if (rank > 8) {
            throw InputError(path.string() + ": tensor " + name + " has rank " + std::to_string(rank));
        }
        for (std::uint32_t r = 0; r < rank; ++r) {
            blob.shape.push_back(static_cast<std::size_t>(io::get<std::uint64_t>(f)));
        }
        const auto bytes = io::get<std::uint64_t>(f);
        if (bytes > size) {
            throw InputError(path.string() + ": tensor " + name + " is truncated");
        }
        blob.bytes.resize(bytes);
        if (bytes > 0 && !f.read(reinterpret_cast<char*>(blob.bytes.data()), static_cast<std::streamsize>(bytes))) {
            throw InputError(path.string() + ": tensor " + name + " is truncated");
        }
        ck.tensors.emplace(name, std::move(blob));
    }
    return ck;
}

template <typename S>
void restore_checkpoint(const Checkpoint& ck, Model<S>& model, optim::Optimizer<S>* optimizer) {
    const auto precision = sizeof(S) == 4 ? Precision::Float32 : Precision::Float64;
    if (ck.scalar_bytes != sizeof(S)) {
        throw ConfigError("config mismatch: checkpoint holds " + std::to_string(ck.scalar_bytes * 8) +
                          "-bit values, model is " + std::to_string(sizeof(S) * 8) + "-bit");
    }
    if (ck.digest != model_digest(model.config(), precision)) {
        throw ConfigError("config mismatch: checkpoint architecture\n" + model_yaml(ck.config.model, precision) +
                          "differs from\n" + model_yaml(model.config(), precision));
    }
    auto& params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto key = "param/" + params[i].name;
        const auto it = ck.tensors.find(key);
        if (it == ck.tensors.end()) {
            throw InputError("checkpoint lacks " + key);
        }
        auto t = to_tensor<S>(it->second, key);
        if (t.shape() != params[i].value.shape()) {
            throw ConfigError("config mismatch: " + key + " has shape " + shape_string(t.shape()));
        }
        params[i].value = std::move(t);
        params[i].zero_grad();
    }
    if (optimizer != nullptr) {
        std::map<std::string, Tensor<S>> state;
        for (const auto& [name, blob] : ck.tensors) {
            if (name.rfind("optim/", 0) == 0) {
                state.emplace(name.substr(6), to_tensor<S>(blob, name));
            }
        }
        optimizer->load_state(state, ck.state.global_step);
    }
}

template void save_checkpoint(const std::filesystem::path&, const RunConfig&, const Model<float>&,
                              const optim::Optimizer<float>*, const TrainerState&);
template void save_checkpoint(const std::filesystem::path&, const RunConfig&, const Model<double>&,
                              const optim::Optimizer<double>*, const TrainerState&);
template void restore_checkpoint(const Checkpoint&, Model<float>&, optim::Optimizer<float>*);
template void restore_checkpoint(const Checkpoint&, Model<double>&, optim::Optimizer<double>*);

}  // namespace blalm::train

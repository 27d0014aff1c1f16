// blalm: filter -> tokenize -> pack -> train -> eval, plus sweep, trace-alpha
// and gradcheck. Exit codes: 0 success, 1 validation failure, 2 usage or I/O.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "blalm/core/errors.hpp"
#include "blalm/core/rng.hpp"
#include "blalm/data/bpe.hpp"
#include "blalm/data/budget.hpp"
#include "blalm/data/corpus_io.hpp"
#include "blalm/data/filters.hpp"
#include "blalm/data/packing.hpp"
#include "blalm/train/checkpoint.hpp"
#include "blalm/train/config.hpp"
#include "blalm/train/gradcheck_suite.hpp"
#include "blalm/train/metrics.hpp"
#include "blalm/train/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace blalm;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool overwrite = false;
    bool deterministic = false;

    bool has_seed() const { return seed.has_value(); }
};

void add_common(CLI::App* sub, Common& c, bool out_required) {
    sub->add_option("--config", c.config, "Run config (YAML)")->check(CLI::ExistingFile);
    sub->add_option("--set", c.sets, "Override key=value (repeatable, last wins)")->allow_extra_args(false);
    sub->add_option("--seed", c.seed, "Seed for every random choice");
    auto* out = sub->add_option("--out", c.out, "Output directory");
    if (out_required) {
        out->required();
    }
    sub->add_flag("--overwrite", c.overwrite, "Replace an existing output directory");
    sub->add_flag("--deterministic", c.deterministic, "Force deterministic mode");
}

train::RunConfig resolve_config(const Common& c, std::vector<std::string> extra = {}) {
    auto sets = c.sets;
    if (c.has_seed()) {
        sets.push_back("training.seed=" + std::to_string(*c.seed));
    }
    if (c.deterministic) {
        sets.push_back("training.deterministic=true");
    }
    sets.insert(sets.end(), extra.begin(), extra.end());
    return c.config.empty() ? train::parse_run_config("", sets) : train::load_run_config(c.config, sets);
}

void prepare_out(const fs::path& dir, bool overwrite) {
    if (fs::exists(dir) && !(fs::is_directory(dir) && fs::is_empty(dir))) {
        if (!overwrite) {
            throw UsageError("output " + dir.string() + " already exists; pass --overwrite to replace it");
        }
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw InputError("cannot write " + path.string());
    }
}

std::vector<data::Document> read_inputs(const std::vector<std::string>& inputs, const std::string& source,
                                        bool lines) {
    std::optional<data::Source> src;
    if (!source.empty()) {
        src = data::parse_source(source);
    }
    std::vector<data::Document> docs;
    for (const auto& in : inputs) {
        auto part = data::read_corpus(in, src, lines);
        docs.insert(docs.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    return docs;
}

template <typename F>
decltype(auto) with_precision(train::Precision p, F&& f) {
    if (p == train::Precision::Float32) {
        return f.template operator()<float>();
    }
    return f.template operator()<double>();
}

// ---- filter ----------------------------------------------------------------

int cmd_filter(const Common& c, const std::vector<std::string>& inputs, const std::string& source, bool lines,
               const std::string& budget) {
    auto docs = read_inputs(inputs, source, lines);
    const fs::path out = c.out;
    prepare_out(out, c.overwrite);
    const SeededRng rng(c.seed.value_or(0));
    const auto report = data::run_filters(docs, data::FilterConfig{}, rng.fork(1));

    std::vector<data::Document> kept = report.kept;
    std::optional<data::BudgetResult> budgeted;
    if (!budget.empty() && budget != "none") {
        shuffle_within_sources(kept, rng.fork(2));
        budgeted = data::enforce_budget(kept, data::budget_preset(budget));
        kept = budgeted->kept;
    }
    data::write_jsonl(out / "kept.jsonl", kept);
    std::ostringstream rejected;
    for (const auto& r : report.rejected) {
        rejected << data::to_string(r.source) << '\t' << r.id << '\t' << r.reason << '\n';
    }
    write_text(out / "rejected.tsv", rejected.str());
    write_text(out / "manifest.json", data::manifest_json(report, budgeted ? &*budgeted : nullptr) + "\n");

    std::printf("%-20s %10s %10s %12s %12s\n", "source", "docs_in", "kept", "words_in", "words_out");
    for (const auto& [src, st] : report.per_source) {
        std::printf("%-20s %10llu %10llu %12llu %12llu\n", data::to_string(src).c_str(),
                    static_cast<unsigned long long>(st.documents_in), static_cast<unsigned long long>(st.kept),
                    static_cast<unsigned long long>(st.words_in), static_cast<unsigned long long>(st.words_out));
    }
    if (report.missing_score_warnings > 0) {
        std::fprintf(stderr, "warning: %llu documents had no score\n",
                     static_cast<unsigned long long>(report.missing_score_warnings));
    }
    if (budgeted) {
        std::printf("budget %s: %zu documents, %llu words\n", budget.c_str(), budgeted->kept.size(),
                    static_cast<unsigned long long>(budgeted->total_words));
    }
    return 0;
}

// ---- tokenize --------------------------------------------------------------

int cmd_tokenize(const Common& c, const std::vector<std::string>& inputs, std::size_t vocab_size,
                 std::size_t min_pair_frequency) {
    if (vocab_size == 0) {
        vocab_size = c.config.empty() ? data::BpeTrainConfig{}.vocab_size : resolve_config(c).model.vocab_size;
    }
    const auto docs = read_inputs(inputs, "", false);
    const fs::path out = c.out;
    prepare_out(out, c.overwrite);
    std::vector<std::string> texts;
    texts.reserve(docs.size());
    for (const auto& d : docs) {
        texts.push_back(d.text);
    }
    data::BpeTrainConfig tc;
    tc.vocab_size = vocab_size;
    tc.min_pair_frequency = min_pair_frequency;
    const auto tok = data::BpeTokenizer::train(texts, tc);
    tok.save(out / "tokenizer.bpe");
    const json stats = {{"requested_vocab_size", vocab_size},
                        {"vocab_size", tok.vocab_size()},
                        {"merges", tok.merges().size()},
                        {"documents", docs.size()},
                        {"min_pair_frequency", min_pair_frequency}};
    write_text(out / "tokenizer.json", stats.dump(2) + "\n");
    std::printf("vocab %zu (requested %zu, %zu merges)\n", tok.vocab_size(), vocab_size, tok.merges().size());
    if (tok.vocab_size() < vocab_size) {
        std::printf("corpus has no further pair with frequency >= %zu\n", min_pair_frequency);
    }
    return 0;
}

// ---- pack ------------------------------------------------------------------

int cmd_pack(const Common& c, const std::vector<std::string>& inputs, const std::string& tokenizer_path,
             std::size_t context) {
    if (context == 0) {
        context = resolve_config(c).context_length;
    }
    const auto tok = data::BpeTokenizer::load(tokenizer_path);
    const auto docs = read_inputs(inputs, "", false);
    const fs::path out = c.out;
    prepare_out(out, c.overwrite);

    std::vector<std::vector<data::TokenId>> all;
    std::map<data::Source, std::vector<std::vector<data::TokenId>>> by_source;
    for (const auto& d : docs) {
        auto ids = tok.encode(d.text);
        by_source[d.source].push_back(ids);
        all.push_back(std::move(ids));
    }
    const auto blocks = data::pack_and_chunk(data::join_documents(all), context, tok.vocab_size());
    data::write_blocks(out / "blocks.blk", blocks);
    json stats = {{"context_length", context},
                  {"documents", blocks.stats.documents},
                  {"stream_tokens", blocks.stats.stream_tokens},
                  {"dropped_tokens", blocks.stats.dropped_tokens},
                  {"blocks", blocks.count()}};
    fs::create_directories(out / "sources");
    for (const auto& [src, ids] : by_source) {
        const auto part = data::pack_and_chunk(data::join_documents(ids), context, tok.vocab_size());
        data::write_blocks(out / "sources" / (data::to_string(src) + ".blk"), part);
        stats["sources"][data::to_string(src)] = {{"documents", part.stats.documents}, {"blocks", part.count()}};
    }
    write_text(out / "pack.json", stats.dump(2) + "\n");
    std::printf("%zu blocks of %zu tokens from %llu documents (%llu tokens dropped)\n", blocks.count(), context,
                static_cast<unsigned long long>(blocks.stats.documents),
                static_cast<unsigned long long>(blocks.stats.dropped_tokens));
    return 0;
}

// ---- train -----------------------------------------------------------------

struct RunSummary {
    double final_val_perplexity = 0.0;
    double best_val_perplexity = 0.0;
    std::size_t best_epoch = 0;
    std::uint64_t steps = 0;
};

RunSummary run_training(train::RunConfig cfg, const fs::path& out, const std::string& resume) {
    if (cfg.train_blocks.empty()) {
        throw UsageError("data.train_blocks is not set");
    }
    cfg.checkpoint_dir = (out / "checkpoints").string();
    const auto blocks = data::read_blocks(cfg.train_blocks);
    train::BlockSplit split;
    if (cfg.validation_blocks.empty()) {
        split = train::holdout_split(blocks, cfg.validation_fraction, cfg.seed);
    } else {
        split.train = blocks;
        split.validation = data::read_blocks(cfg.validation_blocks);
    }
    write_text(out / "config.yaml", train::to_yaml(cfg));
    train::MetricsLog log(out / "metrics.jsonl");

    return with_precision(cfg.precision, [&]<typename S>() {
        train::Trainer<S> trainer(cfg, split.train, split.validation, &log);
        if (!resume.empty()) {
            trainer.resume(train::read_checkpoint(resume));
        }
        std::printf("%zu train / %zu validation blocks, %llu steps in total\n", split.train.count(),
                    split.validation.count(), static_cast<unsigned long long>(trainer.total_steps()));
        const auto r = trainer.run();
        RunSummary s;
        for (const auto& e : r.epochs) {
            std::printf("epoch %zu  step %llu  train_loss %.4f  val_loss %.4f  val_ppl %.4f  %.1fs\n", e.epoch,
                        static_cast<unsigned long long>(e.step), e.train_loss, e.val_loss, e.val_perplexity,
                        e.seconds);
            s.final_val_perplexity = e.val_perplexity;
        }
        s.best_val_perplexity = trainer.state().best_val_perplexity;
        s.best_epoch = trainer.state().best_epoch;
        s.steps = r.global_step;
        const json j = {{"final_val_perplexity", s.final_val_perplexity},
                        {"best_val_perplexity", s.best_val_perplexity},
                        {"best_epoch", s.best_epoch},
                        {"steps", s.steps},
                        {"finished", r.finished},
                        {"last_checkpoint", r.last_checkpoint.string()},
                        {"overrides", cfg.overrides}};
        write_text(out / "summary.json", j.dump(2) + "\n");
        if (!r.finished) {
            std::printf("stopped at step %llu (max_steps); checkpoint %s\n", static_cast<unsigned long long>(s.steps),
                        r.last_checkpoint.string().c_str());
        }
        return s;
    });
}

int cmd_train(const Common& c, const std::string& resume) {
    const auto cfg = resolve_config(c);
    const fs::path out = c.out;
    if (resume.empty()) {
        prepare_out(out, c.overwrite);
    } else {
        fs::create_directories(out);
    }
    const auto s = run_training(cfg, out, resume);
    if (s.best_epoch > 0) {
        std::printf("best epoch %zu, val_ppl %.4f\n", s.best_epoch, s.best_val_perplexity);
    }
    return 0;
}

// ---- eval ------------------------------------------------------------------

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& data_path) {
    if (!fs::exists(checkpoint)) {
        throw InputError("checkpoint " + checkpoint + " does not exist");
    }
    const auto ck = train::read_checkpoint(checkpoint);
    std::vector<std::pair<std::string, fs::path>> sets;
    if (fs::is_directory(data_path)) {
        sets.emplace_back("all", fs::path(data_path) / "blocks.blk");
        std::vector<fs::path> parts;
        if (fs::is_directory(fs::path(data_path) / "sources")) {
            for (const auto& e : fs::directory_iterator(fs::path(data_path) / "sources")) {
                parts.push_back(e.path());
            }
        }
        std::sort(parts.begin(), parts.end());
        for (const auto& p : parts) {
            sets.emplace_back(p.stem().string(), p);
        }
    } else {
        sets.emplace_back("all", data_path);
    }
    if (!c.out.empty()) {
        prepare_out(c.out, c.overwrite);
    }

    json record = {{"checkpoint", checkpoint},
                   {"data", data_path},
                   {"step", ck.state.global_step},
                   {"epoch", ck.state.epoch}};
    with_precision(ck.config.precision, [&]<typename S>() {
        train::Model<S> model(ck.config.model, 0);
        train::restore_checkpoint<S>(ck, model, nullptr);
        for (const auto& [name, path] : sets) {
            const auto blocks = data::read_blocks(path);
            const auto ev = train::evaluate_perplexity(model, blocks, ck.config.mask_across_separator);
            const json r = {{"perplexity", ev.perplexity}, {"mean_loss", ev.mean_loss}, {"positions", ev.positions}};
            if (name == "all") {
                record.update(r);
            } else {
                record["sources"][name] = r;
            }
            std::printf("%-20s perplexity %.6f  loss %.6f  positions %llu\n", name.c_str(), ev.perplexity,
                        ev.mean_loss, static_cast<unsigned long long>(ev.positions));
        }
        return 0;
    });
    if (!c.out.empty()) {
        train::MetricsLog log(fs::path(c.out) / "eval.jsonl");
        log.raw("eval", record.dump());
    }
    return 0;
}

// ---- sweep -----------------------------------------------------------------

int cmd_sweep(const Common& c, const std::vector<std::string>& grid_specs) {
    std::vector<std::pair<std::string, std::vector<std::string>>> grid;
    for (const auto& spec : grid_specs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw UsageError("grid entry '" + spec + "' is not key=v1,v2,...");
        }
        std::vector<std::string> values;
        std::stringstream ss(spec.substr(eq + 1));
        for (std::string v; std::getline(ss, v, ',');) {
            if (v.empty()) {
                throw UsageError("grid entry '" + spec + "' has an empty value");
            }
            values.push_back(v);
        }
        if (values.empty()) {
            throw UsageError("grid entry '" + spec + "' has no values");
        }
        grid.emplace_back(spec.substr(0, eq), values);
    }
    const auto base = resolve_config(c);
    const fs::path out = c.out;
    prepare_out(out, c.overwrite);

    std::size_t points = 1;
    for (const auto& g : grid) {
        points *= g.second.size();
    }
    std::ostringstream table;
    table << "run\tseed";
    for (const auto& g : grid) {
        table << '\t' << g.first;
    }
    table << "\tfinal_val_perplexity\tbest_val_perplexity\tbest_epoch\n";
    for (std::size_t i = 0; i < points; ++i) {
        // last grid key varies fastest
        std::vector<std::string> assignment(grid.size());
        std::size_t rest = i;
        for (std::size_t g = grid.size(); g-- > 0;) {
            assignment[g] = grid[g].second[rest % grid[g].second.size()];
            rest /= grid[g].second.size();
        }
        std::vector<std::string> extra;
        for (std::size_t g = 0; g < grid.size(); ++g) {
            extra.push_back(grid[g].first + "=" + assignment[g]);
        }
        const std::uint64_t seed = base.seed + i;
        extra.push_back("training.seed=" + std::to_string(seed));
        const auto cfg = resolve_config(c, extra);
        char name[32];
        std::snprintf(name, sizeof name, "run_%03zu", i);
        const fs::path dir = out / name;
        fs::create_directories(dir);
        std::printf("== %s:", name);
        for (const auto& e : extra) {
            std::printf(" %s", e.c_str());
        }
        std::printf("\n");
        const auto s = run_training(cfg, dir, "");
        table << name << '\t' << seed;
        for (const auto& a : assignment) {
            table << '\t' << a;
        }
        char nums[96];
        std::snprintf(nums, sizeof nums, "\t%.6f\t%.6f\t%zu\n", s.final_val_perplexity, s.best_val_perplexity,
                      s.best_epoch);
        table << nums;
    }
    write_text(out / "summary.tsv", table.str());
    std::printf("%s", table.str().c_str());
    return 0;
}

// ---- trace-alpha -----------------------------------------------------------

int cmd_trace_alpha(const Common& c, const std::string& run) {
    fs::path metrics = run;
    if (fs::is_directory(metrics)) {
        metrics /= "metrics.jsonl";
    }
    std::ifstream in(metrics);
    if (!in) {
        throw InputError("cannot open metrics " + metrics.string());
    }
    std::ostringstream csv;
    csv << "layer,epoch,alpha,tanh_alpha\n";
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw InputError(metrics.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        const auto type = j.value("type", "");
        if ((type != "run" && type != "epoch") || !j.contains("alpha")) {
            continue;
        }
        const std::size_t epoch = type == "run" ? 0 : j.at("epoch").get<std::size_t>();
        for (const auto& a : j.at("alpha")) {
            const double alpha = a.at("alpha").get<double>();
            char row[128];
            std::snprintf(row, sizeof row, "%zu,%zu,%.17g,%.17g\n", a.at("layer").get<std::size_t>(), epoch, alpha,
                          std::tanh(alpha));
            csv << row;
        }
    }
    if (!c.out.empty()) {
        prepare_out(c.out, c.overwrite);
        write_text(fs::path(c.out) / "alpha.csv", csv.str());
    }
    std::printf("%s", csv.str().c_str());
    return 0;
}

// ---- gradcheck -------------------------------------------------------------

int cmd_gradcheck(const Common& c, const std::string& corrupt, const std::vector<std::string>& only) {
    train::GradcheckOptions opt;
    if (c.has_seed()) {
        opt.seed = *c.seed;
    }
    opt.corrupt = corrupt;
    opt.only = only;
    if (!c.config.empty()) {
        opt.configured_mixer = resolve_config(c).model.mixer;
    }
    if (!c.out.empty()) {
        prepare_out(c.out, c.overwrite);
    }
    const auto rows = train::run_gradcheck_suite(opt);
    std::ostringstream report;
    report << "family\td\tT\tmax_rel_error\tworst_parameter\tstatus\n";
    bool ok = true;
    for (const auto& r : rows) {
        char err[32];
        std::snprintf(err, sizeof err, "%.3e", r.max_rel_error);
        report << r.family << '\t' << r.d << '\t' << r.steps << '\t' << err << '\t' << r.worst_parameter << '\t'
               << (r.passed ? "ok" : "FAIL") << '\n';
        ok = ok && r.passed;
    }
    if (!c.out.empty()) {
        write_text(fs::path(c.out) / "gradcheck.tsv", report.str());
    }
    std::printf("%s", report.str().c_str());
    std::printf("%s (tolerance %.0e, epsilon %.0e)\n", ok ? "all families pass" : "gradient check FAILED",
                opt.tolerance, opt.epsilon);
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"blalm: data pipeline, training and checks for mLSTM language models"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "blalm 0.1.0");

    Common common;
    std::vector<std::string> inputs;
    std::string source;
    bool lines = false;
    std::string budget = "none";
    std::size_t vocab_size = 0;
    std::size_t min_pair_frequency = 2;
    std::string tokenizer;
    std::size_t context = 0;
    std::string resume;
    std::string checkpoint;
    std::string data_path;
    std::vector<std::string> grid;
    std::string run;
    std::string corrupt;
    std::vector<std::string> only;

    auto* filter = app.add_subcommand("filter", "Filter a raw corpus and apply an optional word budget");
    add_common(filter, common, true);
    filter->add_option("--input", inputs, "JSONL file or text directory (repeatable)")->required();
    filter->add_option("--source", source, "Source label for text directories / records without one");
    filter->add_flag("--lines", lines, "Treat every line of a text file as a document");
    filter->add_option("--budget", budget, "none | strict-small | strict");

    auto* tokenize = app.add_subcommand("tokenize", "Train the byte-level BPE tokenizer");
    add_common(tokenize, common, true);
    tokenize->add_option("--input", inputs, "Filtered JSONL (repeatable)")->required();
    tokenize->add_option("--vocab-size", vocab_size, "Target vocabulary (default: model.vocab_size or 15000)");
    tokenize->add_option("--min-pair-frequency", min_pair_frequency, "Stop when no pair is this frequent");

    auto* pack = app.add_subcommand("pack", "Tokenize, join with <|endoftext|> and cut fixed-length blocks");
    add_common(pack, common, true);
    pack->add_option("--input", inputs, "Filtered JSONL (repeatable)")->required();
    pack->add_option("--tokenizer", tokenizer, "tokenizer.bpe")->required();
    pack->add_option("--context", context, "Block length (default: training.context_length)");

    auto* trn = app.add_subcommand("train", "Train a model; checkpoints and metrics go to --out");
    add_common(trn, common, true);
    trn->add_option("--resume", resume, "Checkpoint to continue from");

    auto* eval = app.add_subcommand("eval", "Validation perplexity of a checkpoint, overall and per source");
    add_common(eval, common, false);
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval->add_option("--data", data_path, "Block file, or a pack output directory")->required();

    auto* sweep = app.add_subcommand("sweep", "Train every point of a Cartesian grid");
    add_common(sweep, common, true);
    sweep->add_option("--grid", grid, "key=v1,v2,... (repeatable)")->required();

    auto* trace = app.add_subcommand("trace-alpha", "Per-layer DynMod alpha per epoch as CSV");
    add_common(trace, common, false);
    trace->add_option("--run", run, "Run directory or metrics.jsonl")->required();

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every op family");
    add_common(grad, common, false);
    grad->add_option("--corrupt", corrupt, "Scale one family's backward by 1.5 (negative control)");
    grad->add_option("--only", only, "Restrict to these families (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*filter) return cmd_filter(common, inputs, source, lines, budget);
        if (*tokenize) return cmd_tokenize(common, inputs, vocab_size, min_pair_frequency);
        if (*pack) return cmd_pack(common, inputs, tokenizer, context);
        if (*trn) return cmd_train(common, resume);
        if (*eval) return cmd_eval(common, checkpoint, data_path);
        if (*sweep) return cmd_sweep(common, grid);
        if (*trace) return cmd_trace_alpha(common, run);
        if (*grad) return cmd_gradcheck(common, corrupt, only);
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const ContractViolation& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const InputError& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "blalm/data/corpus_io.hpp"
#include "blalm/data/packing.hpp"
#include "blalm/train/checkpoint.hpp"
#include "blalm/train/config.hpp"
#include "blalm/train/model.hpp"
#include "desk_corpus.hpp"

namespace fs = std::filesystem;
using namespace blalm;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

Result run(const std::string& args) {
    const std::string cmd = std::string(BLALM_BIN) + " " + args + " 2>&1";
    Result r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (pipe == nullptr) {
        return r;
    }
    char buf[4096];
    while (std::fgets(buf, sizeof buf, pipe) != nullptr) {
        r.out += buf;
    }
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Shared pipeline output: raw corpus -> filter -> tokenize -> pack.
class Pipeline : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        root_ = fs::temp_directory_path() / "blalm_cli_test";
        fs::remove_all(root_);
        fs::create_directories(root_);
        data::write_jsonl(root_ / "raw.jsonl", blalm::testing::desk_corpus(6000, 5));
        const auto f = run("filter --input " + q(root_ / "raw.jsonl") + " --seed 3 --out " + q(root_ / "filtered"));
        ASSERT_EQ(f.code, 0) << f.out;
        const auto t = run("tokenize --input " + q(root_ / "filtered/kept.jsonl") + " --vocab-size 400 --out " +
                           q(root_ / "tok"));
        ASSERT_EQ(t.code, 0) << t.out;
        const auto p = run("pack --input " + q(root_ / "filtered/kept.jsonl") + " --tokenizer " +
                           q(root_ / "tok/tokenizer.bpe") + " --context 32 --out " + q(root_ / "pack"));
        ASSERT_EQ(p.code, 0) << p.out;
    }

    static std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

    static std::string train_args() {
        return "--config " + q(fs::path(BLALM_SOURCE_DIR) / "configs/smoke.yaml") + " --set data.train_blocks=" +
               (root_ / "pack/blocks.blk").string() + " --set model.vocab_size=400";
    }

    static fs::path root_;
};

fs::path Pipeline::root_;

}  // namespace

TEST_F(Pipeline, FilterWritesManifestAndRefusesToClobber) {
    const auto manifest = nlohmann::json::parse(slurp(root_ / "filtered/manifest.json"));
    EXPECT_EQ(manifest.at("schema"), "blalm.manifest/1");
    EXPECT_GT(fs::file_size(root_ / "filtered/kept.jsonl"), 0u);
    EXPECT_GT(fs::file_size(root_ / "filtered/rejected.tsv"), 0u);

    const std::string args = "filter --input " + q(root_ / "raw.jsonl") + " --seed 3 --out " + q(root_ / "filtered");
    const auto again = run(args);
    EXPECT_EQ(again.code, 2);
    EXPECT_NE(again.out.find("--overwrite"), std::string::npos);

    const auto before = slurp(root_ / "filtered/kept.jsonl");
    const auto forced = run(args + " --overwrite");
    EXPECT_EQ(forced.code, 0) << forced.out;
    EXPECT_EQ(slurp(root_ / "filtered/kept.jsonl"), before);
}

TEST_F(Pipeline, TokenizeAndPackOutputs) {
    const auto stats = nlohmann::json::parse(slurp(root_ / "tok/tokenizer.json"));
    EXPECT_EQ(stats.at("vocab_size"), 400);
    const auto blocks = data::read_blocks(root_ / "pack/blocks.blk");
    EXPECT_EQ(blocks.context_length, 32u);
    EXPECT_GT(blocks.count(), 20u);
    EXPECT_TRUE(fs::exists(root_ / "pack/sources/childes.blk"));
    EXPECT_TRUE(fs::exists(root_ / "pack/sources/gutenberg.blk"));
}

TEST_F(Pipeline, TrainEvalAndTrace) {
    const auto out = root_ / "train";
    const auto t = run("train " + train_args() + " --seed 9 --out " + q(out));
    ASSERT_EQ(t.code, 0) << t.out;
    EXPECT_TRUE(fs::exists(out / "checkpoints/epoch_3.blck"));

    std::ifstream metrics(out / "metrics.jsonl");
    std::string first;
    std::getline(metrics, first);
    const auto run_record = nlohmann::json::parse(first);
    EXPECT_EQ(run_record.at("type"), "run");
    EXPECT_EQ(run_record.at("seed"), 9);
    EXPECT_EQ(run_record.at("overrides").back(), "training.seed=9");

    const auto ck = (out / "checkpoints/epoch_3.blck").string();
    const auto e1 = run("eval --checkpoint " + q(ck) + " --data " + q(root_ / "pack") + " --out " + q(root_ / "e1"));
    const auto e2 = run("eval --checkpoint " + q(ck) + " --data " + q(root_ / "pack") + " --out " + q(root_ / "e2"));
    ASSERT_EQ(e1.code, 0) << e1.out;
    ASSERT_EQ(e2.code, 0);
    EXPECT_EQ(e1.out, e2.out);
    EXPECT_EQ(slurp(root_ / "e1/eval.jsonl"), slurp(root_ / "e2/eval.jsonl"));
    const auto record = nlohmann::json::parse(slurp(root_ / "e1/eval.jsonl"));
    EXPECT_EQ(record.at("type"), "eval");
    EXPECT_TRUE(record.at("sources").contains("tinystories"));
    EXPECT_NEAR(record.at("perplexity").get<double>(), std::exp(record.at("mean_loss").get<double>()), 1e-9);

    const auto tr = run("trace-alpha --run " + q(out));
    ASSERT_EQ(tr.code, 0) << tr.out;
    std::istringstream csv(tr.out);
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "layer,epoch,alpha,tanh_alpha");
    std::size_t rows = 0;
    while (std::getline(csv, line)) {
        ++rows;
        if (line.rfind("0,0,", 0) == 0) {
            EXPECT_EQ(line, "0,0,0,0");
        }
    }
    EXPECT_EQ(rows, 4u);  // one layer, epochs 0..3
}

TEST_F(Pipeline, ResumeContinuesFromCheckpoint) {
    const auto out = root_ / "resume";
    const auto part = run("train " + train_args() + " --set training.max_steps=3 --out " + q(out));
    ASSERT_EQ(part.code, 0) << part.out;
    ASSERT_TRUE(fs::exists(out / "checkpoints/step_3.blck"));
    const auto rest = run("train " + train_args() + " --resume " + q(out / "checkpoints/step_3.blck") + " --out " +
                          q(out));
    ASSERT_EQ(rest.code, 0) << rest.out;
    EXPECT_TRUE(fs::exists(out / "checkpoints/epoch_3.blck"));
}

TEST_F(Pipeline, EvalOfUniformModelIsVocabSize) {
    auto cfg = train::parse_run_config(slurp(fs::path(BLALM_SOURCE_DIR) / "configs/smoke.yaml"),
                                       {"model.vocab_size=400"});
    train::Model<float> model(cfg.model, 1);
    auto& head = model.parameters().get("lm_head.weight").value;
    for (std::size_t i = 0; i < head.size(); ++i) {
        head[i] = 0.0f;
    }
    train::save_checkpoint<float>(root_ / "uniform.blck", cfg, model, nullptr, {});
    const auto r = run("eval --checkpoint " + q(root_ / "uniform.blck") + " --data " + q(root_ / "pack/blocks.blk") +
                       " --out " + q(root_ / "uniform_eval"));
    ASSERT_EQ(r.code, 0) << r.out;
    const auto record = nlohmann::json::parse(slurp(root_ / "uniform_eval/eval.jsonl"));
    EXPECT_NEAR(record.at("perplexity").get<double>(), 400.0, 0.4);
}

TEST_F(Pipeline, SweepRunsEveryGridPoint) {
    const auto out = root_ / "sweep";
    const auto r = run("sweep " + train_args() + " --set training.epochs=2 --grid optimizer.lr=3e-4,7e-4 --out " +
                       q(out));
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_TRUE(fs::exists(out / "run_000/summary.json"));
    EXPECT_TRUE(fs::exists(out / "run_001/summary.json"));
    EXPECT_FALSE(fs::exists(out / "run_002"));
    std::istringstream table(slurp(out / "summary.tsv"));
    std::string header, row0, row1;
    std::getline(table, header);
    std::getline(table, row0);
    std::getline(table, row1);
    EXPECT_EQ(header, "run\tseed\toptimizer.lr\tfinal_val_perplexity\tbest_val_perplexity\tbest_epoch");
    EXPECT_EQ(row0.substr(0, 15), "run_000\t0\t3e-4\t");
    EXPECT_EQ(row1.substr(0, 15), "run_001\t1\t7e-4\t");
    auto ppl = [](const std::string& row) {
        std::istringstream s(row);
        std::string field;
        for (int i = 0; i < 4; ++i) {
            std::getline(s, field, '\t');
        }
        return std::stod(field);
    };
    EXPECT_NE(ppl(row0), ppl(row1));
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("--help").code, 0);
    const auto missing = run("eval --checkpoint /nonexistent/x.blck --data /nonexistent/b.blk");
    EXPECT_EQ(missing.code, 2);
    EXPECT_NE(missing.out.find("does not exist"), std::string::npos);
    const auto dir = fs::temp_directory_path() / "blalm_cli_badcfg";
    fs::create_directories(dir);
    std::ofstream(dir / "bad.yaml") << "model:\n  hiden_size: 4\n";
    const auto bad = run("train --config " + (dir / "bad.yaml").string() + " --out " + (dir / "o").string() +
                         " --overwrite");
    EXPECT_EQ(bad.code, 2);
    EXPECT_NE(bad.out.find("model.hiden_size"), std::string::npos);
}

TEST(Cli, GradcheckReportAndNegativeControl) {
    const auto ok = run("gradcheck");
    EXPECT_EQ(ok.code, 0) << ok.out;
    for (const char* family : {"rmsnorm", "swiglu_ffn", "rope_apply", "short_conv", "causal_attention",
                               "swa_attention", "mlstm", "hedgehog_map", "combine_fixed_half", "combine_dynmod",
                               "combine_dynmod_bounded", "cross_entropy_head"}) {
        EXPECT_NE(ok.out.find(std::string(family) + "\t"), std::string::npos) << family;
    }
    const auto bad = run("gradcheck --corrupt swiglu_ffn --only swiglu_ffn");
    EXPECT_EQ(bad.code, 1);
    EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
}

TEST(Cli, ShippedConfigsPassGradcheck) {
    std::size_t seen = 0;
    for (const auto& entry : fs::directory_iterator(fs::path(BLALM_SOURCE_DIR) / "configs")) {
        if (entry.path().extension() != ".yaml") {
            continue;
        }
        ++seen;
        const auto r = run("gradcheck --config '" + entry.path().string() + "'");
        EXPECT_EQ(r.code, 0) << entry.path() << "\n" << r.out;
        EXPECT_NE(r.out.find("configured_mixer\t"), std::string::npos) << entry.path();
    }
    EXPECT_GE(seen, 5u);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "blalm/core/errors.hpp"
#include "blalm/core/rng.hpp"
#include "blalm/train/checkpoint.hpp"
#include "blalm/train/config.hpp"
#include "blalm/train/gradcheck_suite.hpp"
#include "blalm/train/metrics.hpp"
#include "blalm/train/model.hpp"
#include "blalm/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace blalm;
using namespace blalm::train;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("blalm_train_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

RunConfig tiny_config(const fs::path& dir, std::size_t context = 9) {
    RunConfig c;
    c.model.vocab_size = 300;
    c.model.num_layers = 1;
    c.model.layer.hidden_size = 16;
    c.model.layer.intermediate_size = 32;
    c.model.layer.num_heads = 2;
    c.context_length = context;
    c.global_batch_size = 4;
    c.micro_batch_size = 4;
    c.epochs = 2;
    c.seed = 11;
    c.precision = Precision::Float64;
    c.validation_fraction = 0.0;
    c.checkpoint_dir = dir.string();
    c.peak_lr = 3e-3;
    return c;
}

data::PackedBlocks random_blocks(std::size_t count, std::size_t context, std::uint64_t seed, std::int32_t vocab = 300) {
    SeededRng rng(seed);
    data::PackedBlocks b;
    b.context_length = context;
    for (std::size_t i = 0; i < count * context; ++i) {
        b.tokens.push_back(static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(vocab))));
    }
    return b;
}

template <typename S>
std::vector<S> flat_params(Model<S>& m) {
    std::vector<S> out;
    for (auto* p : m.parameters().pointers()) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            out.push_back(p->value[i]);
        }
    }
    return out;
}

}  // namespace

TEST(Config, ParsesSectionsAndDefaults) {
    const auto cfg = parse_run_config(R"(
model:
  vocab_size: 4000
  num_layers: 2
  hidden_size: 64
  num_heads: 4
  mixer:
    kind: mlstm
    swa: dynmod_bounded
    swa_window: 16
optimizer:
  kind: adamw
  lr: 7e-4
training:
  context_length: 128
  global_batch_size: 16
  micro_batch_size: 4
  epochs: 3
  precision: float64
)");
    EXPECT_EQ(cfg.model.vocab_size, 4000u);
    EXPECT_EQ(cfg.model.mixer.swa, mixers::SwaMode::DynModBounded);
    EXPECT_EQ(cfg.optimizer.kind, optim::OptimizerKind::AdamW);
    EXPECT_DOUBLE_EQ(cfg.peak_lr, 7e-4);
    EXPECT_EQ(cfg.accumulation_steps(), 4u);
    EXPECT_EQ(cfg.precision, Precision::Float64);
    EXPECT_EQ(cfg.model.layer.intermediate_size, LayerConfig{}.intermediate_size);
    EXPECT_DOUBLE_EQ(cfg.warmup_fraction, 0.1);
}

TEST(Config, UnknownKeysAndBadValues) {
    try {
        parse_run_config("model:\n  mixer:\n    windw: 3\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("model.mixer.windw"), std::string::npos);
    }
    EXPECT_THROW(parse_run_config("trainig:\n  epochs: 2\n"), ConfigError);
    EXPECT_THROW(parse_run_config("training:\n  epochs: 11\n"), ConfigError);
    EXPECT_THROW(parse_run_config("training:\n  epochs: zero\n"), ConfigError);
    EXPECT_THROW(parse_run_config("training:\n  global_batch_size: 10\n  micro_batch_size: 4\n"), ConfigError);
    EXPECT_THROW(parse_run_config("training:\n  precision: float16\n"), ConfigError);
    EXPECT_THROW(parse_run_config("model: [1, 2"), ConfigError);
}

TEST(Config, OverridesLastWins) {
    const auto cfg = parse_run_config("optimizer:\n  lr: 1e-3\n",
                                      {"optimizer.lr=2e-4", "model.mixer.swa=fixed_half", "optimizer.lr=5e-4"});
    EXPECT_DOUBLE_EQ(cfg.peak_lr, 5e-4);
    EXPECT_EQ(cfg.model.mixer.swa, mixers::SwaMode::FixedHalf);
    EXPECT_EQ(cfg.overrides.size(), 3u);
    EXPECT_THROW(parse_run_config("", {"optimizer.lr"}), ConfigError);
    EXPECT_THROW(parse_run_config("", {"optimizer.lrr=1"}), ConfigError);
}

TEST(Config, YamlRoundTrip) {
    auto cfg = parse_run_config("", {"model.mixer.hedgehog=true", "optimizer.muon.scale=rms_match", "training.seed=42",
                                     "training.mask_across_separator=true"});
    const auto text = to_yaml(cfg);
    const auto again = parse_run_config(text);
    EXPECT_EQ(to_yaml(again), text);
    EXPECT_EQ(again.optimizer.muon.scale, optim::MuonScale::RmsMatch);
    EXPECT_TRUE(again.model.mixer.hedgehog);
    EXPECT_EQ(again.seed, 42u);
    EXPECT_EQ(model_digest(cfg.model, Precision::Float32), model_digest(again.model, Precision::Float32));
    EXPECT_NE(model_digest(cfg.model, Precision::Float32), model_digest(cfg.model, Precision::Float64));
}

TEST(Model, ParameterLayoutAndShapes) {
    const auto dir = scratch("layout");
    auto cfg = tiny_config(dir);
    Model<double> m(cfg.model, 3);
    EXPECT_TRUE(m.parameters().get("embedding.table").value.shape() == (Shape{300, 16}));
    EXPECT_TRUE(m.parameters().get("lm_head.weight").value.shape() == (Shape{300, 16}));
    const std::vector<std::int32_t> ids{1, 2, 3, 256, 5};
    const auto logits = m.logits(ids);
    EXPECT_TRUE(logits.shape() == (Shape{5, 300}));
    const std::vector<std::int32_t> bad{1, 300};
    EXPECT_THROW(m.logits(bad), InputError);

    cfg.model.tie_embeddings = true;
    Model<double> tied(cfg.model, 3);
    EXPECT_THROW(tied.parameters().get("lm_head.weight"), ContractViolation);
}

TEST(Model, UniformLogitsGivePerplexityV) {
    const auto dir = scratch("uniform");
    auto cfg = tiny_config(dir);
    Model<double> m(cfg.model, 5);
    auto& head = m.parameters().get("lm_head.weight").value;
    for (std::size_t i = 0; i < head.size(); ++i) {
        head[i] = 0.0;
    }
    const auto blocks = random_blocks(6, 9, 1);
    const auto ev = evaluate_perplexity(m, blocks);
    EXPECT_EQ(ev.positions, 6u * 8u);
    EXPECT_NEAR(ev.perplexity, 300.0, 300.0 * 1e-3);
}

TEST(Model, EvaluationIsDeterministic) {
    const auto dir = scratch("evaldet");
    auto cfg = tiny_config(dir);
    Model<double> a(cfg.model, 9);
    Model<double> b(cfg.model, 9);
    const auto blocks = random_blocks(5, 9, 2);
    const auto ra = evaluate_perplexity(a, blocks);
    const auto rb = evaluate_perplexity(b, blocks);
    const auto rc = evaluate_perplexity(a, blocks);
    EXPECT_EQ(std::memcmp(&ra.mean_loss, &rb.mean_loss, sizeof(double)), 0);
    EXPECT_EQ(std::memcmp(&ra.mean_loss, &rc.mean_loss, sizeof(double)), 0);
    EXPECT_NEAR(ra.perplexity, std::exp(ra.mean_loss), 1e-9);
}

TEST(Model, SeparatorMaskDropsPositions) {
    const auto dir = scratch("mask");
    auto cfg = tiny_config(dir);
    Model<double> m(cfg.model, 1);
    const std::vector<std::int32_t> block{5, 6, 256, 7, 8, 256, 9, 10, 11};
    std::size_t all = 0;
    std::size_t masked = 0;
    m.loss(block, false, &all);
    m.loss(block, true, &masked);
    EXPECT_EQ(all, 8u);
    EXPECT_EQ(masked, 6u);
}

TEST(Model, AlphaTrace) {
    const auto dir = scratch("alpha");
    auto cfg = tiny_config(dir);
    cfg.model.num_layers = 2;
    EXPECT_TRUE(Model<double>(cfg.model, 1).alpha_trace().empty());

    cfg.model.mixer.swa = mixers::SwaMode::DynMod;
    Model<double> dyn(cfg.model, 1);
    const auto trace = dyn.alpha_trace();
    ASSERT_EQ(trace.size(), 2u);
    for (const auto& a : trace) {
        EXPECT_EQ(a.raw, 0.0);
        EXPECT_EQ(a.effective, 0.0);
    }

    cfg.model.mixer.swa = mixers::SwaMode::DynModBounded;
    Model<double> bounded(cfg.model, 1);
    bounded.parameters().get("layer.0.mixer.alpha").value[0] = 100.0;
    bounded.parameters().get("layer.1.mixer.alpha").value[0] = -0.5;
    const auto bt = bounded.alpha_trace();
    EXPECT_LT(bt[0].effective, 1.0);
    EXPECT_GT(bt[0].effective, 0.999);
    EXPECT_NEAR(bt[1].effective, std::tanh(-0.5), 1e-15);
}

TEST(Trainer, StepCountFollowsBatchesAndEpochs) {
    const auto dir = scratch("steps");
    auto cfg = tiny_config(dir);
    cfg.micro_batch_size = 1;  // accumulation 4
    Trainer<double> t(cfg, random_blocks(20, 9, 3), {});
    EXPECT_EQ(t.steps_per_epoch(), 5u);
    EXPECT_EQ(t.total_steps(), 10u);
    const auto r = t.run();
    EXPECT_TRUE(r.finished);
    EXPECT_EQ(r.global_step, 10u);
    EXPECT_EQ(r.step_losses.size(), 10u);
    EXPECT_TRUE(fs::exists(dir / "epoch_1.blck"));
    EXPECT_TRUE(fs::exists(dir / "epoch_2.blck"));
}

TEST(Trainer, RejectsUnfillableBatchAndWrongContext) {
    const auto dir = scratch("reject");
    auto cfg = tiny_config(dir);
    EXPECT_THROW(Trainer<double>(cfg, random_blocks(3, 9, 1), {}), ConfigError);
    EXPECT_THROW(Trainer<double>(cfg, random_blocks(8, 10, 1), {}), ConfigError);
}

TEST(Trainer, AccumulationMatchesFullBatch) {
    const auto dir = scratch("accum");
    auto full = tiny_config(dir / "full");
    full.epochs = 1;
    auto split = full;
    split.micro_batch_size = 1;
    split.checkpoint_dir = (dir / "split").string();
    const auto blocks = random_blocks(12, 9, 4);
    for (const auto kind : {optim::OptimizerKind::AdamW, optim::OptimizerKind::MuonHybrid}) {
        full.optimizer.kind = kind;
        split.optimizer.kind = kind;
        Trainer<double> a(full, blocks, {});
        Trainer<double> b(split, blocks, {});
        const auto ra = a.run();
        const auto rb = b.run();
        ASSERT_EQ(ra.step_losses.size(), rb.step_losses.size());
        for (std::size_t i = 0; i < ra.step_losses.size(); ++i) {
            EXPECT_NEAR(ra.step_losses[i], rb.step_losses[i], 1e-9);
        }
        const auto pa = flat_params(a.model());
        const auto pb = flat_params(b.model());
        double worst = 0.0;
        for (std::size_t i = 0; i < pa.size(); ++i) {
            worst = std::max(worst, std::abs(pa[i] - pb[i]));
        }
        EXPECT_LE(worst, 1e-6) << optim::to_string(kind);
    }
}

TEST(Trainer, MaskedBatchesWeighEveryCountedPositionEqually) {
    const auto dir = scratch("maskaccum");
    auto full = tiny_config(dir / "full");
    full.epochs = 1;
    full.mask_across_separator = true;
    auto split = full;
    split.micro_batch_size = 2;
    split.checkpoint_dir = (dir / "split").string();
    auto blocks = random_blocks(8, 9, 5);
    for (std::size_t i = 0; i < blocks.tokens.size(); i += 3) {
        blocks.tokens[i] = 256;
    }
    Trainer<double> a(full, blocks, {});
    Trainer<double> b(split, blocks, {});
    a.run();
    b.run();
    const auto pa = flat_params(a.model());
    const auto pb = flat_params(b.model());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        ASSERT_NEAR(pa[i], pb[i], 1e-9);
    }
}

TEST(Trainer, OverfitsOneBlock) {
    const auto dir = scratch("overfit");
    auto cfg = tiny_config(dir, 33);
    cfg.model.layer.hidden_size = 32;
    cfg.model.layer.intermediate_size = 64;
    cfg.global_batch_size = 1;
    cfg.micro_batch_size = 1;
    cfg.epochs = 10;
    cfg.peak_lr = 1e-2;
    cfg.optimizer.kind = optim::OptimizerKind::AdamW;
    cfg.optimizer.adamw.weight_decay = 0.0;
    // one block repeated: 30 steps per epoch
    auto one = random_blocks(1, 33, 6);
    data::PackedBlocks blocks;
    blocks.context_length = 33;
    for (int i = 0; i < 30; ++i) {
        blocks.tokens.insert(blocks.tokens.end(), one.tokens.begin(), one.tokens.end());
    }
    Trainer<double> t(cfg, blocks, one);
    const auto r = t.run();
    ASSERT_EQ(r.step_losses.size(), 300u);
    EXPECT_LT(r.step_losses.back(), 0.1);
    EXPECT_LT(r.epochs.back().val_perplexity, std::exp(0.1));
}

TEST(Trainer, MetricsRecordsAreConsistent) {
    const auto dir = scratch("metrics");
    auto cfg = tiny_config(dir);
    cfg.epochs = 3;
    cfg.model.mixer.swa = mixers::SwaMode::DynMod;
    cfg.model.mixer.swa_window = 4;
    MetricsLog log(dir / "metrics.jsonl");
    Trainer<double> t(cfg, random_blocks(8, 9, 7), random_blocks(2, 9, 8), &log);
    const auto r = t.run();
    ASSERT_EQ(r.epochs.size(), 3u);
    for (const auto& e : r.epochs) {
        EXPECT_NEAR(e.val_perplexity, std::exp(e.val_loss), 1e-6 * e.val_perplexity);
        EXPECT_EQ(e.val_positions, 16u);
        EXPECT_EQ(e.alpha.size(), 1u);
    }
    std::size_t epochs = 0;
    std::size_t steps = 0;
    for (const auto& line : log.lines()) {
        EXPECT_NE(line.find("blalm.metrics/1"), std::string::npos);
        epochs += line.find("\"type\":\"epoch\"") != std::string::npos;
        steps += line.find("\"type\":\"step\"") != std::string::npos;
    }
    EXPECT_EQ(epochs, 3u);
    EXPECT_EQ(steps, 6u);
    std::ifstream in(dir / "metrics.jsonl");
    std::size_t file_lines = 0;
    for (std::string l; std::getline(in, l);) {
        ++file_lines;
    }
    EXPECT_EQ(file_lines, log.lines().size());
}

TEST(Trainer, NonFiniteLossNamesStepAndCheckpoint) {
    const auto dir = scratch("nan");
    auto cfg = tiny_config(dir);
    cfg.epochs = 2;
    Trainer<double> t(cfg, random_blocks(4, 9, 9), {});
    t.model().parameters().get("final_norm.gain").value[0] = std::nan("");
    try {
        t.run();
        FAIL();
    } catch (const DivergenceError& e) {
        EXPECT_EQ(e.index(), 1u);
        EXPECT_NE(std::string(e.what()).find("last good checkpoint: none"), std::string::npos);
    }
}

TEST(Holdout, SplitIsSeededAndDisjoint) {
    const auto blocks = random_blocks(100, 4, 10);
    const auto a = holdout_split(blocks, 0.02, 1);
    const auto b = holdout_split(blocks, 0.02, 1);
    EXPECT_EQ(a.validation.count(), 2u);
    EXPECT_EQ(a.train.count(), 98u);
    EXPECT_EQ(a.validation.tokens, b.validation.tokens);
    EXPECT_EQ(holdout_split(random_blocks(10, 4, 1), 0.02, 1).validation.count(), 1u);
    EXPECT_EQ(holdout_split(blocks, 0.0, 1).validation.count(), 0u);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    const auto dir = scratch("ckpt");
    auto cfg = tiny_config(dir);
    cfg.precision = Precision::Float32;
    Trainer<float> t(cfg, random_blocks(8, 9, 12), {});
    t.run();
    const auto ck = read_checkpoint(dir / "epoch_2.blck");
    EXPECT_EQ(ck.scalar_bytes, 4u);
    EXPECT_EQ(ck.state.epoch, 2u);
    EXPECT_EQ(ck.state.global_step, 4u);
    Model<float> restored(cfg.model, 999);
    restore_checkpoint<float>(ck, restored, nullptr);
    const auto a = flat_params(t.model());
    const auto b = flat_params(restored);
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)), 0);

    std::ofstream(dir / "junk.blck") << "nope";
    EXPECT_THROW(read_checkpoint(dir / "junk.blck"), InputError);
    EXPECT_THROW(read_checkpoint(dir / "missing.blck"), InputError);
}

TEST(Checkpoint, ArchitectureMismatchIsRefused) {
    const auto dir = scratch("mismatch");
    auto cfg = tiny_config(dir);
    Trainer<double> t(cfg, random_blocks(4, 9, 13), {});
    t.save(dir / "a.blck");
    const auto ck = read_checkpoint(dir / "a.blck");
    auto other = cfg.model;
    other.num_layers = 2;
    Model<double> m(other, 1);
    try {
        restore_checkpoint<double>(ck, m, nullptr);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(std::string(e.what()).rfind("config mismatch", 0), 0u);
    }
    Model<float> wrong_precision(cfg.model, 1);
    EXPECT_THROW(restore_checkpoint<float>(ck, wrong_precision, nullptr), ConfigError);
}

TEST(Checkpoint, ResumeReplaysUninterruptedRun) {
    const auto dir = scratch("replay");
    auto cfg = tiny_config(dir);
    cfg.epochs = 3;
    cfg.optimizer.kind = optim::OptimizerKind::MuonHybrid;
    const auto blocks = random_blocks(12, 9, 14);

    auto full_cfg = cfg;
    full_cfg.max_steps = 8;
    full_cfg.checkpoint_dir = (dir / "full").string();
    Trainer<double> full(full_cfg, blocks, {});
    const auto rf = full.run();
    ASSERT_EQ(rf.global_step, 8u);

    auto part_cfg = cfg;
    part_cfg.max_steps = 4;
    part_cfg.checkpoint_dir = (dir / "part").string();
    Trainer<double> first(part_cfg, blocks, {});
    const auto r1 = first.run();
    ASSERT_EQ(r1.global_step, 4u);
    ASSERT_TRUE(fs::exists(dir / "part" / "step_4.blck"));

    part_cfg.max_steps = 8;
    Trainer<double> second(part_cfg, blocks, {});
    second.resume(read_checkpoint(dir / "part" / "step_4.blck"));
    const auto r2 = second.run();
    ASSERT_EQ(r2.global_step, 8u);

    ASSERT_EQ(r1.step_losses.size() + r2.step_losses.size(), rf.step_losses.size());
    for (std::size_t i = 0; i < r2.step_losses.size(); ++i) {
        EXPECT_EQ(r2.step_losses[i], rf.step_losses[4 + i]);
    }
    const auto a = flat_params(full.model());
    const auto b = flat_params(second.model());
    EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
}

TEST(GradcheckSuite, AllFamiliesPass) {
    const auto rows = run_gradcheck_suite();
    EXPECT_EQ(rows.size(), gradcheck_families().size() * 2 * 3);
    for (const auto& r : rows) {
        EXPECT_TRUE(r.passed) << r.family << " d=" << r.d << " T=" << r.steps << " err=" << r.max_rel_error << " ("
                              << r.worst_parameter << ")";
    }
}

// Other seeds occasionally draw a gradient element of ~1e-7..1e-6 where the
// central difference's rounding noise (~1e-11) exceeds 1e-5 relative. Any
// miss must be of that kind, never a real disagreement.
TEST(GradcheckSuite, MissesAcrossSeedsAreRoundingNoise) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        GradcheckOptions opt;
        opt.seed = seed;
        for (const auto& r : run_gradcheck_suite(opt)) {
            if (r.passed) {
                continue;
            }
            EXPECT_LT(std::max(std::abs(r.analytic), std::abs(r.numeric)), 2e-6)
                << "seed " << seed << " " << r.family << " d=" << r.d << " T=" << r.steps;
            EXPECT_LT(std::abs(r.analytic - r.numeric), 1e-10);
        }
    }
}

TEST(GradcheckSuite, CorruptedBackwardIsCaught) {
    GradcheckOptions opt;
    opt.only = {"swiglu_ffn"};
    opt.corrupt = "swiglu_ffn";
    const auto rows = run_gradcheck_suite(opt);
    ASSERT_FALSE(rows.empty());
    for (const auto& r : rows) {
        EXPECT_FALSE(r.passed);
        EXPECT_GT(r.max_rel_error, 0.1);
    }
}

// Every shipped config with its widths shrunk (mixer, optimizer, lr and
// schedule shape kept) trains 10k steps without a non-finite loss.
TEST(Stress, ShippedConfigsStayFiniteForTenThousandSteps) {
    std::size_t seen = 0;
    for (const auto& entry : fs::directory_iterator(fs::path(BLALM_SOURCE_DIR) / "configs")) {
        if (entry.path().extension() != ".yaml") {
            continue;
        }
        ++seen;
        auto cfg = load_run_config(entry.path());
        cfg.model.vocab_size = 300;
        cfg.model.num_layers = 1;
        cfg.model.layer.hidden_size = 16;
        cfg.model.layer.intermediate_size = 24;
        cfg.model.layer.num_heads = 2;
        cfg.model.mixer.swa_window = std::min<std::size_t>(cfg.model.mixer.swa_window, 4);
        cfg.model.mixer.hedgehog_feature_dim = 0;
        cfg.context_length = 9;
        cfg.global_batch_size = 1;
        cfg.micro_batch_size = 1;
        cfg.epochs = 10;
        cfg.validation_fraction = 0.0;
        cfg.checkpoint_dir = scratch("stress_" + entry.path().stem().string()).string();
        Trainer<float> t(cfg, random_blocks(1000, 9, seen), {});
        const auto r = t.run();
        ASSERT_EQ(r.step_losses.size(), 10000u) << entry.path();
        const auto warmup = t.schedule().warmup_steps();
        for (std::size_t i = warmup; i < r.step_losses.size(); ++i) {
            ASSERT_TRUE(std::isfinite(r.step_losses[i])) << entry.path() << " step " << i + 1;
        }
    }
    EXPECT_GE(seen, 5u);
}

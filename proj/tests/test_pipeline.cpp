#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "lanebev/ablation.hpp"
#include "lanebev/checkpoint.hpp"
#include "lanebev/config.hpp"
#include "lanebev/errors.hpp"
#include "lanebev/trainer.hpp"
#include "test_util.hpp"

namespace lanebev {
namespace {

namespace fs = std::filesystem;

bool same_values(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::ranges::equal(a.values(), b.values());
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.model = testing::tiny_model();
  c.pretrain_steps = 20;
  c.steps = 10;
  c.seed = 3;
  return c;
}

std::vector<Sample> tiny_dataset(int n, std::uint64_t seed = 5) {
  DatasetGenConfig gen;
  gen.seed = seed;
  gen.base = testing::tiny_scene(0);
  return generate_split(gen, kTrainSplit, n);
}

class TempDir : public ::testing::Test {
 protected:
  fs::path dir;
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("lanebev_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
};

// --- config --------------------------------------------------------------

TEST(Config, TextRoundTrip) {
  TrainConfig c = tiny_config();
  c.train_data = "data/train";
  c.val_data = "data/val";
  c.depth_mode = DepthMode::method2;
  c.model.depth.mode = DepthBinMode::log_spaced;
  c.model.fusion = FusionKind::naive;
  c.objective.weights.instance = 0.25;
  c.objective.offset_kind = OffsetLossKind::l2;
  c.objective.sigma = 0.4;
  c.cluster.bandwidth = 0.8;
  c.protocol.y_samples = {3.0, 7.5, 12.0};
  c.optimizer.learning_rate = 3e-4;
  c.batch_size = 4;
  c.seed = 123456789012345ULL;
  const TrainConfig back = parse_config(to_text(c));
  EXPECT_EQ(to_text(back), to_text(c));
  EXPECT_EQ(back.model, c.model);
  EXPECT_EQ(back.depth_mode, DepthMode::method2);
  EXPECT_EQ(back.optimizer.learning_rate, 3e-4);
  EXPECT_EQ(back.protocol.y_samples, c.protocol.y_samples);
  EXPECT_EQ(back.seed, c.seed);
}

TEST(Config, DefaultsWhenKeysOmitted) {
  const TrainConfig c = parse_config("lanebev-config 1\n# only a comment\n\ntrain_data = x\n");
  EXPECT_EQ(c.train_data, "x");
  EXPECT_EQ(c.steps, 2000);
  EXPECT_EQ(c.pretrain_steps, 500);
  EXPECT_EQ(c.depth_mode, DepthMode::method3);
  EXPECT_EQ(c.objective.weights.confidence, 5.0);
}

TEST(Config, Errors) {
  const std::string head = "lanebev-config 1\n";
  EXPECT_THROW(parse_config(head + "no_such_key = 1\n"), ConfigError);
  EXPECT_THROW(parse_config(head + "steps = 1\nsteps = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("steps = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("lanebev-config 9\n"), ConfigError);
  EXPECT_THROW(parse_config(head + "steps = many\n"), ConfigError);
  EXPECT_THROW(parse_config(head + "depth_mode = method4\n"), ConfigError);
  EXPECT_THROW(parse_config(head + "channels = 0\n"), ConfigError);
  EXPECT_THROW(parse_config(head + "sigma = 1.5\n"), ConfigError);
  EXPECT_THROW(parse_config(head + "eval_y_samples = 5, 3\n"), ConfigError);
  EXPECT_THROW(parse_config(head + "a line without equals\n"), ConfigError);
}

TEST(Config, ModelTextRoundTrip) {
  ModelConfig m = testing::tiny_model();
  m.dat_gate = false;
  m.grid.x_min = -7.25;
  EXPECT_EQ(model_from_text(model_to_text(m)), m);
}

// --- checkpoint ----------------------------------------------------------

TEST_F(TempDir, CheckpointRoundTripIsBitExact) {
  const Network net(testing::tiny_model(), 17);
  save_checkpoint(net, dir / "a.ckpt");
  const Network back = load_network(dir / "a.ckpt");
  ASSERT_EQ(back.config(), net.config());
  ASSERT_EQ(back.parameters().count(), net.parameters().count());
  for (int i = 0; i < net.parameters().count(); ++i) {
    EXPECT_EQ(back.parameters().name(i), net.parameters().name(i));
    EXPECT_TRUE(same_values(back.parameters().value(i), net.parameters().value(i)));
  }
}

TEST_F(TempDir, CheckpointDimensionMismatch) {
  ModelConfig a = testing::tiny_model();
  save_checkpoint(Network(a, 1), dir / "a.ckpt");
  ModelConfig b = a;
  b.dims.depth_bins = 8;
  b.depth.bins = 8;
  Network other(b, 1);
  EXPECT_THROW(load_into(other, dir / "a.ckpt"), DimensionMismatch);
}

TEST_F(TempDir, CheckpointMissingAndCorrupt) {
  EXPECT_THROW(read_checkpoint(dir / "none.ckpt"), MissingCheckpoint);
  std::ofstream(dir / "bad.ckpt") << "not a checkpoint";
  EXPECT_THROW(read_checkpoint(dir / "bad.ckpt"), FormatError);
  save_checkpoint(Network(testing::tiny_model(), 1), dir / "full.ckpt");
  const auto size = fs::file_size(dir / "full.ckpt");
  fs::resize_file(dir / "full.ckpt", size - 5);
  EXPECT_THROW(read_checkpoint(dir / "full.ckpt"), FormatError);
}

// --- training ------------------------------------------------------------

TEST(Pretrain, RejectsMethod3) {
  TrainConfig c = tiny_config();
  c.depth_mode = DepthMode::method3;
  EXPECT_THROW(pretrain_depth(c, tiny_dataset(2)), ConfigError);
}

TEST(Pretrain, DepthLossDescends) {
  TrainConfig c = tiny_config();
  c.depth_mode = DepthMode::method1;
  c.pretrain_steps = 200;
  RunRecord rec;
  pretrain_depth(c, tiny_dataset(30), &rec);
  ASSERT_EQ(rec.steps.size(), 200u);
  auto window = [&](std::size_t from) {
    double s = 0.0;
    for (std::size_t i = from; i < from + 20; ++i) s += rec.steps[i].loss.parts[0];
    return s / 20.0;
  };
  EXPECT_LT(window(180), window(0));
  for (const StepRecord& s : rec.steps) EXPECT_EQ(s.phase, "pretrain");
}

TEST(Pretrain, Reproducible) {
  TrainConfig c = tiny_config();
  c.depth_mode = DepthMode::method2;
  const auto data = tiny_dataset(4);
  RunRecord a, b;
  pretrain_depth(c, data, &a);
  pretrain_depth(c, data, &b);
  ASSERT_EQ(a.steps.size(), b.steps.size());
  EXPECT_EQ(a.steps.back().loss.total, b.steps.back().loss.total);
}

TEST(Train, MissingCheckpointForPretrainedModes) {
  for (DepthMode mode : {DepthMode::method1, DepthMode::method2}) {
    TrainConfig c = tiny_config();
    c.depth_mode = mode;
    EXPECT_THROW(train(c, tiny_dataset(2), {}), MissingCheckpoint);
    c.pretrain_checkpoint = "/nonexistent/pre.ckpt";
    EXPECT_THROW(train(c, tiny_dataset(2), {}), MissingCheckpoint);
  }
}

void expect_frozen(DepthMode mode) {
  TrainConfig c = tiny_config();
  c.depth_mode = mode;
  c.steps = 100;
  const auto data = tiny_dataset(6);
  const Network pre = pretrain_depth(c, data);
  const TrainResult r = train(c, data, {}, &pre);
  const std::vector<bool> mask = trainable_mask(pre, mode);
  int frozen = 0, moved = 0;
  for (int i = 0; i < pre.parameters().count(); ++i) {
    const bool same = same_values(pre.parameters().value(i), r.net.parameters().value(i));
    if (!mask[static_cast<std::size_t>(i)]) {
      ++frozen;
      EXPECT_TRUE(same) << pre.parameters().name(i);
      EXPECT_TRUE(mode == DepthMode::method1 ? pre.is_backbone_parameter(i)
                                             : pre.is_depth_branch_parameter(i));
    } else {
      moved += !same;
    }
  }
  EXPECT_GT(frozen, 0);
  EXPECT_GT(moved, 0);
}

TEST(Train, Method1FreezesBackbone) { expect_frozen(DepthMode::method1); }
TEST(Train, Method2FreezesDepthBranch) { expect_frozen(DepthMode::method2); }

TEST(Train, FreezeSetsNest) {
  const Network net(testing::tiny_model(), 1);
  const auto m1 = trainable_mask(net, DepthMode::method1);
  const auto m2 = trainable_mask(net, DepthMode::method2);
  const auto m3 = trainable_mask(net, DepthMode::method3);
  for (std::size_t i = 0; i < m1.size(); ++i) {
    EXPECT_TRUE(m3[i]);
    if (m1[i]) EXPECT_TRUE(m2[i]);  // method1 freezes a superset
  }
}

TEST(Train, ZeroWeightsLeaveParametersUnchanged) {
  TrainConfig c = tiny_config();
  c.objective.weights = LossWeights{0, 0, 0, 0, 0};
  c.steps = 1;
  const Network init(c.model, mix_seed(c.seed, 1));
  const TrainResult r = train(c, tiny_dataset(2), {});
  for (int i = 0; i < init.parameters().count(); ++i) {
    EXPECT_TRUE(same_values(init.parameters().value(i), r.net.parameters().value(i)))
        << init.parameters().name(i);
  }
}

TEST(Train, ReproducibleAndRecombines) {
  TrainConfig c = tiny_config();
  c.steps = 15;
  c.batch_size = 2;
  const auto data = tiny_dataset(5);
  const TrainResult a = train(c, data, {});
  const TrainResult b = train(c, data, {});
  ASSERT_EQ(a.record.steps.size(), 15u);
  ASSERT_EQ(a.record.steps.size(), b.record.steps.size());
  for (std::size_t i = 0; i < a.record.steps.size(); ++i) {
    const LossBreakdown& la = a.record.steps[i].loss;
    EXPECT_EQ(la.total, b.record.steps[i].loss.total);
    EXPECT_EQ(la.parts, b.record.steps[i].loss.parts);
    double sum = 0.0;
    for (double w : la.weighted) sum += w;
    EXPECT_NEAR(sum, la.total, 1e-9);
  }
  EXPECT_EQ(a.record.config_text, to_text(c));
}

TEST(Train, PeriodicValidationAndJson) {
  TrainConfig c = tiny_config();
  c.steps = 6;
  c.eval_every = 3;
  const TrainResult r = train(c, tiny_dataset(3), tiny_dataset(2, 99));
  ASSERT_EQ(r.record.evals.size(), 2u);
  EXPECT_EQ(r.record.evals[0].step, 3);
  const auto j = nlohmann::json::parse(r.record.to_json());
  EXPECT_EQ(j["steps"].size(), 6u);
  EXPECT_EQ(j["config"].get<std::string>(), r.record.config_text);
}

TEST(Train, RejectsMismatchedData) {
  TrainConfig c = tiny_config();
  DatasetGenConfig gen;
  gen.base = testing::tiny_scene(0);
  gen.base.depth.bins = 7;
  EXPECT_THROW(train(c, generate_split(gen, kTrainSplit, 1), {}), DimensionMismatch);
}

// --- evaluation ----------------------------------------------------------

TEST(EvaluateRun, GroundTruthShimIsPerfect) {
  TrainConfig c = tiny_config();
  // Stations at the row centers, where reconstruction is exact.
  c.protocol.y_samples.clear();
  for (int r = 0; r < c.model.grid.rows; ++r) c.protocol.y_samples.push_back(c.model.grid.row_center_y(r));
  c.protocol.far_range.second = c.model.grid.y_max;
  const auto data = tiny_dataset(10);
  const Predictor shim = [&](const Sample& s) {
    const LaneTarget t = make_lane_target(s, c.model.grid);
    return prediction_from_target(t, std::max(t.lane_count, 1));
  };
  const MetricsReport r = evaluate_predictions(shim, data, c.model.grid, c.cluster, c.protocol);
  EXPECT_EQ(r.f1, 1.0);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_LT(r.x_err_near + r.x_err_far + r.z_err_near + r.z_err_far, 1e-9);
}

TEST_F(TempDir, EvaluateRunIsDeterministicAndChecksDims) {
  TrainConfig c = tiny_config();
  const Network net(c.model, 4);
  save_checkpoint(net, dir / "m.ckpt");
  const auto data = tiny_dataset(3);
  EXPECT_EQ(evaluate_run(dir / "m.ckpt", data, c), evaluate_run(dir / "m.ckpt", data, c));
  EXPECT_EQ(evaluate_run(dir / "m.ckpt", data, c), evaluate_run(net, data, c));
  TrainConfig other = c;
  other.model.dims.depth_bins = other.model.depth.bins = 8;
  EXPECT_THROW(evaluate_run(dir / "m.ckpt", data, other), DimensionMismatch);
}

// --- ablation ------------------------------------------------------------

TEST(Ablation, VariantListValidation) {
  EXPECT_EQ(parse_variant_list("no_depth,no_dat,full").size(), 3u);
  EXPECT_EQ(parse_variant_list(" full , method1 ").at(1), "method1");
  EXPECT_THROW(parse_variant_list("full,full"), ConfigError);
  EXPECT_THROW(parse_variant_list("full,bogus"), ConfigError);
  EXPECT_THROW(parse_variant_list(""), ConfigError);
}

TEST(Ablation, VariantSemantics) {
  const TrainConfig base = tiny_config();
  const TrainConfig nd = variant_config(base, "no_depth");
  EXPECT_EQ(nd.objective.weights.depth, 0.0);
  EXPECT_FALSE(nd.model.dat_gate);
  const TrainConfig nt = variant_config(base, "no_dat");
  EXPECT_GT(nt.objective.weights.depth, 0.0);
  EXPECT_FALSE(nt.model.dat_gate);
  EXPECT_EQ(variant_config(base, "method1").depth_mode, DepthMode::method1);
  EXPECT_EQ(variant_config(base, "naive_fusion").model.fusion, FusionKind::naive);
  EXPECT_EQ(to_text(variant_config(base, "full")), to_text(variant_config(base, "fusion_net")));
}

TEST(Ablation, NaiveFusionHasMoreParameters) {
  EXPECT_GT(count_parameters(variant_config(TrainConfig{}, "naive_fusion").model),
            count_parameters(variant_config(TrainConfig{}, "fusion_net").model));
}

TEST(Ablation, TableHasOneRowPerVariant) {
  TrainConfig c = tiny_config();
  c.steps = 3;
  c.pretrain_steps = 3;
  const auto data = tiny_dataset(3);
  std::vector<std::string> started;
  AblationOptions opts;
  opts.on_variant = [&](const std::string& n) { started.push_back(n); };
  const auto rows = ablate(c, {"no_depth", "full", "method3", "method1"}, data, data, opts);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[1].report, rows[2].report);  // full and method3 share one run
  EXPECT_EQ(started.size(), 3u);
  for (const AblationRow& r : rows) EXPECT_EQ(r.parameters, count_parameters(c.model));
  const std::string table = format_ablation_table(rows);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 5);
  EXPECT_THROW(ablate(c, {"full", "full"}, data, data), ConfigError);
}

// --- command line --------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LANEBEV_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST_F(TempDir, CliExitCodes) {
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("no-such-command"), 1);
  EXPECT_EQ(run_cli("train"), 1);  // missing required --config

  std::ofstream(dir / "bad.cfg") << "lanebev-config 1\nwhat = 1\n";
  EXPECT_EQ(run_cli("train --config " + (dir / "bad.cfg").string()), 1);

  ASSERT_EQ(run_cli("gen-data --out " + (dir / "d").string() +
                    " --n-train 2 --n-val 1"),
            0);
  EXPECT_TRUE(fs::exists(dir / "d" / "train" / "manifest.txt"));
  EXPECT_EQ(run_cli("eval --checkpoint " + (dir / "none.ckpt").string() + " --data " +
                    (dir / "d" / "val").string()),
            2);
}

}  // namespace
}  // namespace lanebev

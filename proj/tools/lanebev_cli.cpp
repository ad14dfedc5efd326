// Command-line driver: dataset generation, training, evaluation, inference,
// ablations and plotting. Exit codes: 0 success, 1 config error, 2 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lanebev/ablation.hpp"
#include "lanebev/checkpoint.hpp"
#include "lanebev/config.hpp"
#include "lanebev/errors.hpp"
#include "lanebev/metrics.hpp"
#include "lanebev/plot.hpp"
#include "lanebev/postprocess.hpp"
#include "lanebev/scenegen.hpp"
#include "lanebev/trainer.hpp"

namespace fs = std::filesystem;
using namespace lanebev;

namespace {

constexpr int kConfigExit = 1;
constexpr int kRuntimeExit = 2;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

TrainHooks progress(int every) {
  TrainHooks hooks;
  hooks.on_step = [every](const StepRecord& s) {
    if (every > 0 && s.step % every == 0) {
      std::fprintf(stderr, "[%s] step %d loss %.6f (depth %.4f conf %.4f inst %.4f offx %.4f offz %.4f)\n",
                   s.phase.c_str(), s.step, s.loss.total, s.loss.parts[0], s.loss.parts[1],
                   s.loss.parts[2], s.loss.parts[3], s.loss.parts[4]);
    }
  };
  return hooks;
}

struct GenOptions {
  std::string out;
  DatasetGenConfig gen;
};

void run_gen_data(const GenOptions& o) {
  const DatasetGenConfig& g = o.gen;
  g.validate();
  const fs::path root(o.out);
  write_dataset(generate_split(g, kTrainSplit, g.n_train), root / "train");
  write_dataset(generate_split(g, kValSplit, g.n_val), root / "val");
  std::printf("wrote %d train and %d val samples to %s\n", g.n_train, g.n_val, root.string().c_str());
}

struct TrainOptions {
  std::string config;
  int log_every = 50;
};

void run_train(const TrainOptions& o) {
  const TrainConfig config = load_config(o.config);
  if (config.train_data.empty()) throw ConfigError("train_data is not set");
  const fs::path out_dir(config.output_dir);
  fs::create_directories(out_dir);
  const std::vector<Sample> train_set = read_dataset(config.train_data);
  const std::vector<Sample> val_set =
      config.val_data.empty() ? std::vector<Sample>{} : read_dataset(config.val_data);

  std::optional<Network> pretrained;
  RunRecord pre_record;
  if (config.depth_mode != DepthMode::method3 && config.pretrain_checkpoint.empty()) {
    pretrained.emplace(pretrain_depth(config, train_set, &pre_record, progress(o.log_every)));
    save_checkpoint(*pretrained, out_dir / "pretrain.ckpt");
  }
  TrainResult result = train(config, train_set, val_set, pretrained ? &*pretrained : nullptr,
                             progress(o.log_every));
  const fs::path ckpt = out_dir / "model.ckpt";
  save_checkpoint(result.net, ckpt);
  RunRecord& record = result.record;
  record.checkpoint = ckpt.string();
  record.steps.insert(record.steps.begin(), pre_record.steps.begin(), pre_record.steps.end());
  record.wall_seconds += pre_record.wall_seconds;
  write_text(out_dir / "run.json", record.to_json());
  if (!val_set.empty()) {
    const MetricsReport report = evaluate_run(result.net, val_set, config);
    write_report(report, out_dir / "val_report.txt");
    std::printf("%s", format_report_table({{"val", report}}).c_str());
  }
  std::printf("checkpoint: %s\n", ckpt.string().c_str());
}

struct EvalOptions {
  std::string checkpoint;
  std::string data;
  std::string config;
  std::string out;
};

TrainConfig config_or_checkpoint_model(const std::string& config_path, const std::string& checkpoint) {
  if (!config_path.empty()) return load_config(config_path);
  TrainConfig c;
  c.model = read_checkpoint(checkpoint).model;
  return c;
}

void run_eval(const EvalOptions& o) {
  const TrainConfig config = config_or_checkpoint_model(o.config, o.checkpoint);
  const std::vector<Sample> samples = read_dataset(o.data);
  const MetricsReport report = evaluate_run(o.checkpoint, samples, config);
  std::printf("%s", format_report_table({{fs::path(o.data).filename().string(), report}}).c_str());
  if (!o.out.empty()) write_report(report, o.out);
}

struct InferOptions {
  std::string checkpoint;
  std::string data;
  std::string config;
  std::string out;
  int index = -1;
};

void run_infer(const InferOptions& o) {
  const TrainConfig config = config_or_checkpoint_model(o.config, o.checkpoint);
  Network net(config.model);
  load_into(net, o.checkpoint);
  const std::vector<Sample> samples = read_dataset(o.data);
  if (o.index >= static_cast<int>(samples.size())) throw InvalidArgument("sample index out of range");
  std::vector<std::vector<LaneInstance>> dump;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (o.index >= 0 && static_cast<int>(i) != o.index) continue;
    dump.push_back(infer(net, samples[i], config.cluster));
  }
  write_lane_dump(dump, o.out);
  std::printf("wrote lanes for %zu sample(s) to %s\n", dump.size(), o.out.c_str());
}

struct AblateOptions {
  std::string config;
  std::string variants = "no_depth,no_dat,full";
  std::string eval_split = "val";
  std::string out;
};

void run_ablate(const AblateOptions& o) {
  const std::vector<std::string> variants = parse_variant_list(o.variants);
  const TrainConfig config = load_config(o.config);
  if (config.train_data.empty()) throw ConfigError("train_data is not set");
  const std::vector<Sample> train_set = read_dataset(config.train_data);
  std::vector<Sample> eval_set;
  if (o.eval_split == "train") {
    eval_set = limit_samples(train_set, config.train_limit);
  } else if (o.eval_split == "val") {
    if (config.val_data.empty()) throw ConfigError("val_data is not set");
    eval_set = read_dataset(config.val_data);
  } else {
    throw ConfigError("--eval-split must be train or val");
  }
  AblationOptions options;
  options.on_variant = [](const std::string& name) { std::fprintf(stderr, "training variant %s\n", name.c_str()); };
  const std::string table = format_ablation_table(ablate(config, variants, train_set, eval_set, options));
  std::printf("%s", table.c_str());
  if (!o.out.empty()) write_text(o.out, table);
}

struct PlotOptions {
  std::string dump;
  std::string data;
  std::string config;
  std::string out;
  int index = 0;
  int dump_index = -1;
};

void run_plot(const PlotOptions& o) {
  const BEVGridSpec grid = o.config.empty() ? BEVGridSpec{} : load_config(o.config).model.grid;
  const auto dump = read_lane_dump(o.dump);
  const std::vector<Sample> samples = read_dataset(o.data);
  const int di = o.dump_index >= 0 ? o.dump_index : (dump.size() == 1 ? 0 : o.index);
  if (o.index < 0 || o.index >= static_cast<int>(samples.size())) throw InvalidArgument("sample index out of range");
  if (di < 0 || di >= static_cast<int>(dump.size())) throw InvalidArgument("dump index out of range");
  write_text(o.out, render_lanes_svg(polylines(dump[static_cast<std::size_t>(di)]),
                                     samples[static_cast<std::size_t>(o.index)].lanes, grid));
  std::printf("wrote %s\n", o.out.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monocular 3D lane detection with depth-aware BEV fusion"};
  app.require_subcommand(1);

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic train/val dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory (gets train/ and val/)")->required();
  gen_cmd->add_option("--seed", gen.gen.seed, "Dataset seed");
  gen_cmd->add_option("--n-train", gen.gen.n_train, "Training samples");
  gen_cmd->add_option("--n-val", gen.gen.n_val, "Validation samples");
  gen_cmd->add_option("--min-lanes", gen.gen.min_lanes);
  gen_cmd->add_option("--max-lanes", gen.gen.max_lanes);
  gen_cmd->add_option("--curvature-max", gen.gen.curvature_max);
  gen_cmd->add_option("--slope-max", gen.gen.slope_max);
  gen_cmd->add_option("--offset-max", gen.gen.lateral_offset_max);
  gen_cmd->add_option("--image-height", gen.gen.base.image_height);
  gen_cmd->add_option("--image-width", gen.gen.base.image_width);
  gen_cmd->add_option("--cam-height", gen.gen.base.cam.cam_height);
  gen_cmd->add_option("--pitch", gen.gen.base.cam.pitch);
  gen_cmd->add_option("--depth-bins", gen.gen.base.depth.bins);
  gen_cmd->add_option("--depth-spacing", gen.gen.base.depth.mode, "uniform or log")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, DepthBinMode>{{"uniform", DepthBinMode::uniform}, {"log", DepthBinMode::log_spaced}}));

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("--config", tr.config)->required();
  train_cmd->add_option("--log-every", tr.log_every, "Progress period in steps (0 = quiet)");

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  eval_cmd->add_option("--data", ev.data, "Dataset split directory")->required();
  eval_cmd->add_option("--config", ev.config, "Config (defaults to the checkpoint's model)");
  eval_cmd->add_option("--out", ev.out, "Key-value report file");

  InferOptions inf;
  auto* infer_cmd = app.add_subcommand("infer", "Write predicted lanes for a split or one sample");
  infer_cmd->add_option("--checkpoint", inf.checkpoint)->required();
  infer_cmd->add_option("--data", inf.data)->required();
  infer_cmd->add_option("--config", inf.config);
  infer_cmd->add_option("--index", inf.index, "Single sample index");
  infer_cmd->add_option("--out", inf.out, "Lane dump file")->required();

  AblateOptions ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and compare model variants");
  ablate_cmd->add_option("--config", ab.config)->required();
  ablate_cmd->add_option("--variants", ab.variants, "Comma-separated variant names");
  ablate_cmd->add_option("--eval-split", ab.eval_split, "train or val");
  ablate_cmd->add_option("--out", ab.out, "Table output file");

  PlotOptions pl;
  auto* plot_cmd = app.add_subcommand("plot", "Render predicted vs ground-truth lanes as SVG");
  plot_cmd->add_option("--dump", pl.dump)->required();
  plot_cmd->add_option("--data", pl.data)->required();
  plot_cmd->add_option("--index", pl.index, "Ground-truth sample index");
  plot_cmd->add_option("--dump-index", pl.dump_index, "Record index in the dump");
  plot_cmd->add_option("--config", pl.config, "Config providing the grid");
  plot_cmd->add_option("--out", pl.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (*gen_cmd) run_gen_data(gen);
    if (*train_cmd) run_train(tr);
    if (*eval_cmd) run_eval(ev);
    if (*infer_cmd) run_infer(inf);
    if (*ablate_cmd) run_ablate(ab);
    if (*plot_cmd) run_plot(pl);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigExit;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeExit;
  }
  return 0;
}

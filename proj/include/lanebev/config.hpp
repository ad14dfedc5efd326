#pragma once

// Training configuration and its flat text format:
//
//   lanebev-config 1
//   # comment
//   key = value
//
// Unknown keys, malformed values and a missing or wrong header are
// ConfigError.

#include <cstdint>
#include <filesystem>
#include <string>

#include "lanebev/losses.hpp"
#include "lanebev/metrics.hpp"
#include "lanebev/network.hpp"
#include "lanebev/postprocess.hpp"

namespace lanebev {

enum class DepthMode {
  method1,  ///< pretrain depth, then freeze trunk and both branches
  method2,  ///< pretrain depth, then freeze the depth branch
  method3,  ///< joint training from scratch
};

const char* to_string(DepthMode mode);

struct OptimizerSettings {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

struct TrainConfig {
  std::string train_data;
  std::string val_data;
  std::string output_dir = "run";
  /// Depth-pretraining checkpoint for methods 1 and 2. The CLI pretrains
  /// and writes one into output_dir when this is empty.
  std::string pretrain_checkpoint;

  ModelConfig model;
  ObjectiveSettings objective;
  ClusterParams cluster;
  EvalProtocol protocol = EvalProtocol::desk_default();
  OptimizerSettings optimizer;

  DepthMode depth_mode = DepthMode::method3;
  int pretrain_steps = 500;
  int steps = 2000;
  int batch_size = 1;
  /// Validation evaluation period in steps; 0 disables periodic evaluation.
  int eval_every = 0;
  /// Use only the first N training samples; 0 uses all.
  int train_limit = 0;
  std::uint64_t seed = 1;

  void validate() const;
};

TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
/// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const TrainConfig& config);

/// Model-shape subset used inside checkpoints.
std::string model_to_text(const ModelConfig& model);
ModelConfig model_from_text(const std::string& text);

}  // namespace lanebev

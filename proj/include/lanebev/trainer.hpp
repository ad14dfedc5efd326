#pragma once

// Optimization loops for depth pretraining and the three depth-training
// regimes, plus dataset-level evaluation.

#include <functional>
#include <string>
#include <vector>

#include "lanebev/config.hpp"
#include "lanebev/losses.hpp"
#include "lanebev/metrics.hpp"
#include "lanebev/network.hpp"
#include "lanebev/postprocess.hpp"
#include "lanebev/scenegen.hpp"

namespace lanebev {

/// Adam with optional decoupled weight decay; parameters whose mask entry is
/// false are never written.
class Adam {
 public:
  Adam(const ParameterSet& params, OptimizerSettings settings);

  void step(ParameterSet& params, const Gradients& grads, const std::vector<bool>& trainable);
  int steps_taken() const noexcept { return t_; }

 private:
  OptimizerSettings s_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  int t_ = 0;
};

struct StepRecord {
  std::string phase;  ///< "pretrain" or "train"
  int step = 0;
  LossBreakdown loss;
};

struct EvalRecord {
  int step = 0;
  MetricsReport report;
};

struct RunRecord {
  std::string config_text;
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  std::string checkpoint;
  double wall_seconds = 0.0;

  std::string to_json() const;
};

struct TrainHooks {
  /// Called after every optimizer step.
  std::function<void(const StepRecord&)> on_step;
};

/// Parameters a regime keeps fixed during the main training phase.
std::vector<bool> trainable_mask(const Network& net, DepthMode mode);

/// Trains the trunk and depth branch on the depth loss alone. Throws
/// ConfigError for method3, NonFiniteLoss on divergence.
Network pretrain_depth(const TrainConfig& config, const std::vector<Sample>& train,
                       RunRecord* record = nullptr, const TrainHooks& hooks = {});

struct TrainResult {
  Network net;
  RunRecord record;
};

/// Main training under the weighted objective. Methods 1 and 2 start from
/// `pretrained` (or config.pretrain_checkpoint when null) and throw
/// MissingCheckpoint without one.
TrainResult train(const TrainConfig& config, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const Network* pretrained = nullptr,
                  const TrainHooks& hooks = {});

/// Lanes extracted from the network's prediction for one sample.
std::vector<LaneInstance> infer(const Network& net, const Sample& sample, const ClusterParams& params);

using Predictor = std::function<LanePrediction(const Sample&)>;

/// Prediction -> clustering -> metrics over a set of samples.
MetricsReport evaluate_predictions(const Predictor& predict, const std::vector<Sample>& samples,
                                   const BEVGridSpec& grid, const ClusterParams& cluster,
                                   const EvalProtocol& protocol);

MetricsReport evaluate_run(const Network& net, const std::vector<Sample>& samples,
                           const TrainConfig& config);
/// Loads the checkpoint into a network built from config.model; throws
/// DimensionMismatch when they disagree.
MetricsReport evaluate_run(const std::filesystem::path& checkpoint,
                           const std::vector<Sample>& samples, const TrainConfig& config);

/// First config.train_limit samples (all when the limit is 0).
std::vector<Sample> limit_samples(const std::vector<Sample>& samples, int limit);

}  // namespace lanebev

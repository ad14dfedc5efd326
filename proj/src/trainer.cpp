#include "lanebev/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "lanebev/checkpoint.hpp"
#include "lanebev/errors.hpp"

namespace lanebev {

Adam::Adam(const ParameterSet& params, OptimizerSettings settings)
    : s_(settings), m_(params.zero_gradients()), v_(params.zero_gradients()) {}

void Adam::step(ParameterSet& params, const Gradients& grads, const std::vector<bool>& trainable) {
  ++t_;
  const double bc1 = 1.0 - std::pow(s_.beta1, t_);
  const double bc2 = 1.0 - std::pow(s_.beta2, t_);
  for (int id = 0; id < params.count(); ++id) {
    if (!trainable[static_cast<std::size_t>(id)]) continue;
    Tensor& w = params.value(id);
    const Tensor& g = grads[static_cast<std::size_t>(id)];
    Tensor& m = m_[static_cast<std::size_t>(id)];
    Tensor& v = v_[static_cast<std::size_t>(id)];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = s_.beta1 * m[i] + (1.0 - s_.beta1) * g[i];
      v[i] = s_.beta2 * v[i] + (1.0 - s_.beta2) * g[i] * g[i];
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + s_.epsilon);
      w[i] -= s_.learning_rate * (update + s_.weight_decay * w[i]);
    }
  }
}

std::string RunRecord::to_json() const {
  nlohmann::json j;
  j["config"] = config_text;
  j["checkpoint"] = checkpoint;
  j["wall_seconds"] = wall_seconds;
  nlohmann::json steps_json = nlohmann::json::array();
  for (const StepRecord& s : steps) {
    nlohmann::json parts;
    for (std::size_t i = 0; i < kLossNames.size(); ++i) parts[kLossNames[i]] = s.loss.parts[i];
    steps_json.push_back({{"phase", s.phase}, {"step", s.step}, {"total", s.loss.total}, {"parts", parts}});
  }
  j["steps"] = steps_json;
  nlohmann::json evals_json = nlohmann::json::array();
  for (const EvalRecord& e : evals) {
    const MetricsReport& r = e.report;
    evals_json.push_back({{"step", e.step},
                          {"f1", r.f1},
                          {"precision", r.precision},
                          {"recall", r.recall},
                          {"accuracy", r.accuracy},
                          {"x_err_near", r.x_err_near},
                          {"x_err_far", r.x_err_far},
                          {"z_err_near", r.z_err_near},
                          {"z_err_far", r.z_err_far}});
  }
  j["evals"] = evals_json;
  return j.dump(2);
}

std::vector<bool> trainable_mask(const Network& net, DepthMode mode) {
  std::vector<bool> mask(static_cast<std::size_t>(net.parameters().count()), true);
  for (int id = 0; id < net.parameters().count(); ++id) {
    if (mode == DepthMode::method1 && net.is_backbone_parameter(id)) mask[static_cast<std::size_t>(id)] = false;
    if (mode == DepthMode::method2 && net.is_depth_branch_parameter(id)) mask[static_cast<std::size_t>(id)] = false;
  }
  return mask;
}

std::vector<Sample> limit_samples(const std::vector<Sample>& samples, int limit) {
  if (limit <= 0 || static_cast<std::size_t>(limit) >= samples.size()) return samples;
  return {samples.begin(), samples.begin() + limit};
}

namespace {

/// Visits samples in a fresh seeded permutation each epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    if (n == 0) throw InvalidArgument("training set is empty");
    reshuffle();
  }

  std::size_t next() {
    if (pos_ == order_.size()) reshuffle();
    return order_[pos_++];
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    for (std::size_t i = order_.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng_.uniform_int(0, static_cast<int>(i) - 1));
      std::swap(order_[i - 1], order_[j]);
    }
    pos_ = 0;
  }

  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t pos_ = 0;
};

struct PreparedSample {
  Tensor image;
  DepthTarget depth;
  LaneTarget lanes;
};

std::vector<PreparedSample> prepare(const std::vector<Sample>& samples, const ModelConfig& model) {
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) {
    if (s.height != model.dims.image_height || s.width != model.dims.image_width) {
      throw DimensionMismatch("sample size " + std::to_string(s.height) + "x" + std::to_string(s.width) +
                              " differs from the model input");
    }
    if (!(s.depth == model.depth)) {
      throw DimensionMismatch("sample depth bins differ from the model's");
    }
    out.push_back({image_tensor(s), pool_depth_target(s, model.dims.downsample), make_lane_target(s, model.grid)});
  }
  return out;
}

void scale_gradients(Gradients& grads, double s) {
  for (Tensor& g : grads) g *= s;
}

void check_finite(const Gradients& grads, const ParameterSet& params, int step) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].all_finite()) {
      throw NonFiniteLoss("non-finite gradient for " + params.name(static_cast<int>(i)) + " at step " +
                          std::to_string(step));
    }
  }
}

LossBreakdown mean_breakdown(const std::vector<LossBreakdown>& parts) {
  LossBreakdown out;
  for (const LossBreakdown& b : parts) {
    for (std::size_t i = 0; i < out.parts.size(); ++i) {
      out.parts[i] += b.parts[i] / static_cast<double>(parts.size());
      out.weighted[i] += b.weighted[i] / static_cast<double>(parts.size());
    }
  }
  for (double w : out.weighted) out.total += w;
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

Network pretrain_depth(const TrainConfig& config, const std::vector<Sample>& train_set,
                       RunRecord* record, const TrainHooks& hooks) {
  config.validate();
  if (config.depth_mode == DepthMode::method3) {
    throw ConfigError("pretraining not applicable to method3");
  }
  const auto start = std::chrono::steady_clock::now();
  Network net(config.model, mix_seed(config.seed, 1));
  const std::vector<Sample> samples = limit_samples(train_set, config.train_limit);
  const std::vector<PreparedSample> data = prepare(samples, config.model);
  std::vector<bool> mask(static_cast<std::size_t>(net.parameters().count()), false);
  for (int id = 0; id < net.parameters().count(); ++id) {
    const std::string& n = net.parameters().name(id);
    mask[static_cast<std::size_t>(id)] = n.starts_with("trunk.") || n.starts_with("depth.");
  }
  Adam adam(net.parameters(), config.optimizer);
  BatchSampler sampler(data.size(), mix_seed(config.seed, 2));
  for (int step = 1; step <= config.pretrain_steps; ++step) {
    Gradients grads = net.parameters().zero_gradients();
    std::vector<LossBreakdown> parts;
    for (int b = 0; b < config.batch_size; ++b) {
      const std::size_t i = sampler.next();
      const ForwardPass pass = net.forward_depth(data[i].image, samples[i].cam);
      DepthLoss ld = depth_loss(pass.depth, data[i].depth);
      LossWeights only_depth{1.0, 0.0, 0.0, 0.0, 0.0};
      parts.push_back(total_loss({ld.value, 0.0, 0.0, 0.0, 0.0}, only_depth));
      OutputGradients dout;
      dout.depth_probs = std::move(ld.grad);
      net.backward(pass, dout, grads);
    }
    scale_gradients(grads, 1.0 / config.batch_size);
    check_finite(grads, net.parameters(), step);
    adam.step(net.parameters(), grads, mask);
    const StepRecord rec{"pretrain", step, mean_breakdown(parts)};
    if (record) record->steps.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
  }
  if (record) record->wall_seconds += seconds_since(start);
  return net;
}

TrainResult train(const TrainConfig& config, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const Network* pretrained,
                  const TrainHooks& hooks) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  TrainResult result{Network(config.model, mix_seed(config.seed, 1)), RunRecord{}};
  Network& net = result.net;
  result.record.config_text = to_text(config);

  if (config.depth_mode != DepthMode::method3) {
    if (pretrained) {
      if (!(pretrained->config() == config.model)) {
        throw DimensionMismatch("pretrained network does not match the configured model");
      }
      net.parameters() = pretrained->parameters();
    } else if (!config.pretrain_checkpoint.empty()) {
      load_into(net, config.pretrain_checkpoint);
    } else {
      throw MissingCheckpoint(std::string(to_string(config.depth_mode)) +
                              " needs a depth-pretraining checkpoint");
    }
  }

  const std::vector<Sample> samples = limit_samples(train_set, config.train_limit);
  const std::vector<PreparedSample> data = prepare(samples, config.model);
  const std::vector<bool> mask = trainable_mask(net, config.depth_mode);
  Adam adam(net.parameters(), config.optimizer);
  BatchSampler sampler(data.size(), mix_seed(config.seed, 3));
  for (int step = 1; step <= config.steps; ++step) {
    Gradients grads = net.parameters().zero_gradients();
    std::vector<LossBreakdown> parts;
    for (int b = 0; b < config.batch_size; ++b) {
      const std::size_t i = sampler.next();
      const ForwardPass pass = net.forward(data[i].image, samples[i].cam);
      OutputGradients dout;
      parts.push_back(evaluate_objective(pass, data[i].depth, data[i].lanes, config.objective, dout));
      net.backward(pass, dout, grads);
    }
    scale_gradients(grads, 1.0 / config.batch_size);
    check_finite(grads, net.parameters(), step);
    adam.step(net.parameters(), grads, mask);
    const StepRecord rec{"train", step, mean_breakdown(parts)};
    result.record.steps.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
    if (config.eval_every > 0 && !val_set.empty() && step % config.eval_every == 0) {
      result.record.evals.push_back({step, evaluate_run(net, val_set, config)});
    }
  }
  result.record.wall_seconds = seconds_since(start);
  return result;
}

std::vector<LaneInstance> infer(const Network& net, const Sample& sample, const ClusterParams& params) {
  return extract_lanes(net.forward(sample).prediction, net.config().grid, params);
}

MetricsReport evaluate_predictions(const Predictor& predict, const std::vector<Sample>& samples,
                                   const BEVGridSpec& grid, const ClusterParams& cluster_params,
                                   const EvalProtocol& protocol) {
  MetricsAccumulator acc(protocol);
  for (const Sample& s : samples) {
    acc.add(polylines(extract_lanes(predict(s), grid, cluster_params)), s.lanes);
  }
  return acc.report();
}

MetricsReport evaluate_run(const Network& net, const std::vector<Sample>& samples,
                           const TrainConfig& config) {
  return evaluate_predictions([&net](const Sample& s) { return net.forward(s).prediction; }, samples,
                              config.model.grid, config.cluster, config.protocol);
}

MetricsReport evaluate_run(const std::filesystem::path& checkpoint,
                           const std::vector<Sample>& samples, const TrainConfig& config) {
  Network net(config.model);
  load_into(net, checkpoint);
  return evaluate_run(net, samples, config);
}

}  // namespace lanebev

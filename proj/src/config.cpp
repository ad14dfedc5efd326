#include "lanebev/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "lanebev/errors.hpp"

namespace lanebev {

const char* to_string(DepthMode mode) {
  switch (mode) {
    case DepthMode::method1: return "method1";
    case DepthMode::method2: return "method2";
    case DepthMode::method3: return "method3";
  }
  return "?";
}

void TrainConfig::validate() const {
  model.validate();
  objective.weights.validate();
  if (!(objective.sigma > 0.0 && objective.sigma < 1.0)) throw ConfigError("sigma must lie in (0, 1)");
  if (!(objective.instance.pull_margin >= 0.0)) throw ConfigError("pull_margin must be >= 0");
  if (!(objective.instance.push_epsilon > 0.0)) throw ConfigError("push_epsilon must be positive");
  cluster.validate();
  protocol.validate();
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) ||
      !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(optimizer.epsilon > 0.0)) throw ConfigError("adam_epsilon must be positive");
  if (!(optimizer.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (pretrain_steps < 0 || steps < 0) throw ConfigError("step budgets must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (eval_every < 0 || train_limit < 0) throw ConfigError("eval_every and train_limit must be >= 0");
}

namespace {

constexpr const char* kHeader = "lanebev-config";
constexpr int kVersion = 1;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

long long to_integer(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(key, trim(item)));
  return out;
}

struct Field {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

using FieldMap = std::vector<std::pair<std::string, Field>>;

Field real(double& ref, const std::string& key) {
  return {[&ref, key](const std::string& v) { ref = to_double(key, v); }, [&ref] { return fmt(ref); }};
}

Field integer(int& ref, const std::string& key) {
  return {[&ref, key](const std::string& v) { ref = static_cast<int>(to_integer(key, v)); },
          [&ref] { return std::to_string(ref); }};
}

Field text(std::string& ref) {
  return {[&ref](const std::string& v) { ref = v; }, [&ref] { return ref; }};
}

template <class Enum>
Field choice(Enum& ref, const std::string& key, std::vector<std::pair<std::string, Enum>> names) {
  return {[&ref, key, names](const std::string& v) {
            for (const auto& [n, e] : names) {
              if (n == v) {
                ref = e;
                return;
              }
            }
            throw ConfigError("'" + key + "' does not accept '" + v + "'");
          },
          [&ref, names] {
            for (const auto& [n, e] : names) {
              if (e == ref) return n;
            }
            return std::string("?");
          }};
}

void model_fields(ModelConfig& m, FieldMap& f) {
  f.emplace_back("image_height", integer(m.dims.image_height, "image_height"));
  f.emplace_back("image_width", integer(m.dims.image_width, "image_width"));
  f.emplace_back("channels", integer(m.dims.channels, "channels"));
  // One key drives both the head width and the bin spec.
  f.emplace_back("depth_bins", Field{[&m](const std::string& v) {
                                       m.dims.depth_bins = m.depth.bins =
                                           static_cast<int>(to_integer("depth_bins", v));
                                     },
                                     [&m] { return std::to_string(m.dims.depth_bins); }});
  f.emplace_back("embedding", integer(m.dims.embedding, "embedding"));
  f.emplace_back("downsample", integer(m.dims.downsample, "downsample"));
  f.emplace_back("head_channels", integer(m.dims.head_channels, "head_channels"));
  f.emplace_back("depth_min", real(m.depth.d_min, "depth_min"));
  f.emplace_back("depth_max", real(m.depth.d_max, "depth_max"));
  f.emplace_back("depth_spacing",
                 choice(m.depth.mode, "depth_spacing",
                        {{"uniform", DepthBinMode::uniform}, {"log", DepthBinMode::log_spaced}}));
  f.emplace_back("grid_x_min", real(m.grid.x_min, "grid_x_min"));
  f.emplace_back("grid_x_max", real(m.grid.x_max, "grid_x_max"));
  f.emplace_back("grid_y_min", real(m.grid.y_min, "grid_y_min"));
  f.emplace_back("grid_y_max", real(m.grid.y_max, "grid_y_max"));
  f.emplace_back("grid_cols", integer(m.grid.cols, "grid_cols"));
  f.emplace_back("grid_rows", integer(m.grid.rows, "grid_rows"));
  f.emplace_back("fusion", choice(m.fusion, "fusion",
                                  {{"prime", FusionKind::prime}, {"naive", FusionKind::naive}}));
  f.emplace_back("dat_gate", Field{[&m](const std::string& v) { m.dat_gate = to_bool("dat_gate", v); },
                                   [&m] { return std::string(m.dat_gate ? "true" : "false"); }});
}

FieldMap all_fields(TrainConfig& c) {
  FieldMap f;
  f.emplace_back("train_data", text(c.train_data));
  f.emplace_back("val_data", text(c.val_data));
  f.emplace_back("output_dir", text(c.output_dir));
  f.emplace_back("pretrain_checkpoint", text(c.pretrain_checkpoint));
  f.emplace_back("seed", Field{[&c](const std::string& v) {
                                 c.seed = static_cast<std::uint64_t>(to_integer("seed", v));
                               },
                               [&c] { return std::to_string(c.seed); }});
  f.emplace_back("depth_mode", choice(c.depth_mode, "depth_mode",
                                      {{"method1", DepthMode::method1},
                                       {"method2", DepthMode::method2},
                                       {"method3", DepthMode::method3}}));
  model_fields(c.model, f);
  ObjectiveSettings& o = c.objective;
  f.emplace_back("lambda_depth", real(o.weights.depth, "lambda_depth"));
  f.emplace_back("lambda_conf", real(o.weights.confidence, "lambda_conf"));
  f.emplace_back("lambda_inst", real(o.weights.instance, "lambda_inst"));
  f.emplace_back("lambda_offset_x", real(o.weights.offset_x, "lambda_offset_x"));
  f.emplace_back("lambda_offset_z", real(o.weights.offset_z, "lambda_offset_z"));
  f.emplace_back("sigma", real(o.sigma, "sigma"));
  f.emplace_back("offset_loss", choice(o.offset_kind, "offset_loss",
                                       {{"l1", OffsetLossKind::l1}, {"l2", OffsetLossKind::l2}}));
  f.emplace_back("pull_margin", real(o.instance.pull_margin, "pull_margin"));
  f.emplace_back("push_epsilon", real(o.instance.push_epsilon, "push_epsilon"));
  f.emplace_back("cluster_sigma", real(c.cluster.sigma, "cluster_sigma"));
  f.emplace_back("cluster_bandwidth", real(c.cluster.bandwidth, "cluster_bandwidth"));
  f.emplace_back("cluster_min_cells", integer(c.cluster.min_cells, "cluster_min_cells"));
  EvalProtocol& p = c.protocol;
  f.emplace_back("eval_y_samples", Field{[&p](const std::string& v) { p.y_samples = to_list("eval_y_samples", v); },
                                         [&p] {
                                           std::string s;
                                           for (std::size_t i = 0; i < p.y_samples.size(); ++i) {
                                             if (i) s += ", ";
                                             s += fmt(p.y_samples[i]);
                                           }
                                           return s;
                                         }});
  f.emplace_back("eval_near_min", real(p.near_range.first, "eval_near_min"));
  f.emplace_back("eval_near_max", real(p.near_range.second, "eval_near_max"));
  f.emplace_back("eval_far_min", real(p.far_range.first, "eval_far_min"));
  f.emplace_back("eval_far_max", real(p.far_range.second, "eval_far_max"));
  f.emplace_back("match_dist", real(p.match_dist, "match_dist"));
  f.emplace_back("match_frac", real(p.match_frac, "match_frac"));
  OptimizerSettings& opt = c.optimizer;
  f.emplace_back("learning_rate", real(opt.learning_rate, "learning_rate"));
  f.emplace_back("beta1", real(opt.beta1, "beta1"));
  f.emplace_back("beta2", real(opt.beta2, "beta2"));
  f.emplace_back("adam_epsilon", real(opt.epsilon, "adam_epsilon"));
  f.emplace_back("weight_decay", real(opt.weight_decay, "weight_decay"));
  f.emplace_back("pretrain_steps", integer(c.pretrain_steps, "pretrain_steps"));
  f.emplace_back("steps", integer(c.steps, "steps"));
  f.emplace_back("batch_size", integer(c.batch_size, "batch_size"));
  f.emplace_back("eval_every", integer(c.eval_every, "eval_every"));
  f.emplace_back("train_limit", integer(c.train_limit, "train_limit"));
  return f;
}

/// Applies `key = value` lines after the header to `fields`.
void apply_fields(const std::string& source, const FieldMap& fields) {
  std::istringstream in(source);
  std::string line;
  int line_no = 0;
  bool header = false;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (!header) {
      std::istringstream h(line);
      std::string magic;
      int version = 0;
      if (!(h >> magic >> version) || magic != kHeader) {
        throw ConfigError("line " + std::to_string(line_no) + ": expected '" + kHeader + " " +
                          std::to_string(kVersion) + "' header");
      }
      if (version != kVersion) throw ConfigError("unsupported config version " + std::to_string(version));
      header = true;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = std::find_if(fields.begin(), fields.end(),
                                 [&](const auto& kv) { return kv.first == key; });
    if (it == fields.end()) throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    it->second.set(value);
  }
  if (!header) throw ConfigError("missing '" + std::string(kHeader) + "' header");
}

std::string render(const FieldMap& fields) {
  std::string out = std::string(kHeader) + " " + std::to_string(kVersion) + "\n";
  for (const auto& [key, field] : fields) out += key + " = " + field.get() + "\n";
  return out;
}

}  // namespace

TrainConfig parse_config(const std::string& text_in) {
  TrainConfig c;
  apply_fields(text_in, all_fields(c));
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const TrainConfig& config) {
  TrainConfig copy = config;
  return render(all_fields(copy));
}

std::string model_to_text(const ModelConfig& model) {
  ModelConfig copy = model;
  FieldMap f;
  model_fields(copy, f);
  return render(f);
}

ModelConfig model_from_text(const std::string& text_in) {
  ModelConfig m;
  FieldMap f;
  model_fields(m, f);
  apply_fields(text_in, f);
  return m;
}

}  // namespace lanebev

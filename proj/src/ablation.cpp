#include "lanebev/ablation.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "lanebev/errors.hpp"
#include "lanebev/trainer.hpp"

namespace lanebev {

const std::vector<std::string>& known_variants() {
  static const std::vector<std::string> names = {"no_depth", "no_dat",       "full",      "method1",
                                                 "method2",  "method3",      "naive_fusion",
                                                 "fusion_net"};
  return names;
}

void validate_variants(const std::vector<std::string>& names) {
  if (names.empty()) throw ConfigError("variant list is empty");
  std::set<std::string> seen;
  for (const std::string& n : names) {
    const auto& known = known_variants();
    if (std::find(known.begin(), known.end(), n) == known.end()) {
      throw ConfigError("unknown variant '" + n + "'");
    }
    if (!seen.insert(n).second) throw ConfigError("duplicate variant '" + n + "'");
  }
}

std::vector<std::string> parse_variant_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? std::string() : item.substr(b, e - b + 1));
  }
  validate_variants(out);
  return out;
}

TrainConfig variant_config(const TrainConfig& base, const std::string& name) {
  TrainConfig c = base;
  c.depth_mode = DepthMode::method3;
  c.model.fusion = FusionKind::prime;
  c.model.dat_gate = true;
  if (name == "no_depth") {
    c.objective.weights.depth = 0.0;
    c.model.dat_gate = false;
  } else if (name == "no_dat") {
    c.model.dat_gate = false;
  } else if (name == "method1") {
    c.depth_mode = DepthMode::method1;
  } else if (name == "method2") {
    c.depth_mode = DepthMode::method2;
  } else if (name == "naive_fusion") {
    c.model.fusion = FusionKind::naive;
  } else if (name != "full" && name != "method3" && name != "fusion_net") {
    throw ConfigError("unknown variant '" + name + "'");
  }
  return c;
}

std::vector<AblationRow> ablate(const TrainConfig& base, const std::vector<std::string>& variants,
                                const std::vector<Sample>& train_set,
                                const std::vector<Sample>& eval_set, const AblationOptions& options) {
  validate_variants(variants);
  base.validate();
  std::map<std::string, AblationRow> done;  // keyed by effective config text
  std::map<std::string, std::unique_ptr<Network>> pretrained;  // keyed by model config text
  std::vector<AblationRow> rows;
  for (const std::string& name : variants) {
    TrainConfig c = variant_config(base, name);
    TrainConfig key_config = c;
    key_config.output_dir.clear();
    const std::string key = to_text(key_config);
    if (auto it = done.find(key); it != done.end()) {
      AblationRow row = it->second;
      row.name = name;
      rows.push_back(row);
      continue;
    }
    if (options.on_variant) options.on_variant(name);
    const Network* init = nullptr;
    if (c.depth_mode != DepthMode::method3 && c.pretrain_checkpoint.empty()) {
      TrainConfig pre = c;
      pre.depth_mode = DepthMode::method1;
      const std::string pkey = to_text(pre);
      auto& slot = pretrained[pkey];
      if (!slot) slot = std::make_unique<Network>(pretrain_depth(pre, train_set));
      init = slot.get();
    }
    const TrainResult result = train(c, train_set, {}, init);
    AblationRow row{name, evaluate_run(result.net, eval_set, c), count_parameters(c.model),
                    result.record.wall_seconds};
    done.emplace(key, row);
    rows.push_back(row);
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-14s %7s %7s %9s %9s %9s %9s %10s\n", "variant", "F1", "Acc",
                "x_near", "x_far", "z_near", "z_far", "params");
  out += buf;
  for (const AblationRow& r : rows) {
    const MetricsReport& m = r.report;
    std::snprintf(buf, sizeof buf, "%-14s %7.4f %7.4f %9.4f %9.4f %9.4f %9.4f %10zu\n", r.name.c_str(),
                  m.f1, m.accuracy, m.x_err_near, m.x_err_far, m.z_err_near, m.z_err_far, r.parameters);
    out += buf;
  }
  return out;
}

}  // namespace lanebev

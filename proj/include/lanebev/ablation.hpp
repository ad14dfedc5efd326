#pragma once

// Side-by-side comparison of model variants trained under one base config.
//
// Variant names:
//   no_depth      no depth supervision, DAT gate held at 1
//   no_dat        depth supervision, DAT gate held at 1
//   full          depth supervision with DAT (method3)
//   method1..3    the three depth-training regimes
//   naive_fusion  full-height product collapsed by a learned map
//   fusion_net    PFE + DAT fusion (same model as full)

#include <functional>
#include <string>
#include <vector>

#include "lanebev/config.hpp"
#include "lanebev/metrics.hpp"
#include "lanebev/scenegen.hpp"

namespace lanebev {

const std::vector<std::string>& known_variants();

/// Splits a comma-separated list; throws ConfigError on unknown or
/// duplicate names or an empty list.
std::vector<std::string> parse_variant_list(const std::string& csv);
void validate_variants(const std::vector<std::string>& names);

TrainConfig variant_config(const TrainConfig& base, const std::string& name);

struct AblationRow {
  std::string name;
  MetricsReport report;
  std::size_t parameters = 0;
  double wall_seconds = 0.0;
};

struct AblationOptions {
  /// Called when a variant starts training.
  std::function<void(const std::string&)> on_variant;
};

/// Trains every variant on `train_set` and evaluates it on `eval_set`.
/// Variants whose effective configs coincide share one run, and methods 1
/// and 2 share one depth pretraining.
std::vector<AblationRow> ablate(const TrainConfig& base, const std::vector<std::string>& variants,
                                const std::vector<Sample>& train_set,
                                const std::vector<Sample>& eval_set,
                                const AblationOptions& options = {});

std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace lanebev

#pragma once

// Lane-level evaluation: resampling at fixed longitudinal stations, one-to-one
// matching, and aggregate F1 / accuracy / near-far errors.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "lanebev/geometry.hpp"
#include "lanebev/postprocess.hpp"
#include "lanebev/scenegen.hpp"

namespace lanebev {

struct EvalProtocol {
  std::vector<double> y_samples;
  std::pair<double, double> near_range{0.0, 30.0};  ///< [lo, hi)
  std::pair<double, double> far_range{30.0, 70.0};  ///< [lo, hi]
  double match_dist = 1.5;
  double match_frac = 0.75;

  /// Stations every 4 m at 5, 9, ..., 65 (the row centers of the default grid).
  static EvalProtocol desk_default();
  void validate() const;
};

struct ResampledLane {
  std::vector<double> x;
  std::vector<double> z;
  std::vector<bool> visible;
};

/// Linear interpolation along y; exact at the polyline's vertices.
/// Throws DegenerateLane for fewer than two points.
ResampledLane resample(const Polyline& lane, const std::vector<double>& y_samples);

struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  ///< (pred, gt)
  int tp = 0;
  int fp = 0;
  int fn = 0;
};

/// One-to-one assignment over compatible pairs: the largest number of
/// matches, and among those the smallest summed mean distance.
MatchResult match(const std::vector<Polyline>& preds, const std::vector<Polyline>& gts,
                  const EvalProtocol& protocol);

struct MetricsReport {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double accuracy = 0.0;
  double x_err_near = 0.0;
  double x_err_far = 0.0;
  double z_err_near = 0.0;
  double z_err_far = 0.0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
  int gt_lanes = 0;
  int near_points = 0;
  int far_points = 0;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Accumulates matches over samples and produces the aggregate report.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(EvalProtocol protocol);

  void add(const std::vector<Polyline>& preds, const std::vector<Polyline>& gts);
  MetricsReport report() const;

 private:
  EvalProtocol protocol_;
  int tp_ = 0;
  int fp_ = 0;
  int fn_ = 0;
  int gt_ = 0;
  double x_near_ = 0.0;
  double x_far_ = 0.0;
  double z_near_ = 0.0;
  double z_far_ = 0.0;
  int n_near_ = 0;
  int n_far_ = 0;
};

MetricsReport evaluate(const std::vector<Polyline>& preds, const std::vector<Polyline>& gts,
                       const EvalProtocol& protocol);
/// Dataset-level report; the outer vectors are indexed by sample.
MetricsReport evaluate(const std::vector<std::vector<Polyline>>& preds,
                       const std::vector<std::vector<Polyline>>& gts, const EvalProtocol& protocol);

std::vector<Polyline> polylines(const std::vector<LaneInstance>& lanes);

/// Human-readable table of one or more labelled reports.
std::string format_report_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);
/// `key = value` lines, one per field.
std::string format_report_kv(const MetricsReport& report);
void write_report(const MetricsReport& report, const std::filesystem::path& path);

}  // namespace lanebev

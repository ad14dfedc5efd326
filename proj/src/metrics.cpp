#include "lanebev/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "lanebev/errors.hpp"

namespace lanebev {

EvalProtocol EvalProtocol::desk_default() {
  EvalProtocol p;
  for (double y = 5.0; y <= 65.0; y += 4.0) p.y_samples.push_back(y);
  return p;
}

void EvalProtocol::validate() const {
  if (y_samples.empty()) throw ConfigError("eval protocol needs at least one y sample");
  for (std::size_t i = 1; i < y_samples.size(); ++i) {
    if (!(y_samples[i] > y_samples[i - 1])) throw ConfigError("y samples must be strictly increasing");
  }
  if (!(near_range.first < near_range.second) || !(far_range.first < far_range.second) ||
      !(near_range.second <= far_range.first)) {
    throw ConfigError("near and far ranges must be ordered and disjoint");
  }
  if (!(match_dist > 0.0)) throw ConfigError("match_dist must be positive");
  if (!(match_frac > 0.0 && match_frac <= 1.0)) throw ConfigError("match_frac must lie in (0, 1]");
}

ResampledLane resample(const Polyline& lane, const std::vector<double>& y_samples) {
  if (lane.size() < 2) throw DegenerateLane("a lane needs at least two points to resample");
  ResampledLane out;
  out.x.assign(y_samples.size(), 0.0);
  out.z.assign(y_samples.size(), 0.0);
  out.visible.assign(y_samples.size(), false);
  std::size_t seg = 0;
  for (std::size_t k = 0; k < y_samples.size(); ++k) {
    const double y = y_samples[k];
    if (y < lane.front().y || y > lane.back().y) continue;
    while (seg + 2 < lane.size() && y >= lane[seg + 1].y) ++seg;
    const Point3D& a = lane[seg];
    const Point3D& b = lane[seg + 1];
    out.visible[k] = true;
    if (y == a.y) {
      out.x[k] = a.x;
      out.z[k] = a.z;
    } else if (y == b.y) {
      out.x[k] = b.x;
      out.z[k] = b.z;
    } else {
      const double t = (y - a.y) / (b.y - a.y);
      out.x[k] = a.x + t * (b.x - a.x);
      out.z[k] = a.z + t * (b.z - a.z);
    }
  }
  return out;
}

namespace {

struct PairStats {
  bool compatible = false;
  double mean_dist = 0.0;
};

PairStats compare(const ResampledLane& p, const ResampledLane& g, const EvalProtocol& protocol) {
  int common = 0;
  int close = 0;
  double sum = 0.0;
  for (std::size_t k = 0; k < p.x.size(); ++k) {
    if (!p.visible[k] || !g.visible[k]) continue;
    const double d = std::hypot(p.x[k] - g.x[k], p.z[k] - g.z[k]);
    ++common;
    sum += d;
    if (d < protocol.match_dist) ++close;
  }
  PairStats s;
  if (common == 0) return s;
  s.compatible = close >= protocol.match_frac * common;
  s.mean_dist = sum / common;
  return s;
}

std::vector<ResampledLane> resample_all(const std::vector<Polyline>& lanes,
                                        const EvalProtocol& protocol) {
  std::vector<ResampledLane> out;
  out.reserve(lanes.size());
  for (const Polyline& l : lanes) out.push_back(resample(l, protocol.y_samples));
  return out;
}

struct Search {
  const std::vector<std::vector<PairStats>>* stats;  // [gt][pred]
  std::vector<bool> used;
  std::vector<int> current, best;
  int best_count = -1;
  double best_cost = std::numeric_limits<double>::infinity();

  void run(std::size_t g, int count, double cost) {
    const auto& s = *stats;
    if (g == s.size()) {
      if (count > best_count || (count == best_count && cost < best_cost)) {
        best_count = count;
        best_cost = cost;
        best = current;
      }
      return;
    }
    // Bound: even matching every remaining gt cannot beat the best count.
    if (count + static_cast<int>(s.size() - g) < best_count) return;
    for (std::size_t p = 0; p < used.size(); ++p) {
      if (used[p] || !s[g][p].compatible) continue;
      used[p] = true;
      current[g] = static_cast<int>(p);
      run(g + 1, count + 1, cost + s[g][p].mean_dist);
      used[p] = false;
    }
    current[g] = -1;
    run(g + 1, count, cost);
  }
};

MatchResult match_resampled(const std::vector<ResampledLane>& preds,
                            const std::vector<ResampledLane>& gts, const EvalProtocol& protocol) {
  std::vector<std::vector<PairStats>> stats(gts.size(), std::vector<PairStats>(preds.size()));
  for (std::size_t g = 0; g < gts.size(); ++g) {
    for (std::size_t p = 0; p < preds.size(); ++p) stats[g][p] = compare(preds[p], gts[g], protocol);
  }
  Search search;
  search.stats = &stats;
  search.used.assign(preds.size(), false);
  search.current.assign(gts.size(), -1);
  search.best.assign(gts.size(), -1);
  search.run(0, 0, 0.0);

  MatchResult out;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (search.best[g] >= 0) out.pairs.emplace_back(search.best[g], static_cast<int>(g));
  }
  out.tp = static_cast<int>(out.pairs.size());
  out.fp = static_cast<int>(preds.size()) - out.tp;
  out.fn = static_cast<int>(gts.size()) - out.tp;
  return out;
}

}  // namespace

MatchResult match(const std::vector<Polyline>& preds, const std::vector<Polyline>& gts,
                  const EvalProtocol& protocol) {
  return match_resampled(resample_all(preds, protocol), resample_all(gts, protocol), protocol);
}

MetricsAccumulator::MetricsAccumulator(EvalProtocol protocol) : protocol_(std::move(protocol)) {
  protocol_.validate();
}

void MetricsAccumulator::add(const std::vector<Polyline>& preds, const std::vector<Polyline>& gts) {
  const auto rp = resample_all(preds, protocol_);
  const auto rg = resample_all(gts, protocol_);
  const MatchResult m = match_resampled(rp, rg, protocol_);
  tp_ += m.tp;
  fp_ += m.fp;
  fn_ += m.fn;
  gt_ += static_cast<int>(gts.size());
  for (const auto& [p, g] : m.pairs) {
    const ResampledLane& a = rp[static_cast<std::size_t>(p)];
    const ResampledLane& b = rg[static_cast<std::size_t>(g)];
    for (std::size_t k = 0; k < protocol_.y_samples.size(); ++k) {
      if (!a.visible[k] || !b.visible[k]) continue;
      const double y = protocol_.y_samples[k];
      const double dx = std::abs(a.x[k] - b.x[k]);
      const double dz = std::abs(a.z[k] - b.z[k]);
      if (y >= protocol_.near_range.first && y < protocol_.near_range.second) {
        x_near_ += dx;
        z_near_ += dz;
        ++n_near_;
      } else if (y >= protocol_.far_range.first && y <= protocol_.far_range.second) {
        x_far_ += dx;
        z_far_ += dz;
        ++n_far_;
      }
    }
  }
}

MetricsReport MetricsAccumulator::report() const {
  MetricsReport r;
  r.tp = tp_;
  r.fp = fp_;
  r.fn = fn_;
  r.gt_lanes = gt_;
  r.near_points = n_near_;
  r.far_points = n_far_;
  r.precision = tp_ + fp_ > 0 ? static_cast<double>(tp_) / (tp_ + fp_) : 0.0;
  r.recall = tp_ + fn_ > 0 ? static_cast<double>(tp_) / (tp_ + fn_) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  r.accuracy = gt_ > 0 ? static_cast<double>(tp_) / gt_ : 0.0;
  if (n_near_ > 0) {
    r.x_err_near = x_near_ / n_near_;
    r.z_err_near = z_near_ / n_near_;
  }
  if (n_far_ > 0) {
    r.x_err_far = x_far_ / n_far_;
    r.z_err_far = z_far_ / n_far_;
  }
  return r;
}

MetricsReport evaluate(const std::vector<Polyline>& preds, const std::vector<Polyline>& gts,
                       const EvalProtocol& protocol) {
  MetricsAccumulator acc(protocol);
  acc.add(preds, gts);
  return acc.report();
}

MetricsReport evaluate(const std::vector<std::vector<Polyline>>& preds,
                       const std::vector<std::vector<Polyline>>& gts, const EvalProtocol& protocol) {
  if (preds.size() != gts.size()) throw InvalidArgument("prediction and ground-truth sample counts differ");
  MetricsAccumulator acc(protocol);
  for (std::size_t i = 0; i < preds.size(); ++i) acc.add(preds[i], gts[i]);
  return acc.report();
}

std::vector<Polyline> polylines(const std::vector<LaneInstance>& lanes) {
  std::vector<Polyline> out;
  out.reserve(lanes.size());
  for (const LaneInstance& l : lanes) out.push_back(l.points);
  return out;
}

std::string format_report_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-24s %7s %7s %7s %7s %9s %9s %9s %9s\n", "run", "F1", "P", "R",
                "Acc", "x_near", "x_far", "z_near", "z_far");
  out += buf;
  for (const auto& [name, r] : rows) {
    std::snprintf(buf, sizeof buf, "%-24s %7.4f %7.4f %7.4f %7.4f %9.4f %9.4f %9.4f %9.4f\n",
                  name.c_str(), r.f1, r.precision, r.recall, r.accuracy, r.x_err_near, r.x_err_far,
                  r.z_err_near, r.z_err_far);
    out += buf;
  }
  return out;
}

std::string format_report_kv(const MetricsReport& r) {
  std::string out;
  char buf[96];
  auto real = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%s = %.17g\n", key, v);
    out += buf;
  };
  auto integer = [&](const char* key, int v) {
    std::snprintf(buf, sizeof buf, "%s = %d\n", key, v);
    out += buf;
  };
  real("f1", r.f1);
  real("precision", r.precision);
  real("recall", r.recall);
  real("accuracy", r.accuracy);
  real("x_err_near", r.x_err_near);
  real("x_err_far", r.x_err_far);
  real("z_err_near", r.z_err_near);
  real("z_err_far", r.z_err_far);
  integer("tp", r.tp);
  integer("fp", r.fp);
  integer("fn", r.fn);
  integer("gt_lanes", r.gt_lanes);
  integer("near_points", r.near_points);
  integer("far_points", r.far_points);
  return out;
}

void write_report(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_report_kv(report);
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace lanebev

#include "lanebev/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "lanebev/errors.hpp"
#include "lanebev/losses.hpp"

namespace lanebev {

void ClusterParams::validate() const {
  if (!(sigma > 0.0 && sigma < 1.0)) throw ConfigError("cluster sigma must lie in (0, 1)");
  if (!(bandwidth > 0.0)) throw ConfigError("cluster bandwidth must be positive");
  if (min_cells < 2) throw ConfigError("min_cells must be at least 2");
}

ClusterAssignment cluster(const LanePrediction& pred, const ClusterParams& params) {
  const Tensor& conf = pred.confidence;
  const Tensor& emb = pred.embedding;
  const int rows = conf.dim(0);
  const int cols = conf.dim(1);
  require_shape(emb, {emb.dim(0), rows, cols}, "embedding");
  const int e_n = emb.dim(0);
  const std::size_t plane = static_cast<std::size_t>(rows) * cols;

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < plane; ++i) {
    if (conf[i] > params.sigma) order.push_back(i);
  }
  // Index order is (row, col) lexicographic, so a stable sort gives the tie-break.
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return conf[a] > conf[b]; });

  std::vector<std::vector<double>> sums;
  std::vector<int> sizes;
  std::vector<int> raw(plane, -1);
  std::vector<double> e(static_cast<std::size_t>(e_n));
  for (std::size_t cell : order) {
    for (int k = 0; k < e_n; ++k) e[static_cast<std::size_t>(k)] = emb[k * plane + cell];
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sums.size(); ++c) {
      double d2 = 0.0;
      for (int k = 0; k < e_n; ++k) {
        const double diff = e[static_cast<std::size_t>(k)] - sums[c][static_cast<std::size_t>(k)] / sizes[c];
        d2 += diff * diff;
      }
      const double d = std::sqrt(d2);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    if (best < 0 || best_d > params.bandwidth) {
      sums.push_back(e);
      sizes.push_back(1);
      raw[cell] = static_cast<int>(sums.size()) - 1;
    } else {
      for (int k = 0; k < e_n; ++k) sums[best][static_cast<std::size_t>(k)] += e[static_cast<std::size_t>(k)];
      ++sizes[best];
      raw[cell] = best;
    }
  }

  // Drop small clusters and renumber the survivors in creation order.
  std::vector<int> remap(sizes.size(), -1);
  ClusterAssignment out;
  out.rows = rows;
  out.cols = cols;
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    if (sizes[c] >= params.min_cells) remap[c] = out.clusters++;
  }
  out.label.assign(plane, -1);
  for (std::size_t i = 0; i < plane; ++i) {
    if (raw[i] >= 0) out.label[i] = remap[static_cast<std::size_t>(raw[i])];
  }
  return out;
}

std::vector<LaneInstance> reconstruct(const ClusterAssignment& assignment,
                                      const LanePrediction& pred, const BEVGridSpec& grid,
                                      int min_cells) {
  if (assignment.rows != grid.rows || assignment.cols != grid.cols) {
    throw ShapeMismatch("cluster assignment does not match the grid");
  }
  const double cw = grid.cell_width();
  std::vector<LaneInstance> out;
  for (int c = 0; c < assignment.clusters; ++c) {
    LaneInstance lane;
    double score = 0.0;
    int members = 0;
    for (int r = 0; r < grid.rows; ++r) {
      int best = -1;
      for (int col = 0; col < grid.cols; ++col) {
        if (assignment.at(r, col) != c) continue;
        score += pred.confidence.at(r, col);
        ++members;
        if (best < 0 || pred.confidence.at(r, col) > pred.confidence.at(r, best)) best = col;
      }
      if (best < 0) continue;
      lane.points.push_back(Point3D{grid.x_min + (best + pred.x_offset.at(r, best)) * cw,
                                    grid.row_center_y(r), pred.z_offset.at(r, best)});
    }
    if (static_cast<int>(lane.points.size()) < min_cells) continue;
    lane.score = score / members;
    out.push_back(std::move(lane));
  }
  return out;
}

std::vector<LaneInstance> extract_lanes(const LanePrediction& pred, const BEVGridSpec& grid,
                                        const ClusterParams& params) {
  return reconstruct(cluster(pred, params), pred, grid, params.min_cells);
}

LanePrediction prediction_from_target(const LaneTarget& target, int embedding_dims,
                                      double magnitude) {
  if (embedding_dims < target.lane_count) {
    throw InvalidArgument("embedding too small for a one-hot instance code");
  }
  LanePrediction p;
  p.confidence = target.confidence;
  p.x_offset = target.x_offset;
  p.z_offset = target.z_offset;
  p.embedding = Tensor({embedding_dims, target.rows, target.cols});
  for (int r = 0; r < target.rows; ++r) {
    for (int c = 0; c < target.cols; ++c) {
      const int id = target.instance[static_cast<std::size_t>(r) * target.cols + c];
      if (id > 0) p.embedding.at(id - 1, r, c) = magnitude;
    }
  }
  return p;
}

void write_lane_dump(const std::vector<std::vector<LaneInstance>>& per_sample,
                     const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "lanebev-lanes 1\n";
  for (std::size_t s = 0; s < per_sample.size(); ++s) {
    out << "sample " << s << ' ' << per_sample[s].size() << '\n';
    for (const LaneInstance& lane : per_sample[s]) {
      out << "lane " << lane.points.size() << ' ' << lane.score << '\n';
      for (const Point3D& p : lane.points) out << p.x << ' ' << p.y << ' ' << p.z << '\n';
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::vector<LaneInstance>> read_lane_dump(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "lanebev-lanes") {
    throw FormatError(path.string() + " is not a lane dump");
  }
  if (version != 1) throw FormatError("unsupported lane dump version " + std::to_string(version));
  std::vector<std::vector<LaneInstance>> out;
  std::string tag;
  while (in >> tag) {
    std::size_t index = 0;
    std::size_t lanes = 0;
    if (tag != "sample" || !(in >> index >> lanes) || index != out.size()) {
      throw FormatError("malformed sample record in " + path.string());
    }
    std::vector<LaneInstance>& sample = out.emplace_back();
    for (std::size_t l = 0; l < lanes; ++l) {
      std::size_t n = 0;
      LaneInstance lane;
      if (!(in >> tag >> n >> lane.score) || tag != "lane") {
        throw FormatError("malformed lane record in " + path.string());
      }
      lane.points.resize(n);
      for (Point3D& p : lane.points) {
        if (!(in >> p.x >> p.y >> p.z)) throw FormatError("truncated lane in " + path.string());
      }
      sample.push_back(std::move(lane));
    }
  }
  return out;
}

}  // namespace lanebev

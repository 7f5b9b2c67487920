#include "iaseg/instance_cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "iaseg/errors.hpp"

namespace iaseg {

double RadiusTable::at(std::uint16_t class_id) const {
  const auto it = radii.find(class_id);
  if (it == radii.end()) throw ArgumentError("no clustering radius for class " + std::to_string(class_id));
  return it->second;
}

void RadiusTable::validate() const {
  for (const auto& [c, r] : radii) {
    if (!(r > 0.0)) throw ArgumentError("radius for class " + std::to_string(c) + " must be positive");
  }
}

RadiusTable RadiusTable::defaults() { return RadiusTable{{{1, 1.0}, {2, 1.0}, {3, 0.5}, {4, 0.5}}}; }

std::vector<SpatialHash::Position> positions_of(const PointCloud& cloud) {
  std::vector<SpatialHash::Position> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud.points) out.push_back({p.x, p.y, p.z});
  return out;
}

std::vector<double> compute_lambda(const std::vector<SpatialHash::Position>& points,
                                   const Matrix& descriptors, std::span<const int> semantic_labels,
                                   const RadiusTable& radii) {
  const std::size_t n = points.size();
  if (static_cast<std::size_t>(descriptors.rows()) != n || semantic_labels.size() != n) {
    throw ArgumentError("compute_lambda: points, descriptors and labels must have equal length");
  }
  std::vector<double> lambda(n, kLambdaMin);
  std::map<int, std::vector<std::uint32_t>> by_class;
  for (std::uint32_t i = 0; i < n; ++i) by_class[semantic_labels[i]].push_back(i);

  const Eigen::Index d = descriptors.cols();
  RowVector mean(d);
  std::vector<std::uint32_t> hits;
  for (const auto& [cls, members] : by_class) {
    if (cls < 0 || cls > 0xFFFF || !radii.contains(static_cast<std::uint16_t>(cls))) continue;
    const double r = radii.at(static_cast<std::uint16_t>(cls));
    std::vector<SpatialHash::Position> local;
    local.reserve(members.size());
    for (std::uint32_t i : members) local.push_back(points[i]);
    const SpatialHash hash(local, r);
    for (std::size_t a = 0; a < members.size(); ++a) {
      hash.query(local[a], r, hits);
      mean.setZero();
      for (std::uint32_t b : hits) mean += descriptors.row(members[b]);
      mean /= static_cast<double>(hits.size());
      double var_sum = 0.0;
      for (std::uint32_t b : hits) var_sum += (descriptors.row(members[b]) - mean).squaredNorm();
      // mean over dimensions of the per-dimension population variance
      const double sigma = d > 0 ? var_sum / (static_cast<double>(hits.size()) * static_cast<double>(d)) : 0.0;
      const double lam = sigma > 0.0 ? 1.0 / sigma : kLambdaMax;
      lambda[members[a]] = std::clamp(lam, kLambdaMin, kLambdaMax);
    }
  }
  return lambda;
}

MeanShiftResult mean_shift(const Matrix& features, double bandwidth) {
  if (!(bandwidth > 0.0)) throw ArgumentError("mean_shift: bandwidth must be positive");
  const Eigen::Index n = features.rows();
  const Eigen::Index dims = features.cols();
  if (n < 1) throw ArgumentError("mean_shift: at least one row is required");

  const Eigen::Index hashed = std::min<Eigen::Index>(3, dims);
  auto hash_pos = [&](const RowVector& x) {
    SpatialHash::Position p{0.0, 0.0, 0.0};
    for (Eigen::Index a = 0; a < hashed; ++a) p[static_cast<std::size_t>(a)] = x(a);
    return p;
  };
  std::vector<SpatialHash::Position> keys;
  keys.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) keys.push_back(hash_pos(features.row(i)));
  const SpatialHash hash(keys, bandwidth);

  const double h2 = bandwidth * bandwidth;
  const double tol = 1e-4 * bandwidth;
  constexpr int kMaxIterations = 100;
  Matrix converged(n, dims);
  std::vector<std::uint32_t> cand;
  RowVector x(dims), acc(dims);
  for (Eigen::Index i = 0; i < n; ++i) {
    x = features.row(i);
    for (int it = 0; it < kMaxIterations; ++it) {
      hash.candidates(hash_pos(x), bandwidth, cand);
      acc.setZero();
      std::size_t count = 0;
      for (std::uint32_t j : cand) {
        const double* row = features.data() + static_cast<Eigen::Index>(j) * dims;
        double d2 = 0.0;
        Eigen::Index c = 0;
        for (; c < hashed; ++c) d2 += (row[c] - x(c)) * (row[c] - x(c));
        if (d2 > h2) continue;  // the positional block alone is already too far
        for (; c < dims; ++c) d2 += (row[c] - x(c)) * (row[c] - x(c));
        if (d2 <= h2) {
          acc += features.row(j);
          ++count;
        }
      }
      // The window is never empty: the previous mean is within the
      // bandwidth of at least one contributing row.
      acc /= static_cast<double>(count);
      const double shift = (acc - x).norm();
      x = acc;
      if (shift < tol) break;
    }
    converged.row(i) = x;
  }

  const double merge2 = 0.25 * h2;
  std::vector<Eigen::Index> survivors;
  for (Eigen::Index i = 0; i < n; ++i) {
    bool merged = false;
    for (Eigen::Index s : survivors) {
      if ((converged.row(i) - converged.row(s)).squaredNorm() <= merge2) {
        merged = true;
        break;
      }
    }
    if (!merged) survivors.push_back(i);
  }

  std::vector<int> raw(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (std::size_t k = 0; k < survivors.size(); ++k) {
      const double dist = (converged.row(i) - converged.row(survivors[k])).squaredNorm();
      if (dist < best) {
        best = dist;
        arg = static_cast<int>(k);
      }
    }
    raw[static_cast<std::size_t>(i)] = arg;
  }

  // Renumber by first occurrence; drop survivors nobody chose.
  std::vector<int> remap(survivors.size(), -1);
  MeanShiftResult result;
  result.assignment.resize(static_cast<std::size_t>(n));
  std::vector<Eigen::Index> used;
  for (Eigen::Index i = 0; i < n; ++i) {
    int& m = remap[static_cast<std::size_t>(raw[static_cast<std::size_t>(i)])];
    if (m < 0) {
      m = static_cast<int>(used.size());
      used.push_back(survivors[static_cast<std::size_t>(raw[static_cast<std::size_t>(i)])]);
    }
    result.assignment[static_cast<std::size_t>(i)] = m;
  }
  result.modes.resize(static_cast<Eigen::Index>(used.size()), dims);
  for (std::size_t k = 0; k < used.size(); ++k) result.modes.row(static_cast<Eigen::Index>(k)) = converged.row(used[k]);
  return result;
}

bool operator==(const Instance& a, const Instance& b) {
  return a.class_id == b.class_id && a.point_indices == b.point_indices && a.voxel_indices == b.voxel_indices;
}

bool InstanceSet::operator==(const InstanceSet& other) const {
  return instances == other.instances && assignment == other.assignment;
}

Matrix cluster_features(const std::vector<SpatialHash::Position>& positions, const Matrix& descriptors,
                        std::span<const double> lambda, double radius) {
  const auto n = static_cast<Eigen::Index>(positions.size());
  if (descriptors.rows() != n || static_cast<Eigen::Index>(lambda.size()) != n) {
    throw ArgumentError("cluster_features: length mismatch");
  }
  double lambda_top = 0.0;
  for (double l : lambda) lambda_top = std::max(lambda_top, l);
  Matrix f(n, 3 + descriptors.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = positions[static_cast<std::size_t>(i)];
    f(i, 0) = p[0];
    f(i, 1) = p[1];
    f(i, 2) = p[2];
    const double norm = descriptors.row(i).norm();
    const double weight = (norm > 0.0 && lambda_top > 0.0)
                              ? radius * (lambda[static_cast<std::size_t>(i)] / lambda_top) / norm
                              : 0.0;
    f.row(i).tail(descriptors.cols()) = weight * descriptors.row(i);
  }
  return f;
}

InstanceSet cluster_instances(const LabeledScene& scene, const Matrix& point_descriptors,
                              const ClusterConfig& config, std::span<const std::uint32_t> point_to_voxel) {
  const std::size_t n = scene.size();
  if (static_cast<std::size_t>(point_descriptors.rows()) != n) {
    throw ArgumentError("cluster_instances: one descriptor row per point is required");
  }
  if (!point_to_voxel.empty() && point_to_voxel.size() != n) {
    throw ArgumentError("cluster_instances: point_to_voxel length differs from the scene");
  }
  InstanceSet out;
  out.assignment.assign(n, -1);
  std::vector<std::uint16_t> classes = config.instance_classes;
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

  for (std::uint16_t cls : classes) {
    std::vector<std::uint32_t> members;
    for (std::uint32_t i = 0; i < n; ++i) {
      if (scene.labels.labels[i].semantic_id == cls) members.push_back(i);
    }
    if (members.empty()) continue;
    const double r = config.radii.at(cls);
    std::vector<SpatialHash::Position> pos;
    pos.reserve(members.size());
    Matrix desc(static_cast<Eigen::Index>(members.size()), point_descriptors.cols());
    for (std::size_t k = 0; k < members.size(); ++k) {
      const auto& p = scene.cloud.points[members[k]];
      pos.push_back({p.x, p.y, p.z});
      desc.row(static_cast<Eigen::Index>(k)) = point_descriptors.row(members[k]);
    }
    const std::vector<int> same(members.size(), cls);
    const auto lambda = compute_lambda(pos, desc, same, config.radii);
    const auto ms = mean_shift(cluster_features(pos, desc, lambda, r), r);

    std::vector<std::vector<std::uint32_t>> groups(ms.num_clusters());
    for (std::size_t k = 0; k < members.size(); ++k) {
      groups[static_cast<std::size_t>(ms.assignment[k])].push_back(members[k]);
    }
    for (auto& g : groups) {
      if (static_cast<int>(g.size()) < config.min_points) continue;
      Instance inst;
      inst.class_id = cls;
      inst.point_indices = std::move(g);
      if (!point_to_voxel.empty()) {
        for (std::uint32_t i : inst.point_indices) inst.voxel_indices.push_back(point_to_voxel[i]);
        std::sort(inst.voxel_indices.begin(), inst.voxel_indices.end());
        inst.voxel_indices.erase(std::unique(inst.voxel_indices.begin(), inst.voxel_indices.end()),
                                 inst.voxel_indices.end());
      }
      const int id = static_cast<int>(out.instances.size());
      for (std::uint32_t i : inst.point_indices) out.assignment[i] = id;
      out.instances.push_back(std::move(inst));
    }
  }
  return out;
}

}  // namespace iaseg

#pragma once

// Semantic-guided instance clustering: per ground-truth class, mean-shift
// over point positions concatenated with confidence-weighted descriptors.

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "iaseg/matrix.hpp"
#include "iaseg/scene_io.hpp"
#include "iaseg/spatial_hash.hpp"

namespace iaseg {

// Per-class neighborhood radius r_p in meters. Also the masking radius used by
// the reconstruction head.
struct RadiusTable {
  std::map<std::uint16_t, double> radii;

  bool contains(std::uint16_t class_id) const { return radii.count(class_id) != 0; }
  double at(std::uint16_t class_id) const;
  void validate() const;

  // vehicle-like (car, truck) 1.0 m; pedestrian and pole 0.5 m.
  static RadiusTable defaults();
};

inline constexpr double kLambdaMin = 1e-3;
inline constexpr double kLambdaMax = 1e3;

/// lambda_p = 1 / sigma_p clamped to [kLambdaMin, kLambdaMax], where sigma_p is
/// the mean per-dimension population variance of the descriptors of same-class
/// points within r_p of p (p included). Points whose class has no radius get
/// kLambdaMin.
std::vector<double> compute_lambda(const std::vector<SpatialHash::Position>& points,
                                   const Matrix& descriptors, std::span<const int> semantic_labels,
                                   const RadiusTable& radii);

struct MeanShiftResult {
  std::vector<int> assignment;  // cluster id per row, numbered by first occurrence
  Matrix modes;                 // one row per cluster
  std::size_t num_clusters() const { return static_cast<std::size_t>(modes.rows()); }
};

/// Flat-kernel mean-shift seeded from every row. Each seed moves to the mean
/// of the rows within `bandwidth` until the shift is below 1e-4 * bandwidth
/// or 100 iterations; converged modes within bandwidth / 2 of an earlier
/// surviving mode are merged into it, and each row is assigned the surviving
/// mode nearest to its own converged mode. The first min(3, cols) columns
/// index a spatial hash; they must be the positional block.
MeanShiftResult mean_shift(const Matrix& features, double bandwidth);

struct Instance {
  std::uint16_t class_id = 0;
  std::vector<std::uint32_t> point_indices;  // ascending
  std::vector<std::uint32_t> voxel_indices;  // ascending, unique; empty without a grid
};

struct InstanceSet {
  std::vector<Instance> instances;
  std::vector<int> assignment;  // per point: instance index, -1 when unassigned

  std::size_t size() const { return instances.size(); }
  bool operator==(const InstanceSet& other) const;
};

bool operator==(const Instance& a, const Instance& b);

struct ClusterConfig {
  RadiusTable radii = RadiusTable::defaults();
  std::vector<std::uint16_t> instance_classes{1, 2, 3, 4};
  int min_points = 5;
};

/// Cluster feature rows for one class: position followed by
/// r * (lambda_p / max lambda) * d_p / |d_p|.
Matrix cluster_features(const std::vector<SpatialHash::Position>& positions, const Matrix& descriptors,
                        std::span<const double> lambda, double radius);

/// Clusters every instance class present in `scene`. `point_descriptors` has
/// one row per point; `point_to_voxel` (optional) fills Instance::voxel_indices.
InstanceSet cluster_instances(const LabeledScene& scene, const Matrix& point_descriptors,
                              const ClusterConfig& config,
                              std::span<const std::uint32_t> point_to_voxel = {});

std::vector<SpatialHash::Position> positions_of(const PointCloud& cloud);

}  // namespace iaseg

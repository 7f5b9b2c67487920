#include "iaseg/voxel_grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "iaseg/errors.hpp"

namespace iaseg {

std::vector<SpatialHash::Position> VoxelGrid::centers() const {
  std::vector<SpatialHash::Position> out;
  out.reserve(cells.size());
  for (const auto& c : cells) out.push_back(c.center);
  return out;
}

std::array<double, 3> default_origin(const PointCloud& cloud, double voxel_size) {
  if (!(voxel_size > 0.0)) throw ArgumentError("voxel_size must be positive");
  if (cloud.empty()) return {0.0, 0.0, 0.0};
  std::array<double, 3> lo{std::numeric_limits<double>::infinity(),
                           std::numeric_limits<double>::infinity(),
                           std::numeric_limits<double>::infinity()};
  for (const auto& p : cloud.points) {
    lo[0] = std::min(lo[0], static_cast<double>(p.x));
    lo[1] = std::min(lo[1], static_cast<double>(p.y));
    lo[2] = std::min(lo[2], static_cast<double>(p.z));
  }
  for (double& v : lo) v = std::floor(v / voxel_size) * voxel_size;
  return lo;
}

VoxelGrid voxelize(const PointCloud& cloud, double voxel_size) {
  return voxelize(cloud, voxel_size, default_origin(cloud, voxel_size));
}

VoxelGrid voxelize(const PointCloud& cloud, double voxel_size, const std::array<double, 3>& origin) {
  if (!(voxel_size > 0.0)) throw ArgumentError("voxel_size must be positive");
  VoxelGrid grid;
  grid.voxel_size = voxel_size;
  grid.origin = origin;
  const std::size_t n = cloud.size();
  std::vector<VoxelKey> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = cloud.points[i];
    const double c[3] = {p.x, p.y, p.z};
    if (!std::isfinite(c[0]) || !std::isfinite(c[1]) || !std::isfinite(c[2])) {
      throw ArgumentError("voxelize: non-finite point " + std::to_string(i));
    }
    std::int32_t k[3];
    for (int a = 0; a < 3; ++a) {
      const double q = std::floor((c[a] - origin[a]) / voxel_size);
      if (q < std::numeric_limits<std::int32_t>::min() || q > std::numeric_limits<std::int32_t>::max()) {
        throw ArgumentError("voxelize: voxel index overflow");
      }
      k[a] = static_cast<std::int32_t>(q);
    }
    keys[i] = {k[0], k[1], k[2]};
  }
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return keys[a] != keys[b] ? keys[a] < keys[b] : a < b;
  });
  grid.point_to_voxel.assign(n, 0);
  for (std::size_t pos = 0; pos < n; ++pos) {
    const std::uint32_t i = order[pos];
    if (grid.cells.empty() || grid.cells.back().key != keys[i]) {
      VoxelCell cell;
      cell.key = keys[i];
      cell.center = {origin[0] + (keys[i].x + 0.5) * voxel_size,
                     origin[1] + (keys[i].y + 0.5) * voxel_size,
                     origin[2] + (keys[i].z + 0.5) * voxel_size};
      grid.cells.push_back(std::move(cell));
    }
    grid.cells.back().point_indices.push_back(i);
    grid.point_to_voxel[i] = static_cast<std::uint32_t>(grid.cells.size() - 1);
  }
  return grid;
}

Matrix initial_features(const VoxelGrid& grid, const PointCloud& cloud) {
  if (grid.point_to_voxel.size() != cloud.size()) {
    throw ArgumentError("initial_features: grid was not built from this cloud");
  }
  double min_z = std::numeric_limits<double>::infinity();
  for (const auto& p : cloud.points) min_z = std::min(min_z, static_cast<double>(p.z));
  Matrix f0 = Matrix::Zero(static_cast<Eigen::Index>(grid.size()), kInitialFeatureDim);
  for (std::size_t v = 0; v < grid.size(); ++v) {
    const auto& cell = grid.cells[v];
    double sx = 0.0, sy = 0.0, sz = 0.0;
    for (std::uint32_t i : cell.point_indices) {
      sx += cloud.points[i].x;
      sy += cloud.points[i].y;
      sz += cloud.points[i].z;
    }
    const double cnt = static_cast<double>(cell.point_indices.size());
    const auto r = static_cast<Eigen::Index>(v);
    f0(r, 0) = sx / cnt - cell.center[0];
    f0(r, 1) = sy / cnt - cell.center[1];
    f0(r, 2) = sz / cnt - cell.center[2];
    f0(r, 3) = std::log1p(cnt);
    f0(r, 4) = sz / cnt - min_z;
  }
  return f0;
}

Matrix interpolate_to_points(const VoxelGrid& grid, const Matrix& per_voxel) {
  if (static_cast<std::size_t>(per_voxel.rows()) != grid.size()) {
    throw ArgumentError("interpolate_to_points: expected " + std::to_string(grid.size()) +
                        " rows, got " + std::to_string(per_voxel.rows()));
  }
  Matrix out(static_cast<Eigen::Index>(grid.point_to_voxel.size()), per_voxel.cols());
  for (std::size_t i = 0; i < grid.point_to_voxel.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = per_voxel.row(grid.point_to_voxel[i]);
  }
  return out;
}

std::vector<int> voxel_majority_labels(const VoxelGrid& grid, std::span<const int> point_labels,
                                       int num_classes) {
  if (point_labels.size() != grid.point_to_voxel.size()) {
    throw ArgumentError("voxel_majority_labels: label count does not match the grid");
  }
  std::vector<int> out(grid.size(), 0);
  std::vector<int> votes(static_cast<std::size_t>(num_classes));
  for (std::size_t v = 0; v < grid.size(); ++v) {
    std::fill(votes.begin(), votes.end(), 0);
    for (std::uint32_t i : grid.cells[v].point_indices) {
      const int l = point_labels[i];
      if (l < 0 || l >= num_classes) throw ArgumentError("label outside the class table");
      ++votes[static_cast<std::size_t>(l)];
    }
    out[v] = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  }
  return out;
}

}  // namespace iaseg

#pragma once

#include <array>
#include <compare>
#include <span>
#include <cstdint>
#include <vector>

#include "iaseg/matrix.hpp"
#include "iaseg/scene_io.hpp"
#include "iaseg/spatial_hash.hpp"

namespace iaseg {

struct VoxelKey {
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int32_t z = 0;

  auto operator<=>(const VoxelKey&) const = default;
};

struct VoxelCell {
  VoxelKey key;
  std::array<double, 3> center{};
  std::vector<std::uint32_t> point_indices;  // ascending
};

// Sparse occupancy grid. Cells are sorted by key and every source point
// belongs to exactly one cell.
struct VoxelGrid {
  double voxel_size = 0.0;
  std::array<double, 3> origin{};
  std::vector<VoxelCell> cells;
  std::vector<std::uint32_t> point_to_voxel;

  std::size_t size() const { return cells.size(); }
  std::vector<SpatialHash::Position> centers() const;
};

inline constexpr int kInitialFeatureDim = 5;

// Origin = per-axis floor of the minimum coordinate, snapped to a voxel boundary.
std::array<double, 3> default_origin(const PointCloud& cloud, double voxel_size);

VoxelGrid voxelize(const PointCloud& cloud, double voxel_size);
VoxelGrid voxelize(const PointCloud& cloud, double voxel_size, const std::array<double, 3>& origin);

/// Per-voxel F0 rows: mean offset from the cell center (3), ln(1 + count),
/// mean height above the cloud's minimum z.
Matrix initial_features(const VoxelGrid& grid, const PointCloud& cloud);

/// Own-voxel assignment: row i of the result is per_voxel.row(point_to_voxel[i]).
Matrix interpolate_to_points(const VoxelGrid& grid, const Matrix& per_voxel);

/// Majority label of each cell's member points, ties to the lowest class id.
std::vector<int> voxel_majority_labels(const VoxelGrid& grid, std::span<const int> point_labels,
                                       int num_classes);

}  // namespace iaseg

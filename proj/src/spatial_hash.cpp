#include "iaseg/spatial_hash.hpp"

#include <algorithm>
#include <cmath>

#include "iaseg/errors.hpp"

namespace iaseg {

SpatialHash::SpatialHash(const std::vector<Position>& positions, double cell_size)
    : positions_(positions), cell_size_(cell_size) {
  if (!(cell_size > 0.0)) throw ArgumentError("SpatialHash: cell size must be positive");
  cells_.reserve(positions.size());
  for (std::uint32_t i = 0; i < positions.size(); ++i) {
    cells_[key_of(positions[i])].push_back(i);
  }
}

SpatialHash::Key SpatialHash::key_of(const Position& p) const {
  return {static_cast<std::int64_t>(std::floor(p[0] / cell_size_)),
          static_cast<std::int64_t>(std::floor(p[1] / cell_size_)),
          static_cast<std::int64_t>(std::floor(p[2] / cell_size_))};
}

void SpatialHash::candidates(const Position& q, double radius, std::vector<std::uint32_t>& out) const {
  out.clear();
  const Key c = key_of(q);
  const auto reach = static_cast<std::int64_t>(std::ceil(radius / cell_size_));
  for (std::int64_t dx = -reach; dx <= reach; ++dx) {
    for (std::int64_t dy = -reach; dy <= reach; ++dy) {
      for (std::int64_t dz = -reach; dz <= reach; ++dz) {
        const auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
        if (it == cells_.end()) continue;
        out.insert(out.end(), it->second.begin(), it->second.end());
      }
    }
  }
}

void SpatialHash::query(const Position& q, double radius, std::vector<std::uint32_t>& out) const {
  std::vector<std::uint32_t> cand;
  candidates(q, radius, cand);
  out.clear();
  const double r2 = radius * radius;
  for (std::uint32_t j : cand) {
    const auto& p = positions_[j];
    const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
    if (dx * dx + dy * dy + dz * dz <= r2) out.push_back(j);
  }
  std::sort(out.begin(), out.end());
}

NeighborLists radius_neighbors(const std::vector<SpatialHash::Position>& positions, double radius) {
  NeighborLists lists;
  lists.offsets.reserve(positions.size() + 1);
  lists.offsets.push_back(0);
  if (positions.empty()) return lists;
  const SpatialHash hash(positions, radius);
  std::vector<std::uint32_t> hits;
  for (const auto& p : positions) {
    hash.query(p, radius, hits);
    lists.indices.insert(lists.indices.end(), hits.begin(), hits.end());
    lists.offsets.push_back(static_cast<std::uint32_t>(lists.indices.size()));
  }
  return lists;
}

}  // namespace iaseg

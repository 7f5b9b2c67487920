#pragma once

#include <array>
#include <cstdint>
#include <unordered_map>
#include <vector>

namespace iaseg {

// Uniform grid over 3-D positions for fixed-radius queries. Query results
// are returned in ascending index order.
class SpatialHash {
 public:
  using Position = std::array<double, 3>;

  SpatialHash(const std::vector<Position>& positions, double cell_size);

  // Indices j with |positions[j] - q| <= radius.
  void query(const Position& q, double radius, std::vector<std::uint32_t>& out) const;

  // Indices whose cell lies in the (2r+1)^3 block around q's cell, where
  // r = ceil(radius / cell_size). Superset of query(q, radius), unsorted.
  void candidates(const Position& q, double radius, std::vector<std::uint32_t>& out) const;

 private:
  struct Key {
    std::int64_t x, y, z;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ULL;
      h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4FULL + (h << 6) + (h >> 2);
      h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ULL + (h << 6) + (h >> 2);
      return static_cast<std::size_t>(h);
    }
  };

  Key key_of(const Position& p) const;

  const std::vector<Position>& positions_;
  double cell_size_;
  std::unordered_map<Key, std::vector<std::uint32_t>, KeyHash> cells_;
};

// Compressed neighbor lists: neighbors of i are indices[offsets[i] .. offsets[i+1]).
struct NeighborLists {
  std::vector<std::uint32_t> offsets;
  std::vector<std::uint32_t> indices;

  std::size_t size() const { return offsets.empty() ? 0 : offsets.size() - 1; }
};

// All-pairs radius neighborhoods (each list includes the point itself, sorted).
NeighborLists radius_neighbors(const std::vector<SpatialHash::Position>& positions, double radius);

}  // namespace iaseg

#pragma once

// Desk-scale descriptor network: per-voxel MLP, multi-radius neighborhood
// max-pooling over voxel centers, and a per-voxel MLP to the descriptor
// dimension. A linear semantic head produces per-voxel class logits.

#include <memory>
#include <vector>

#include "iaseg/autodiff.hpp"
#include "iaseg/layers.hpp"
#include "iaseg/voxel_grid.hpp"

namespace iaseg {

struct BackboneConfig {
  int d0 = kInitialFeatureDim;
  std::vector<int> hidden_dims{64, 64};
  int descriptor_dim = 32;
  int num_classes = 5;
  double neighbor_radius = 0.4;  // level l pools within neighbor_radius * 2^l
  int pooling_levels = 2;

  void validate() const;
};

// Radius neighborhoods of the voxel centers, one list set per pooling level.
struct PoolingNeighborhoods {
  std::vector<std::shared_ptr<const NeighborLists>> levels;
};

PoolingNeighborhoods build_pooling_neighborhoods(const VoxelGrid& grid, const BackboneConfig& config);

class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& config, ad::ParameterSet& params, Rng& rng);

  const BackboneConfig& config() const { return config_; }

  /// M x d descriptors F from M x d0 initial features.
  ad::Var forward(ad::Tape& tape, const ad::ParameterSet& params, ad::Var f0,
                  const PoolingNeighborhoods& pools) const;

 private:
  BackboneConfig config_;
  std::vector<Linear> encoder_;
  Linear fuse_;
  Linear project_;
};

class SemanticHead {
 public:
  SemanticHead() = default;
  SemanticHead(int descriptor_dim, int num_classes, ad::ParameterSet& params, Rng& rng);

  ad::Var forward(ad::Tape& tape, const ad::ParameterSet& params, ad::Var descriptors) const;

 private:
  Linear classifier_;
};

/// Mean softmax cross-entropy over voxels. Throws ArgumentError for labels
/// outside [0, num_classes).
ad::Var semantic_loss(ad::Tape& tape, ad::Var logits, const std::vector<int>& voxel_labels);

}  // namespace iaseg

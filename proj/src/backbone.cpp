#include "iaseg/backbone.hpp"

#include <cmath>

#include "iaseg/errors.hpp"

namespace iaseg {

void BackboneConfig::validate() const {
  if (d0 <= 0 || descriptor_dim <= 0 || num_classes <= 0) {
    throw ArgumentError("backbone: dimensions must be positive");
  }
  if (hidden_dims.empty()) throw ArgumentError("backbone: at least one hidden layer is required");
  for (int h : hidden_dims) {
    if (h <= 0) throw ArgumentError("backbone: hidden widths must be positive");
  }
  if (descriptor_dim < 8) throw ArgumentError("backbone: descriptor_dim must be >= 8");
  if (!(neighbor_radius > 0.0)) throw ArgumentError("backbone: neighbor_radius must be positive");
  if (pooling_levels < 0) throw ArgumentError("backbone: pooling_levels must be >= 0");
}

PoolingNeighborhoods build_pooling_neighborhoods(const VoxelGrid& grid, const BackboneConfig& config) {
  PoolingNeighborhoods pools;
  const auto centers = grid.centers();
  double radius = config.neighbor_radius;
  for (int l = 0; l < config.pooling_levels; ++l) {
    pools.levels.push_back(std::make_shared<const NeighborLists>(radius_neighbors(centers, radius)));
    radius *= 2.0;
  }
  return pools;
}

Backbone::Backbone(const BackboneConfig& config, ad::ParameterSet& params, Rng& rng) : config_(config) {
  config_.validate();
  int width = config_.d0;
  for (std::size_t i = 0; i < config_.hidden_dims.size(); ++i) {
    encoder_.push_back(Linear::create(params, "backbone.enc" + std::to_string(i), width,
                                      config_.hidden_dims[i], rng));
    width = config_.hidden_dims[i];
  }
  fuse_ = Linear::create(params, "backbone.fuse", width * (1 + config_.pooling_levels), width, rng);
  project_ = Linear::create(params, "backbone.project", width, config_.descriptor_dim, rng);
}

ad::Var Backbone::forward(ad::Tape& tape, const ad::ParameterSet& params, ad::Var f0,
                          const PoolingNeighborhoods& pools) const {
  if (tape.value(f0).cols() != config_.d0) {
    throw ArgumentError("backbone: expected " + std::to_string(config_.d0) + " input features, got " +
                        std::to_string(tape.value(f0).cols()));
  }
  if (static_cast<int>(pools.levels.size()) != config_.pooling_levels) {
    throw ArgumentError("backbone: pooling neighborhoods do not match pooling_levels");
  }
  ad::Var h = f0;
  for (const auto& layer : encoder_) h = tape.relu(layer(tape, params, h));
  std::vector<ad::Var> parts{h};
  for (const auto& level : pools.levels) parts.push_back(tape.neighborhood_max(h, level));
  ad::Var fused = tape.relu(fuse_(tape, params, tape.concat_cols(parts)));
  return project_(tape, params, fused);
}

SemanticHead::SemanticHead(int descriptor_dim, int num_classes, ad::ParameterSet& params, Rng& rng)
    : classifier_(Linear::create(params, "semantic.linear", descriptor_dim, num_classes, rng)) {}

ad::Var SemanticHead::forward(ad::Tape& tape, const ad::ParameterSet& params, ad::Var descriptors) const {
  return classifier_(tape, params, descriptors);
}

ad::Var semantic_loss(ad::Tape& tape, ad::Var logits, const std::vector<int>& voxel_labels) {
  return tape.mean(tape.softmax_ce_rows(logits, voxel_labels));
}

}  // namespace iaseg

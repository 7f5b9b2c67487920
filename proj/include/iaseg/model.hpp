#pragma once

#include <cstdint>

#include "iaseg/backbone.hpp"
#include "iaseg/instance_heads.hpp"

namespace iaseg {

struct ModelConfig {
  BackboneConfig backbone;
  HeadsConfig heads;
  double voxel_size = 0.2;

  void validate() const;
};

// All learnable parameters in declaration order: backbone, semantic head,
// classification head, reconstruction head.
struct Model {
  ModelConfig config;
  ad::ParameterSet params;
  Backbone backbone;
  SemanticHead semantic;
  ClassificationHead classifier;
  ReconstructionHead reconstructor;

  Model() = default;
  Model(const ModelConfig& config, std::uint64_t seed);
};

// Per-scene inputs that do not depend on parameters.
struct PreparedScene {
  LabeledScene scene;
  VoxelGrid grid;
  Matrix f0;
  PoolingNeighborhoods pools;
  std::vector<int> point_labels;
  std::vector<int> voxel_labels;
};

PreparedScene prepare_scene(LabeledScene scene, const ModelConfig& config);

struct ForwardResult {
  Matrix descriptors;  // M x d
  Matrix logits;       // M x C
};

/// Parameter-only forward pass (no gradients kept).
ForwardResult run_forward(const Model& model, const PreparedScene& scene);

}  // namespace iaseg

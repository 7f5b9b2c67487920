#include "iaseg/model.hpp"

#include "iaseg/errors.hpp"

namespace iaseg {

void ModelConfig::validate() const {
  backbone.validate();
  heads.validate();
  if (!(voxel_size > 0.0)) throw ArgumentError("voxel_size must be positive");
  if (heads.descriptor_dim != backbone.descriptor_dim || heads.num_classes != backbone.num_classes) {
    throw ArgumentError("heads and backbone disagree on descriptor or class dimensions");
  }
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
  config.validate();
  Rng rng(derive_seed(seed, 0x1417));
  backbone = Backbone(config.backbone, params, rng);
  semantic = SemanticHead(config.backbone.descriptor_dim, config.backbone.num_classes, params, rng);
  classifier = ClassificationHead(config.heads, params, rng);
  reconstructor = ReconstructionHead(config.heads, params, rng);
}

PreparedScene prepare_scene(LabeledScene scene, const ModelConfig& config) {
  PreparedScene p;
  p.scene = std::move(scene);
  if (p.scene.cloud.size() != p.scene.labels.size()) throw DataError("scene point and label counts differ");
  p.grid = voxelize(p.scene.cloud, config.voxel_size);
  p.f0 = initial_features(p.grid, p.scene.cloud);
  p.pools = build_pooling_neighborhoods(p.grid, config.backbone);
  p.point_labels.reserve(p.scene.size());
  for (const auto& l : p.scene.labels.labels) {
    if (l.semantic_id >= config.backbone.num_classes) {
      throw DataError("semantic id " + std::to_string(l.semantic_id) + " outside the class table");
    }
    p.point_labels.push_back(l.semantic_id);
  }
  p.voxel_labels = voxel_majority_labels(p.grid, p.point_labels, config.backbone.num_classes);
  return p;
}

ForwardResult run_forward(const Model& model, const PreparedScene& scene) {
  ad::Tape tape;
  ad::Var f0 = tape.constant(scene.f0);
  ad::Var desc = model.backbone.forward(tape, model.params, f0, scene.pools);
  ad::Var logits = model.semantic.forward(tape, model.params, desc);
  return {tape.value(desc), tape.value(logits)};
}

}  // namespace iaseg

#include <algorithm>
#include <iomanip>
#include <set>
#include <sstream>

#include "iaseg/errors.hpp"
#include "iaseg/trainer.hpp"

namespace iaseg {

void RunConfig::validate() const {
  model.validate();
  radii.validate();
  if (train_scenes < 0 || val_scenes < 0) throw ArgumentError("scene counts must be >= 0");
  if (stage1_epochs < 0 || stage2_epochs < 0) throw ArgumentError("epochs must be >= 0");
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (!(peak_lr > 0.0)) throw ArgumentError("peak_lr must be positive");
  if (lambda_cls < 0.0 || lambda_recon < 0.0) throw ArgumentError("loss weights must be >= 0");
  if (min_points < 1) throw ArgumentError("min_points must be >= 1");
  if (recluster_every < 0) throw ArgumentError("recluster_every must be >= 0");
  for (auto c : instance_classes) {
    if (!radii.contains(c)) throw ArgumentError("instance class " + std::to_string(c) + " has no radius");
    if (c >= model.backbone.num_classes) throw ArgumentError("instance class outside the class table");
  }
}

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "data_dir",       "scene_spec",     "train_scenes",   "val_scenes",    "data_seed",
      "voxel_size",     "hidden_dims",    "descriptor_dim", "num_classes",   "neighbor_radius",
      "pooling_levels", "cls_hidden",     "recon_hidden",   "latent_dim",    "recon_points",
      "keep_fraction",  "radius",         "instance_classes", "min_points",  "lambda_cls",
      "lambda_recon",   "use_cls_head",   "use_recon_head", "recluster_every", "stage1_epochs",
      "stage2_epochs",  "batch_size",     "peak_lr",        "seed",          "output_dir"};
  return keys;
}

}  // namespace

RunConfig RunConfig::from_key_values(const KeyValueFile& kv) {
  for (const auto& [k, v] : kv.entries()) {
    if (!known_keys().count(k)) throw ArgumentError("unknown config key '" + k + "'");
  }
  RunConfig c;
  c.data_dir = kv.get_string("data_dir", "");
  c.scene_spec = kv.get_string("scene_spec", "");
  c.train_scenes = static_cast<int>(kv.get_int("train_scenes", c.train_scenes));
  c.val_scenes = static_cast<int>(kv.get_int("val_scenes", c.val_scenes));
  c.data_seed = static_cast<std::uint64_t>(kv.get_int("data_seed", static_cast<long long>(c.data_seed)));

  const SceneSpec spec = resolve_spec(c);
  auto& bb = c.model.backbone;
  c.model.voxel_size = kv.get_double("voxel_size", c.model.voxel_size);
  if (const auto* h = kv.find("hidden_dims")) {
    bb.hidden_dims.clear();
    for (const auto& tok : split_whitespace(*h)) bb.hidden_dims.push_back(static_cast<int>(parse_int(tok, "hidden_dims")));
  }
  bb.descriptor_dim = static_cast<int>(kv.get_int("descriptor_dim", bb.descriptor_dim));
  bb.num_classes = static_cast<int>(kv.get_int("num_classes", static_cast<long long>(spec.num_classes())));
  bb.neighbor_radius = kv.get_double("neighbor_radius", bb.neighbor_radius);
  bb.pooling_levels = static_cast<int>(kv.get_int("pooling_levels", bb.pooling_levels));
  auto& hd = c.model.heads;
  hd.descriptor_dim = bb.descriptor_dim;
  hd.num_classes = bb.num_classes;
  hd.cls_hidden = static_cast<int>(kv.get_int("cls_hidden", hd.cls_hidden));
  hd.recon_hidden = static_cast<int>(kv.get_int("recon_hidden", hd.recon_hidden));
  hd.latent_dim = static_cast<int>(kv.get_int("latent_dim", hd.latent_dim));
  hd.recon_points = static_cast<int>(kv.get_int("recon_points", hd.recon_points));
  hd.keep_fraction = kv.get_double("keep_fraction", hd.keep_fraction);

  const auto radius_lines = kv.all("radius");
  if (!radius_lines.empty()) {
    c.radii.radii.clear();
    for (const auto& line : radius_lines) {
      const auto f = split_whitespace(line);
      if (f.size() != 2) throw ArgumentError("radius: expected '<class_id> <meters>'");
      const auto id = parse_int(f[0], "radius class");
      if (id < 0 || id > 0xFFFF) throw ArgumentError("radius class out of range");
      c.radii.radii[static_cast<std::uint16_t>(id)] = parse_double(f[1], "radius");
    }
  }
  if (const auto* ic = kv.find("instance_classes")) {
    c.instance_classes.clear();
    for (const auto& tok : split_whitespace(*ic)) {
      c.instance_classes.push_back(static_cast<std::uint16_t>(parse_int(tok, "instance_classes")));
    }
  } else {
    c.instance_classes = spec.instance_classes();
  }
  c.min_points = static_cast<int>(kv.get_int("min_points", c.min_points));
  c.lambda_cls = kv.get_double("lambda_cls", c.lambda_cls);
  c.lambda_recon = kv.get_double("lambda_recon", c.lambda_recon);
  c.use_cls_head = kv.get_bool("use_cls_head", c.use_cls_head);
  c.use_recon_head = kv.get_bool("use_recon_head", c.use_recon_head);
  c.recluster_every = static_cast<int>(kv.get_int("recluster_every", c.recluster_every));
  c.stage1_epochs = static_cast<int>(kv.get_int("stage1_epochs", c.stage1_epochs));
  c.stage2_epochs = static_cast<int>(kv.get_int("stage2_epochs", c.stage2_epochs));
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.peak_lr = kv.get_double("peak_lr", c.peak_lr);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  c.output_dir = kv.get_string("output_dir", c.output_dir.string());
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  return from_key_values(KeyValueFile::load(path));
}

std::string RunConfig::serialize() const {
  std::ostringstream out;
  out << std::setprecision(17);
  if (!data_dir.empty()) out << "data_dir = " << data_dir.string() << "\n";
  if (!scene_spec.empty()) out << "scene_spec = " << scene_spec.string() << "\n";
  out << "train_scenes = " << train_scenes << "\n";
  out << "val_scenes = " << val_scenes << "\n";
  out << "data_seed = " << data_seed << "\n";
  out << "voxel_size = " << model.voxel_size << "\n";
  out << "hidden_dims =";
  for (int h : model.backbone.hidden_dims) out << " " << h;
  out << "\n";
  out << "descriptor_dim = " << model.backbone.descriptor_dim << "\n";
  out << "num_classes = " << model.backbone.num_classes << "\n";
  out << "neighbor_radius = " << model.backbone.neighbor_radius << "\n";
  out << "pooling_levels = " << model.backbone.pooling_levels << "\n";
  out << "cls_hidden = " << model.heads.cls_hidden << "\n";
  out << "recon_hidden = " << model.heads.recon_hidden << "\n";
  out << "latent_dim = " << model.heads.latent_dim << "\n";
  out << "recon_points = " << model.heads.recon_points << "\n";
  out << "keep_fraction = " << model.heads.keep_fraction << "\n";
  for (const auto& [cls, r] : radii.radii) out << "radius = " << cls << " " << r << "\n";
  out << "instance_classes =";
  for (auto c : instance_classes) out << " " << c;
  out << "\n";
  out << "min_points = " << min_points << "\n";
  out << "lambda_cls = " << lambda_cls << "\n";
  out << "lambda_recon = " << lambda_recon << "\n";
  out << "use_cls_head = " << (use_cls_head ? "true" : "false") << "\n";
  out << "use_recon_head = " << (use_recon_head ? "true" : "false") << "\n";
  out << "recluster_every = " << recluster_every << "\n";
  out << "stage1_epochs = " << stage1_epochs << "\n";
  out << "stage2_epochs = " << stage2_epochs << "\n";
  out << "batch_size = " << batch_size << "\n";
  out << "peak_lr = " << peak_lr << "\n";
  out << "seed = " << seed << "\n";
  out << "output_dir = " << output_dir.string() << "\n";
  return out.str();
}

ClusterConfig RunConfig::cluster_config() const {
  ClusterConfig c;
  c.radii = radii;
  c.instance_classes = instance_classes;
  c.min_points = min_points;
  return c;
}

SceneSpec resolve_spec(const RunConfig& config) {
  if (!config.scene_spec.empty()) return SceneSpec::load(config.scene_spec);
  if (!config.data_dir.empty() && std::filesystem::exists(config.data_dir / "scene_spec.txt")) {
    return SceneSpec::load(config.data_dir / "scene_spec.txt");
  }
  return SceneSpec::default_spec();
}

}  // namespace iaseg

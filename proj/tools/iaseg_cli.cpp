// Command-line front end: generate, train, cluster, eval, infer, ablation.

#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "iaseg/errors.hpp"
#include "iaseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace iaseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

RunConfig load_config(const std::string& path) {
  return path.empty() ? RunConfig::from_key_values(KeyValueFile{}) : RunConfig::load(path);
}

// Descriptor file: uint32 N, uint32 d, then N*d little-endian float64, row-major.
Matrix read_descriptors(const fs::path& path) {
  const Bytes bytes = read_file(path);
  auto u32 = [&](std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
    return v;
  };
  if (bytes.size() < 8) throw MalformedFile(path.string() + ": descriptor header truncated");
  const std::uint64_t n = u32(0), d = u32(4);
  if (bytes.size() != 8 + n * d * 8) throw MalformedFile(path.string() + ": descriptor payload has the wrong length");
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::uint64_t i = 0; i < n * d; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[8 + i * 8 + b]) << (8 * b);
    m.data()[i] = std::bit_cast<double>(bits);
    if (!std::isfinite(m.data()[i])) throw MalformedFile(path.string() + ": non-finite descriptor value");
  }
  return m;
}

void write_descriptors(const fs::path& path, const Matrix& m) {
  Bytes out;
  auto put = [&](std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put(static_cast<std::uint64_t>(m.rows()), 4);
  put(static_cast<std::uint64_t>(m.cols()), 4);
  for (Eigen::Index i = 0; i < m.size(); ++i) put(std::bit_cast<std::uint64_t>(m.data()[i]), 8);
  write_file(path, out);
}

LabeledScene load_pair(const fs::path& bin, const std::string& label) {
  LabeledScene s;
  s.cloud = read_point_bin(read_file(bin));
  if (label.empty()) {
    s.labels.labels.assign(s.cloud.size(), Label{});
  } else {
    s.labels = read_label_bin(read_file(label));
    if (s.labels.size() != s.cloud.size()) throw DataError("point and label counts differ");
  }
  return s;
}

int cmd_generate(const std::string& spec_path, const fs::path& out, int train, int val, std::uint64_t seed) {
  const SceneSpec spec = spec_path.empty() ? SceneSpec::default_spec() : SceneSpec::load(spec_path);
  fs::create_directories(out);
  std::vector<ManifestEntry> entries;
  auto emit = [&](const std::string& split, int count, bool validation) {
    for (int i = 0; i < count; ++i) {
      std::ostringstream stem;
      stem << split << "_" << std::setw(4) << std::setfill('0') << i;
      save_scene(out, stem.str(), generate_scene(spec, scene_seed(seed, validation, i)));
      entries.push_back({split, stem.str()});
    }
  };
  emit("train", train, false);
  emit("val", val, true);
  write_manifest(out, entries, "data_seed " + std::to_string(seed));
  std::ofstream(out / "scene_spec.txt", std::ios::trunc) << spec.serialize();
  std::cout << "wrote " << entries.size() << " scenes to " << out.string() << "\n";
  return kExitOk;
}

int cmd_train(RunConfig config, bool stage1_only, const std::string& resume) {
  std::optional<TrainState> from;
  if (!resume.empty()) from = load_checkpoint(resume);
  const auto outcome = run_training(config, stage1_only, &std::cerr, from ? &*from : nullptr);
  write_metrics_table(outcome.val, std::cout);
  return kExitOk;
}

int cmd_cluster(const RunConfig& config, const fs::path& bin, const std::string& label, const fs::path& desc,
                const fs::path& out) {
  const LabeledScene scene = load_pair(bin, label);
  const Matrix d = read_descriptors(desc);
  if (static_cast<std::size_t>(d.rows()) != scene.size()) throw DataError("descriptor rows differ from point count");
  const InstanceSet set = cluster_instances(scene, d, config.cluster_config());
  LabelArray result = scene.labels;
  for (std::size_t i = 0; i < result.size(); ++i) {
    const int a = set.assignment[i];
    result.labels[i].instance_id = a < 0 ? 0 : static_cast<std::uint16_t>(a + 1);
  }
  write_file(out, write_label_bin(result));
  std::cout << set.size() << " instances\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& config, const fs::path& checkpoint, const std::string& split, const std::string& csv) {
  const TrainState state = load_checkpoint(checkpoint);
  const Dataset data = load_dataset(config);
  const auto& scenes = split == "train" ? data.train : data.val;
  const EvalReport report = evaluate(state.model, scenes, config, data.spec, split);
  write_metrics_table(report, std::cout);
  if (!csv.empty()) {
    std::ofstream f(csv, std::ios::trunc);
    if (!f) throw DataError("cannot write " + csv);
    write_metrics_csv(report, f);
  }
  return kExitOk;
}

int cmd_infer(const fs::path& checkpoint, const fs::path& bin, const fs::path& out, const std::string& desc_out) {
  const TrainState state = load_checkpoint(checkpoint);
  const PreparedScene ps = prepare_scene(load_pair(bin, ""), state.model.config);
  const auto fwd = run_forward(state.model, ps);
  const auto voxel_pred = argmax_rows(fwd.logits);
  LabelArray labels;
  labels.labels.resize(ps.scene.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels.labels[i].semantic_id = static_cast<std::uint16_t>(voxel_pred[ps.grid.point_to_voxel[i]]);
  }
  write_file(out, write_label_bin(labels));
  if (!desc_out.empty()) write_descriptors(desc_out, interpolate_to_points(ps.grid, fwd.descriptors));
  return kExitOk;
}

int cmd_ablation(const RunConfig& config, const std::vector<std::uint64_t>& seeds, const std::string& csv) {
  const Dataset data = load_dataset(config);
  const auto rows = run_ablation(data, config, seeds, &std::cerr);
  std::ostringstream table;
  table << std::setprecision(17) << "seed,baseline,cls_only,recon_only,full\n";
  for (const auto& r : rows) {
    table << r.seed << "," << r.baseline << "," << r.cls_only << "," << r.recon_only << "," << r.full << "\n";
  }
  std::cout << table.str();
  if (!csv.empty()) std::ofstream(csv, std::ios::trunc) << table.str();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instance-aware point cloud semantic segmentation"};
  app.require_subcommand(1);

  std::string config_path;
  auto add_config = [&](CLI::App* sub) { sub->add_option("-c,--config", config_path, "key = value run config"); };

  auto* gen = app.add_subcommand("generate", "Write synthetic scenes, a manifest and the scene spec");
  std::string spec_path;
  std::string gen_out;
  int gen_train = 200, gen_val = 50;
  std::uint64_t gen_seed = 2024;
  gen->add_option("--spec", spec_path, "scene spec file (default: built-in)");
  gen->add_option("-o,--out", gen_out, "output directory")->required();
  gen->add_option("--train", gen_train, "training scenes")->check(CLI::NonNegativeNumber);
  gen->add_option("--val", gen_val, "validation scenes")->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", gen_seed, "data seed");

  auto* train = app.add_subcommand("train", "Run both training stages and evaluate on the validation split");
  add_config(train);
  bool stage1_only = false, no_cls = false, no_recon = false;
  std::string resume, train_out;
  std::optional<std::uint64_t> train_seed;
  train->add_flag("--stage1-only", stage1_only, "semantic loss only, for the whole epoch budget");
  train->add_flag("--no-cls-head", no_cls, "disable the instance classification head");
  train->add_flag("--no-recon-head", no_recon, "disable the shape reconstruction head");
  train->add_option("--resume", resume, "continue from a checkpoint");
  train->add_option("-o,--output", train_out, "output directory (overrides output_dir)");
  train->add_option("--seed", train_seed, "training seed (overrides seed)");

  auto* cluster = app.add_subcommand("cluster", "Cluster instances from a scene and per-point descriptors");
  add_config(cluster);
  std::string cl_bin, cl_label, cl_desc, cl_out;
  cluster->add_option("--bin", cl_bin, "point file")->required();
  cluster->add_option("--label", cl_label, "label file with semantic ids")->required();
  cluster->add_option("--descriptors", cl_desc, "descriptor file")->required();
  cluster->add_option("-o,--out", cl_out, "output label file")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  add_config(eval);
  std::string ev_ckpt, ev_split = "val", ev_csv;
  eval->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  eval->add_option("--split", ev_split, "train or val")->check(CLI::IsMember({"train", "val"}));
  eval->add_option("--csv", ev_csv, "also write per-class CSV here");

  auto* infer = app.add_subcommand("infer", "Predict per-point semantic labels for one scene");
  std::string in_ckpt, in_bin, in_out, in_desc;
  infer->add_option("--checkpoint", in_ckpt, "checkpoint file")->required();
  infer->add_option("--bin", in_bin, "point file")->required();
  infer->add_option("-o,--out", in_out, "output label file")->required();
  infer->add_option("--descriptors-out", in_desc, "also write per-point descriptors");

  auto* ablation = app.add_subcommand("ablation", "Baseline / single-head / full comparison over seeds");
  add_config(ablation);
  std::vector<std::uint64_t> ab_seeds{0, 1, 2};
  std::string ab_csv;
  ablation->add_option("--seeds", ab_seeds, "training seeds")->delimiter(',');
  ablation->add_option("--csv", ab_csv, "write the grid as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  tune_allocator();
  try {
    if (gen->parsed()) return cmd_generate(spec_path, gen_out, gen_train, gen_val, gen_seed);
    RunConfig config = load_config(config_path);
    if (train->parsed()) {
      if (no_cls) config.use_cls_head = false;
      if (no_recon) config.use_recon_head = false;
      if (!train_out.empty()) config.output_dir = train_out;
      if (train_seed) config.seed = *train_seed;
      return cmd_train(config, stage1_only, resume);
    }
    if (cluster->parsed()) return cmd_cluster(config, cl_bin, cl_label, cl_desc, cl_out);
    if (eval->parsed()) return cmd_eval(config, ev_ckpt, ev_split, ev_csv);
    if (infer->parsed()) return cmd_infer(in_ckpt, in_bin, in_out, in_desc);
    if (ablation->parsed()) return cmd_ablation(config, ab_seeds, ab_csv);
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

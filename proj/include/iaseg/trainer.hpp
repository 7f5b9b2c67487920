#pragma once

// Two-stage training: stage 1 optimizes the semantic loss alone; instances are
// then clustered once from the stage-1 descriptors and stage 2 optimizes
// L^s + lambda1 L^c + lambda2 L^g. A single one-cycle schedule spans both stages.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <ostream>
#include <string>
#include <vector>

#include "iaseg/instance_cluster.hpp"
#include "iaseg/key_value.hpp"
#include "iaseg/metrics.hpp"
#include "iaseg/model.hpp"
#include "iaseg/optim.hpp"

namespace iaseg {

struct RunConfig {
  // Data: an existing scene directory, or a scene spec generated in memory.
  std::filesystem::path data_dir;
  std::filesystem::path scene_spec;  // empty: SceneSpec::default_spec()
  int train_scenes = 200;
  int val_scenes = 50;
  std::uint64_t data_seed = 2024;

  ModelConfig model;
  RadiusTable radii = RadiusTable::defaults();
  std::vector<std::uint16_t> instance_classes{1, 2, 3, 4};  // config files default to the scene spec's
  int min_points = 5;

  double lambda_cls = kDefaultLambdaCls;
  double lambda_recon = kDefaultLambdaRecon;
  bool use_cls_head = true;
  bool use_recon_head = true;
  int recluster_every = 0;  // stage-2 epochs between re-clustering; 0 = never

  int stage1_epochs = 10;
  int stage2_epochs = 20;
  int batch_size = 2;
  double peak_lr = 0.003;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "run";

  void validate() const;
  static RunConfig from_key_values(const KeyValueFile& kv);
  static RunConfig load(const std::filesystem::path& path);
  std::string serialize() const;

  ClusterConfig cluster_config() const;
  int total_epochs() const { return stage1_epochs + stage2_epochs; }
};

struct Dataset {
  SceneSpec spec;  // class names and instance flags
  std::vector<PreparedScene> train;
  std::vector<PreparedScene> val;
};

/// Class table for the run: the scene spec file, <data_dir>/scene_spec.txt,
/// or the built-in default.
SceneSpec resolve_spec(const RunConfig& config);

/// Generator seed of scene `index` in a split; `generate` and in-memory
/// datasets use the same seeds.
std::uint64_t scene_seed(std::uint64_t data_seed, bool validation, int index);

/// Loads or generates the train/val scenes and prepares their voxel grids.
/// Throws DataError when a required split is empty or files are missing.
Dataset load_dataset(const RunConfig& config);

struct StepLog {
  std::int64_t step = 0;
  int epoch = 0;
  int stage = 1;
  double lr = 0.0;
  double total = 0.0;
  double semantic = 0.0;
  double classification = 0.0;  // NaN when the head is inactive
  double reconstruction = 0.0;  // NaN when the head is inactive
};

struct TrainState {
  Model model;
  OptimizerState optimizer;
  std::int64_t step = 0;    // optimizer steps taken
  int epochs_done = 0;      // across both stages
  Rng shuffle_rng;
  Rng head_rng;
  bool cache_built = false;
  std::vector<InstanceSet> cache;  // one per training scene

  static TrainState initialize(const RunConfig& config);
  bool operator==(const TrainState& other) const;
};

struct TrainHooks {
  std::function<void(const StepLog&)> on_step;
  std::function<void(const TrainState&, int stage)> on_epoch;
};

std::int64_t steps_per_epoch(const RunConfig& config, std::size_t train_count);
LrSchedule schedule_for(const RunConfig& config, std::size_t train_count);

/// Runs stage-1 epochs until state.epochs_done == stage1_epochs.
void train_stage1(TrainState& state, const Dataset& data, const RunConfig& config, const TrainHooks& hooks = {});

/// Clusters every training scene with the current descriptors and GT semantics.
std::vector<InstanceSet> build_instance_cache(const TrainState& state, const Dataset& data, const RunConfig& config);

/// Runs stage-2 epochs until state.epochs_done == total_epochs(). Builds the
/// cache first when it is missing.
void train_stage2(TrainState& state, const Dataset& data, const RunConfig& config, const TrainHooks& hooks = {});

struct ClassMetrics {
  int class_id = 0;
  std::string name;
  IoU iou;
  AccSegClass acc_05;
  AccSegClass acc_08;
};

struct EvalReport {
  std::string split;
  ConfusionMatrix confusion;
  double miou = 0.0;
  AccSegReport acc_05;
  AccSegReport acc_08;
  AccSegReport acc_05_clustered;
  AccSegReport acc_08_clustered;
  double mean_ari = 0.0;  // clustering vs GT instances
  std::vector<ClassMetrics> per_class;
};

/// Point-level IoU/mIoU and Acc_seg (GT and clustered objects, t = 0.5 and
/// 0.8) accumulated over scenes, plus clustering ARI against GT instances.
/// Throws DataError for an empty split.
EvalReport evaluate(const Model& model, const std::vector<PreparedScene>& scenes, const RunConfig& config,
                    const SceneSpec& spec, const std::string& split);

/// Per-point labels: voxelize, forward, argmax, broadcast to points.
std::vector<int> infer_labels(const Model& model, const PreparedScene& scene);

void write_metrics_csv(const EvalReport& report, std::ostream& out);
void write_metrics_table(const EvalReport& report, std::ostream& out);
void write_step_log_header(std::ostream& out);
void write_step_log(const StepLog& log, std::ostream& out);

// Checkpoint: header (model dims, radius table, parameter layout), body
// (parameters as little-endian float64 in declaration order), then the
// optimizer, counters, generator states and instance cache.
std::vector<std::uint8_t> encode_checkpoint(const TrainState& state);
TrainState decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

// Ablation grid: one stage-1 run per seed, then the baseline
// (no heads), classification only, reconstruction only and both heads.
struct AblationRow {
  std::uint64_t seed = 0;
  double baseline = 0.0;
  double cls_only = 0.0;
  double recon_only = 0.0;
  double full = 0.0;
};

std::vector<AblationRow> run_ablation(const Dataset& data, const RunConfig& config,
                                      const std::vector<std::uint64_t>& seeds, std::ostream* progress = nullptr);

struct TrainOutcome {
  TrainState state;
  EvalReport val;
};

/// Full `train` pipeline: stages, checkpoints, loss log and metric files in
/// config.output_dir.
TrainOutcome run_training(const RunConfig& config, bool stage1_only, std::ostream* progress = nullptr,
                          const TrainState* resume = nullptr);

/// Keeps large temporaries on the heap instead of mapping and unmapping them
/// every step (glibc only; a no-op elsewhere). Call once from main.
void tune_allocator();

}  // namespace iaseg

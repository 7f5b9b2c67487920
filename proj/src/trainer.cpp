#include "iaseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include "iaseg/errors.hpp"

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace iaseg {

std::uint64_t scene_seed(std::uint64_t data_seed, bool validation, int index) {
  return derive_seed(data_seed, (validation ? 1000000u : 0u) + static_cast<std::uint64_t>(index));
}

Dataset load_dataset(const RunConfig& config) {
  Dataset data;
  data.spec = resolve_spec(config);
  if (!config.data_dir.empty()) {
    const auto dir = SceneDirectory::open(config.data_dir);
    for (const auto& stem : dir.stems("train")) data.train.push_back(prepare_scene(dir.load(stem), config.model));
    for (const auto& stem : dir.stems("val")) data.val.push_back(prepare_scene(dir.load(stem), config.model));
  } else {
    for (int i = 0; i < config.train_scenes; ++i) {
      data.train.push_back(prepare_scene(generate_scene(data.spec, scene_seed(config.data_seed, false, i)),
                                         config.model));
    }
    for (int i = 0; i < config.val_scenes; ++i) {
      data.val.push_back(prepare_scene(
          generate_scene(data.spec, scene_seed(config.data_seed, true, i)),
          config.model));
    }
  }
  if (data.train.empty()) throw DataError("training split is empty");
  return data;
}

TrainState TrainState::initialize(const RunConfig& config) {
  TrainState s;
  s.model = Model(config.model, config.seed);
  s.optimizer = OptimizerState::for_params(s.model.params);
  s.shuffle_rng = Rng(derive_seed(config.seed, 1));
  s.head_rng = Rng(derive_seed(config.seed, 2));
  return s;
}

bool TrainState::operator==(const TrainState& other) const {
  return model.params == other.model.params && optimizer == other.optimizer && step == other.step &&
         epochs_done == other.epochs_done && shuffle_rng == other.shuffle_rng && head_rng == other.head_rng &&
         cache_built == other.cache_built && cache == other.cache;
}

std::int64_t steps_per_epoch(const RunConfig& config, std::size_t train_count) {
  const auto b = static_cast<std::int64_t>(config.batch_size);
  return (static_cast<std::int64_t>(train_count) + b - 1) / b;
}

LrSchedule schedule_for(const RunConfig& config, std::size_t train_count) {
  LrSchedule s;
  s.peak_lr = config.peak_lr;
  s.total_steps = std::max<std::int64_t>(1, steps_per_epoch(config, train_count) * config.total_epochs());
  return s;
}

namespace {

bool all_finite(const Matrix& m) { return m.allFinite(); }

bool heads_active(const RunConfig& config) {
  return (config.use_cls_head && config.lambda_cls > 0.0) || (config.use_recon_head && config.lambda_recon > 0.0);
}

void train_step(TrainState& state, const Dataset& data, const RunConfig& config, std::span<const std::size_t> batch,
                int stage, const LrSchedule& schedule, const TrainHooks& hooks) {
  const Model& model = state.model;
  const bool use_cls = stage == 2 && config.use_cls_head && config.lambda_cls > 0.0;
  const bool use_recon = stage == 2 && config.use_recon_head && config.lambda_recon > 0.0;

  ad::Tape tape;
  std::vector<ad::Var> totals;
  double sum_sem = 0.0, sum_cls = 0.0, sum_recon = 0.0;
  int n_cls = 0, n_recon = 0;
  for (std::size_t idx : batch) {
    const PreparedScene& ps = data.train[idx];
    ad::Var f0 = tape.constant(ps.f0);
    ad::Var desc = model.backbone.forward(tape, model.params, f0, ps.pools);
    ad::Var logits = model.semantic.forward(tape, model.params, desc);
    ad::Var ls = semantic_loss(tape, logits, ps.voxel_labels);
    sum_sem += tape.scalar(ls);
    ad::Var lc, lg;
    if (use_cls || use_recon) {
      const auto groups = make_groups(state.cache.at(idx), ps.grid);
      if (use_cls) {
        lc = classification_loss(tape, model.params, model.classifier, desc, groups, config.model.heads.keep_fraction);
        if (lc.valid()) {
          sum_cls += tape.scalar(lc);
          ++n_cls;
        }
      }
      if (use_recon) {
        lg = reconstruction_loss(tape, model.params, model.reconstructor, desc, groups, config.radii, state.head_rng);
        if (lg.valid()) {
          sum_recon += tape.scalar(lg);
          ++n_recon;
        }
      }
    }
    totals.push_back(total_loss(tape, ls, lc, lg, config.lambda_cls, config.lambda_recon));
  }
  ad::Var loss = tape.mean(tape.stack_rows(totals));
  const double loss_value = tape.scalar(loss);
  if (!std::isfinite(loss_value)) {
    throw NumericalFailure("non-finite loss at step " + std::to_string(state.step));
  }
  tape.backward(loss);
  auto grads = state.model.params.zeros_like();
  tape.accumulate_parameter_grads(grads);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!all_finite(grads[i])) {
      throw NumericalFailure("non-finite gradient for '" + state.model.params.name(i) + "' at step " +
                             std::to_string(state.step));
    }
  }
  const double lr = onecycle_lr(state.step + 1, schedule);
  adam_step(state.model.params, grads, state.optimizer, lr);
  ++state.step;

  if (hooks.on_step) {
    StepLog log;
    log.step = state.step;
    log.epoch = state.epochs_done + 1;
    log.stage = stage;
    log.lr = lr;
    log.total = loss_value;
    log.semantic = sum_sem / static_cast<double>(batch.size());
    log.classification = n_cls > 0 ? sum_cls / n_cls : std::numeric_limits<double>::quiet_NaN();
    log.reconstruction = n_recon > 0 ? sum_recon / n_recon : std::numeric_limits<double>::quiet_NaN();
    hooks.on_step(log);
  }
}

void run_epoch(TrainState& state, const Dataset& data, const RunConfig& config, int stage, const TrainHooks& hooks) {
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  state.shuffle_rng.shuffle(std::span<std::size_t>(order));
  const auto schedule = schedule_for(config, data.train.size());
  const auto b = static_cast<std::size_t>(config.batch_size);
  for (std::size_t start = 0; start < order.size(); start += b) {
    const std::size_t end = std::min(order.size(), start + b);
    train_step(state, data, config, std::span<const std::size_t>(order.data() + start, end - start), stage, schedule,
               hooks);
  }
  ++state.epochs_done;
  if (hooks.on_epoch) hooks.on_epoch(state, stage);
}

}  // namespace

void train_stage1(TrainState& state, const Dataset& data, const RunConfig& config, const TrainHooks& hooks) {
  config.validate();
  while (state.epochs_done < config.stage1_epochs) run_epoch(state, data, config, 1, hooks);
}

std::vector<InstanceSet> build_instance_cache(const TrainState& state, const Dataset& data, const RunConfig& config) {
  const auto cc = config.cluster_config();
  std::vector<InstanceSet> cache;
  cache.reserve(data.train.size());
  for (const auto& ps : data.train) {
    const auto fwd = run_forward(state.model, ps);
    const Matrix point_desc = interpolate_to_points(ps.grid, fwd.descriptors);
    cache.push_back(cluster_instances(ps.scene, point_desc, cc, ps.grid.point_to_voxel));
  }
  return cache;
}

void train_stage2(TrainState& state, const Dataset& data, const RunConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (state.epochs_done < config.stage1_epochs) {
    throw ArgumentError("stage 2 requires a completed stage 1 (" + std::to_string(state.epochs_done) + " of " +
                        std::to_string(config.stage1_epochs) + " epochs done)");
  }
  const bool need_cache = heads_active(config);
  while (state.epochs_done < config.total_epochs()) {
    const int stage2_epoch = state.epochs_done - config.stage1_epochs;
    const bool recluster = config.recluster_every > 0 && stage2_epoch > 0 && stage2_epoch % config.recluster_every == 0;
    if (need_cache && (!state.cache_built || recluster)) {
      state.cache = build_instance_cache(state, data, config);
      state.cache_built = true;
    }
    run_epoch(state, data, config, 2, hooks);
  }
}

std::vector<int> infer_labels(const Model& model, const PreparedScene& scene) {
  const auto fwd = run_forward(model, scene);
  const auto voxel_pred = argmax_rows(fwd.logits);
  std::vector<int> out(scene.scene.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = voxel_pred[scene.grid.point_to_voxel[i]];
  return out;
}

namespace {

void merge_acc(AccSegReport& into, const AccSegReport& part) {
  if (into.per_class.empty()) {
    into = part;
    return;
  }
  for (std::size_t c = 0; c < into.per_class.size(); ++c) {
    into.per_class[c].correct += part.per_class[c].correct;
    into.per_class[c].total += part.per_class[c].total;
  }
}

void finalize_acc(AccSegReport& r) {
  double s = 0.0;
  int counted = 0;
  for (auto& row : r.per_class) {
    row.accuracy = row.total > 0 ? static_cast<double>(row.correct) / static_cast<double>(row.total) : 0.0;
    if (row.total > 0) {
      s += row.accuracy;
      ++counted;
    }
  }
  r.mean = counted > 0 ? s / counted : 0.0;
}

}  // namespace

EvalReport evaluate(const Model& model, const std::vector<PreparedScene>& scenes, const RunConfig& config,
                    const SceneSpec& spec, const std::string& split) {
  if (scenes.empty()) throw DataError("split '" + split + "' is empty");
  const int nc = model.config.backbone.num_classes;
  EvalReport report;
  report.split = split;
  report.confusion = ConfusionMatrix(nc);
  const auto cc = config.cluster_config();
  double ari_sum = 0.0;
  int ari_count = 0;
  for (const auto& ps : scenes) {
    const auto fwd = run_forward(model, ps);
    const auto voxel_pred = argmax_rows(fwd.logits);
    std::vector<int> pred(ps.scene.size());
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = voxel_pred[ps.grid.point_to_voxel[i]];
    report.confusion.merge(ConfusionMatrix::from_labels(ps.point_labels, pred, nc));

    const auto objects = gt_objects(ps.scene.labels);
    merge_acc(report.acc_05, acc_seg(pred, objects, 0.5, nc, "gt"));
    merge_acc(report.acc_08, acc_seg(pred, objects, 0.8, nc, "gt"));

    const Matrix point_desc = interpolate_to_points(ps.grid, fwd.descriptors);
    const auto clusters = cluster_instances(ps.scene, point_desc, cc, ps.grid.point_to_voxel);
    std::vector<ScoredObject> clustered;
    for (const auto& inst : clusters.instances) clustered.push_back({inst.class_id, inst.point_indices});
    merge_acc(report.acc_05_clustered, acc_seg(pred, clustered, 0.5, nc, "clustered"));
    merge_acc(report.acc_08_clustered, acc_seg(pred, clustered, 0.8, nc, "clustered"));

    if (!objects.empty()) {
      std::vector<int> gt_inst(ps.scene.size(), -1);
      for (std::size_t i = 0; i < gt_inst.size(); ++i) {
        const auto& l = ps.scene.labels.labels[i];
        if (l.instance_id != 0) gt_inst[i] = l.instance_id;
      }
      ari_sum += adjusted_rand_index(gt_inst, clusters.assignment);
      ++ari_count;
    }
  }
  for (auto* r : {&report.acc_05, &report.acc_08, &report.acc_05_clustered, &report.acc_08_clustered}) finalize_acc(*r);
  report.miou = miou(report.confusion);
  report.mean_ari = ari_count > 0 ? ari_sum / ari_count : 0.0;
  for (int c = 0; c < nc; ++c) {
    ClassMetrics m;
    m.class_id = c;
    const auto* entry = spec.find_class(static_cast<std::uint16_t>(c));
    m.name = entry ? entry->name : "class" + std::to_string(c);
    m.iou = iou(report.confusion, c);
    m.acc_05 = report.acc_05.per_class[static_cast<std::size_t>(c)];
    m.acc_08 = report.acc_08.per_class[static_cast<std::size_t>(c)];
    report.per_class.push_back(std::move(m));
  }
  return report;
}

void write_metrics_csv(const EvalReport& r, std::ostream& out) {
  out << std::setprecision(17);
  out << "split,class_id,class_name,iou,iou_present,objects,acc_seg_t0.5,acc_seg_t0.8\n";
  for (const auto& m : r.per_class) {
    out << r.split << "," << m.class_id << "," << m.name << "," << m.iou.value << "," << (m.iou.present ? 1 : 0) << ","
        << m.acc_05.total << ",";
    if (m.acc_05.total > 0) {
      out << m.acc_05.accuracy << "," << m.acc_08.accuracy << "\n";
    } else {
      out << ",\n";
    }
  }
  out << r.split << ",mean,all," << r.miou << ",1,," << r.acc_05.mean << "," << r.acc_08.mean << "\n";
  out << r.split << ",clustered_mean,all,,,," << r.acc_05_clustered.mean << "," << r.acc_08_clustered.mean << "\n";
  out << r.split << ",ari,all," << r.mean_ari << ",,,,\n";
}

void write_metrics_table(const EvalReport& r, std::ostream& out) {
  out << "split: " << r.split << "\n";
  out << std::left << std::setw(14) << "class" << std::right << std::setw(10) << "IoU" << std::setw(10) << "objects"
      << std::setw(12) << "Acc@0.5" << std::setw(12) << "Acc@0.8" << "\n";
  out << std::fixed << std::setprecision(4);
  for (const auto& m : r.per_class) {
    out << std::left << std::setw(14) << m.name << std::right << std::setw(10);
    if (m.iou.present) {
      out << m.iou.value;
    } else {
      out << "absent";
    }
    out << std::setw(10) << m.acc_05.total;
    if (m.acc_05.total > 0) {
      out << std::setw(12) << m.acc_05.accuracy << std::setw(12) << m.acc_08.accuracy;
    } else {
      out << std::setw(12) << "-" << std::setw(12) << "-";
    }
    out << "\n";
  }
  out << "mIoU " << r.miou << "   mean Acc_seg@0.5 " << r.acc_05.mean << "  @0.8 " << r.acc_08.mean << "\n";
  out << "clustered objects: Acc_seg@0.5 " << r.acc_05_clustered.mean << "  @0.8 " << r.acc_08_clustered.mean
      << "   clustering ARI " << r.mean_ari << "\n";
  out.unsetf(std::ios::fixed);
}

void write_step_log_header(std::ostream& out) { out << "step,epoch,stage,lr,loss,loss_sem,loss_cls,loss_recon\n"; }

void write_step_log(const StepLog& log, std::ostream& out) {
  out << std::setprecision(17) << log.step << "," << log.epoch << "," << log.stage << "," << log.lr << "," << log.total
      << "," << log.semantic << ",";
  if (!std::isnan(log.classification)) out << log.classification;
  out << ",";
  if (!std::isnan(log.reconstruction)) out << log.reconstruction;
  out << "\n";
}

std::vector<AblationRow> run_ablation(const Dataset& data, const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                                      std::ostream* progress) {
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : seeds) {
    RunConfig cfg = base;
    cfg.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    TrainState stage1 = TrainState::initialize(cfg);
    train_stage1(stage1, data, cfg);

    auto variant = [&](bool cls, bool recon, const TrainState& from) {
      RunConfig v = cfg;
      v.use_cls_head = cls;
      v.use_recon_head = recon;
      TrainState s = from;
      train_stage2(s, data, v);
      return evaluate(s.model, data.val, v, data.spec, "val").miou;
    };
    AblationRow row;
    row.seed = seed;
    row.baseline = variant(false, false, stage1);
    TrainState cached = stage1;
    cached.cache = build_instance_cache(stage1, data, cfg);
    cached.cache_built = true;
    row.cls_only = variant(true, false, cached);
    row.recon_only = variant(false, true, cached);
    row.full = variant(true, true, cached);
    rows.push_back(row);
    if (progress) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      *progress << std::setprecision(6) << "seed " << seed << ": baseline " << row.baseline << "  cls " << row.cls_only
                << "  recon " << row.recon_only << "  full " << row.full << "  (" << secs << " s)\n";
    }
  }
  return rows;
}

TrainOutcome run_training(const RunConfig& config, bool stage1_only, std::ostream* progress, const TrainState* resume) {
  RunConfig cfg = config;
  if (stage1_only) {
    // same epoch budget and schedule, heads never activated
    cfg.stage1_epochs = config.total_epochs();
    cfg.stage2_epochs = 0;
  }
  cfg.validate();
  std::filesystem::create_directories(cfg.output_dir);
  {
    std::ofstream out(cfg.output_dir / "config.txt", std::ios::trunc);
    out << cfg.serialize();
  }
  const Dataset data = load_dataset(cfg);
  TrainState state = resume ? *resume : TrainState::initialize(cfg);

  std::ofstream log(cfg.output_dir / "loss_log.csv", resume ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write loss log in " + cfg.output_dir.string());
  if (!resume) write_step_log_header(log);

  TrainHooks hooks;
  hooks.on_step = [&](const StepLog& s) { write_step_log(s, log); };
  hooks.on_epoch = [&](const TrainState& s, int stage) {
    log.flush();
    save_checkpoint(cfg.output_dir / "checkpoint.bin", s);
    if (progress) {
      *progress << "epoch " << s.epochs_done << "/" << cfg.total_epochs() << " (stage " << stage << ") done\n";
    }
  };

  train_stage1(state, data, cfg, hooks);
  if (state.epochs_done == cfg.stage1_epochs) save_checkpoint(cfg.output_dir / "checkpoint_stage1.bin", state);
  train_stage2(state, data, cfg, hooks);
  save_checkpoint(cfg.output_dir / "checkpoint.bin", state);

  TrainOutcome outcome;
  outcome.state = std::move(state);
  if (!data.val.empty()) {
    outcome.val = evaluate(outcome.state.model, data.val, cfg, data.spec, "val");
    std::ofstream csv(cfg.output_dir / "metrics.csv", std::ios::trunc);
    write_metrics_csv(outcome.val, csv);
    std::ofstream txt(cfg.output_dir / "metrics.txt", std::ios::trunc);
    write_metrics_table(outcome.val, txt);
  }
  return outcome;
}

void tune_allocator() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace iaseg

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "iaseg/errors.hpp"
#include "iaseg/trainer.hpp"

using namespace iaseg;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
  auto c = RunConfig::from_key_values(KeyValueFile::parse(
      "train_scenes = 3\nval_scenes = 2\nstage1_epochs = 1\nstage2_epochs = 1\n"
      "hidden_dims = 16 16\ndescriptor_dim = 12\ncls_hidden = 16\nrecon_hidden = 16\nlatent_dim = 16\n"
      "recon_points = 16\nseed = 5\n"));
  return c;
}

const Dataset& tiny_data() {
  static const Dataset d = load_dataset(tiny_config());
  return d;
}

struct Recorder {
  std::vector<StepLog> steps;
  TrainHooks hooks() {
    TrainHooks h;
    h.on_step = [this](const StepLog& s) { steps.push_back(s); };
    return h;
  }
};

bool same_log(const StepLog& a, const StepLog& b) {
  auto eq = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
  return a.step == b.step && a.epoch == b.epoch && a.stage == b.stage && a.lr == b.lr && a.total == b.total &&
         a.semantic == b.semantic && eq(a.classification, b.classification) && eq(a.reconstruction, b.reconstruction);
}

TrainState full_run(const RunConfig& c, Recorder* rec = nullptr) {
  auto s = TrainState::initialize(c);
  Recorder local;
  Recorder& r = rec ? *rec : local;
  train_stage1(s, tiny_data(), c, r.hooks());
  train_stage2(s, tiny_data(), c, r.hooks());
  return s;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("iaseg_trainer_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("config keys parse and serialize back") {
  auto c = RunConfig::from_key_values(KeyValueFile::parse(
      "batch_size = 4\nlambda_cls = 0.5\nradius = 1 2.5\nradius = 7 0.25\ninstance_classes = 1 7\n"
      "use_recon_head = false\nnum_classes = 8\n"));
  CHECK(c.batch_size == 4);
  CHECK(c.lambda_cls == 0.5);
  CHECK(c.radii.radii.at(1) == 2.5);
  CHECK(c.radii.radii.at(7) == 0.25);
  CHECK(c.instance_classes == std::vector<std::uint16_t>{1, 7});
  CHECK_FALSE(c.use_recon_head);
  const auto text = c.serialize();
  CHECK(RunConfig::from_key_values(KeyValueFile::parse(text)).serialize() == text);

  CHECK_THROWS_AS(RunConfig::from_key_values(KeyValueFile::parse("batch_sise = 2\n")), ArgumentError);
  CHECK_THROWS_AS(RunConfig::from_key_values(KeyValueFile::parse("batch_size = 0\n")), ArgumentError);
  CHECK_THROWS_AS(RunConfig::from_key_values(KeyValueFile::parse("lambda_recon = -1\n")), ArgumentError);
  CHECK_THROWS_AS(RunConfig::from_key_values(KeyValueFile::parse("instance_classes = 6\n")), ArgumentError);
  CHECK_THROWS_AS(RunConfig::from_key_values(KeyValueFile::parse("batch_size = two\n")), ArgumentError);
}

TEST_CASE("schedule covers both stages") {
  RunConfig c;
  c.batch_size = 2;
  CHECK(steps_per_epoch(c, 5) == 3);
  CHECK(steps_per_epoch(c, 4) == 2);
  c.stage1_epochs = 2;
  c.stage2_epochs = 3;
  CHECK(schedule_for(c, 5).total_steps == 15);
}

TEST_CASE("datasets are reproducible and splits differ") {
  const auto a = load_dataset(tiny_config());
  REQUIRE(a.train.size() == 3);
  REQUIRE(a.val.size() == 2);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.train[i].scene.cloud.points == tiny_data().train[i].scene.cloud.points);
    CHECK(a.train[i].f0 == tiny_data().train[i].f0);
  }
  CHECK(scene_seed(2024, false, 0) != scene_seed(2024, true, 0));
  CHECK(scene_seed(2024, false, 0) != scene_seed(2024, false, 1));
  auto empty = tiny_config();
  empty.train_scenes = 0;
  CHECK_THROWS_AS(load_dataset(empty), DataError);
}

TEST_CASE("training is deterministic for a fixed seed") {
  Recorder r1, r2;
  const auto a = full_run(tiny_config(), &r1);
  const auto b = full_run(tiny_config(), &r2);
  CHECK(encode_checkpoint(a) == encode_checkpoint(b));
  REQUIRE(r1.steps.size() == r2.steps.size());
  for (std::size_t i = 0; i < r1.steps.size(); ++i) CHECK(same_log(r1.steps[i], r2.steps[i]));
  CHECK(r1.steps.size() == 4);
  CHECK(r1.steps.back().stage == 2);
  CHECK(std::isfinite(r1.steps.back().classification));

  auto other = tiny_config();
  other.seed = 6;
  CHECK_FALSE(encode_checkpoint(full_run(other)) == encode_checkpoint(a));
}

TEST_CASE("zero loss weights reproduce semantic-only training") {
  auto zero = tiny_config();
  zero.lambda_cls = 0.0;
  zero.lambda_recon = 0.0;
  auto plain = tiny_config();
  plain.stage1_epochs = 2;
  plain.stage2_epochs = 0;
  Recorder rz, rp;
  const auto a = full_run(zero, &rz);
  const auto b = full_run(plain, &rp);
  CHECK(a.model.params == b.model.params);
  CHECK(a.optimizer == b.optimizer);
  REQUIRE(rz.steps.size() == rp.steps.size());
  for (std::size_t i = 0; i < rz.steps.size(); ++i) {
    CHECK(rz.steps[i].total == rp.steps[i].total);
    CHECK(rz.steps[i].lr == rp.steps[i].lr);
  }
}

TEST_CASE("resuming from a checkpoint matches an uninterrupted run") {
  auto c = tiny_config();
  c.stage2_epochs = 2;
  const auto straight = full_run(c);

  auto s = TrainState::initialize(c);
  train_stage1(s, tiny_data(), c);
  auto resumed = decode_checkpoint(encode_checkpoint(s));
  train_stage2(resumed, tiny_data(), c);
  CHECK(encode_checkpoint(resumed) == encode_checkpoint(straight));

  // Snapshot inside stage 2 after its first epoch.
  std::vector<std::uint8_t> mid;
  auto t = TrainState::initialize(c);
  train_stage1(t, tiny_data(), c);
  TrainHooks once;
  once.on_epoch = [&](const TrainState& st, int stage) {
    if (stage == 2 && mid.empty()) mid = encode_checkpoint(st);
  };
  train_stage2(t, tiny_data(), c, once);
  CHECK(encode_checkpoint(t) == encode_checkpoint(straight));
  REQUIRE_FALSE(mid.empty());
  auto late = decode_checkpoint(mid);
  CHECK(late.epochs_done == c.stage1_epochs + 1);
  train_stage2(late, tiny_data(), c);
  CHECK(encode_checkpoint(late) == encode_checkpoint(straight));
}

TEST_CASE("checkpoints round trip bitwise and reject damage") {
  const auto s = full_run(tiny_config());
  const auto bytes = encode_checkpoint(s);
  const auto back = decode_checkpoint(bytes);
  CHECK(back == s);
  CHECK(encode_checkpoint(back) == bytes);

  const auto dir = scratch("ckpt");
  save_checkpoint(dir / "a.bin", s);
  CHECK(encode_checkpoint(load_checkpoint(dir / "a.bin")) == bytes);

  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(decode_checkpoint(std::span(bytes.data(), cut)), MalformedFile);
  }
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), MalformedFile);
  auto longer = bytes;
  longer.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(longer), MalformedFile);
  CHECK_THROWS(load_checkpoint(dir / "missing.bin"));
}

TEST_CASE("stage order is enforced") {
  auto c = tiny_config();
  auto s = TrainState::initialize(c);
  CHECK_THROWS_AS(train_stage2(s, tiny_data(), c), ArgumentError);

  auto no_stage1 = tiny_config();
  no_stage1.stage1_epochs = 0;
  auto t = TrainState::initialize(no_stage1);
  train_stage1(t, tiny_data(), no_stage1);
  CHECK(t.step == 0);
  train_stage2(t, tiny_data(), no_stage1);
  CHECK(t.epochs_done == 1);
  CHECK(t.cache_built);
}

TEST_CASE("instance cache covers every training scene") {
  const auto s = full_run(tiny_config());
  REQUIRE(s.cache.size() == tiny_data().train.size());
  for (std::size_t i = 0; i < s.cache.size(); ++i) {
    CHECK(s.cache[i].assignment.size() == tiny_data().train[i].scene.cloud.size());
    for (const auto& inst : s.cache[i].instances) CHECK(inst.point_indices.size() >= 5);
  }
}

TEST_CASE("evaluation and inference") {
  const auto c = tiny_config();
  const auto s = full_run(c);
  const auto report = evaluate(s.model, tiny_data().val, c, tiny_data().spec, "val");
  CHECK(report.miou >= 0.0);
  CHECK(report.miou <= 1.0);
  CHECK(report.mean_ari <= 1.0);
  CHECK(report.per_class.size() == static_cast<std::size_t>(tiny_data().spec.num_classes()));
  CHECK_THROWS_AS(evaluate(s.model, {}, c, tiny_data().spec, "val"), DataError);

  const auto labels = infer_labels(s.model, tiny_data().val[0]);
  CHECK(labels.size() == tiny_data().val[0].scene.cloud.size());
  for (int y : labels) {
    CHECK(y >= 0);
    CHECK(y < tiny_data().spec.num_classes());
  }
  std::ostringstream csv;
  write_metrics_csv(report, csv);
  CHECK(csv.str().find("val,mean,all,") != std::string::npos);
}

TEST_CASE("train pipeline writes its artifacts") {
  auto c = tiny_config();
  c.output_dir = scratch("run");
  const auto out = run_training(c, false);
  for (const char* f : {"config.txt", "loss_log.csv", "checkpoint.bin", "checkpoint_stage1.bin", "metrics.csv", "metrics.txt"}) {
    CHECK_MESSAGE(fs::exists(c.output_dir / f), f);
  }
  std::ifstream log(c.output_dir / "loss_log.csv");
  int lines = 0;
  for (std::string line; std::getline(log, line);) ++lines;
  CHECK(lines == 1 + 4);
  CHECK(encode_checkpoint(load_checkpoint(c.output_dir / "checkpoint.bin")) == encode_checkpoint(out.state));
  CHECK(RunConfig::load(c.output_dir / "config.txt").serialize() == c.serialize());

  auto again = c;
  again.output_dir = scratch("run2");
  run_training(again, false);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(c.output_dir / "metrics.csv") == slurp(again.output_dir / "metrics.csv"));
  CHECK(slurp(c.output_dir / "checkpoint.bin") == slurp(again.output_dir / "checkpoint.bin"));
}

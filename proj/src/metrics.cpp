#include "iaseg/metrics.hpp"

#include <algorithm>
#include <map>

#include "iaseg/errors.hpp"

namespace iaseg {

ConfusionMatrix::ConfusionMatrix(int num_classes) : n_(num_classes) {
  if (num_classes < 0) throw ArgumentError("ConfusionMatrix: negative class count");
  counts_.assign(static_cast<std::size_t>(n_) * static_cast<std::size_t>(n_), 0);
}

ConfusionMatrix ConfusionMatrix::from_labels(std::span<const int> gt, std::span<const int> pred, int num_classes) {
  if (gt.size() != pred.size()) throw ArgumentError("confusion: label arrays differ in length");
  ConfusionMatrix m(num_classes);
  for (std::size_t i = 0; i < gt.size(); ++i) m.add(gt[i], pred[i]);
  return m;
}

void ConfusionMatrix::add(int gt, int pred, std::uint64_t count) {
  if (gt < 0 || gt >= n_ || pred < 0 || pred >= n_) throw ArgumentError("confusion: label outside the class table");
  counts_[static_cast<std::size_t>(gt * n_ + pred)] += count;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw ArgumentError("confusion: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::true_positives(int c) const { return at(c, c); }

std::uint64_t ConfusionMatrix::false_positives(int c) const {
  std::uint64_t s = 0;
  for (int g = 0; g < n_; ++g) s += at(g, c);
  return s - at(c, c);
}

std::uint64_t ConfusionMatrix::false_negatives(int c) const {
  std::uint64_t s = 0;
  for (int p = 0; p < n_; ++p) s += at(c, p);
  return s - at(c, c);
}

IoU iou(const ConfusionMatrix& conf, int class_id) {
  if (class_id < 0 || class_id >= conf.num_classes()) throw ArgumentError("iou: class out of range");
  const auto tp = conf.true_positives(class_id);
  const auto denom = tp + conf.false_positives(class_id) + conf.false_negatives(class_id);
  if (denom == 0) return {};
  return {static_cast<double>(tp) / static_cast<double>(denom), true};
}

double miou(const ConfusionMatrix& conf) {
  double s = 0.0;
  int present = 0;
  for (int c = 0; c < conf.num_classes(); ++c) {
    const IoU v = iou(conf, c);
    if (!v.present) continue;
    s += v.value;
    ++present;
  }
  if (present == 0) throw UndefinedMetric("mIoU undefined: every class is absent");
  return s / present;
}

AccSegReport acc_seg(std::span<const int> pred_labels, std::span<const ScoredObject> objects, double threshold,
                     int num_classes, std::string source) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ArgumentError("acc_seg: threshold must be in (0, 1]");
  AccSegReport report;
  report.threshold = threshold;
  report.source = std::move(source);
  report.per_class.resize(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) report.per_class[static_cast<std::size_t>(c)].class_id = c;
  for (const auto& obj : objects) {
    if (obj.class_id < 0 || obj.class_id >= num_classes) throw ArgumentError("acc_seg: object class out of range");
    if (obj.points.empty()) continue;
    std::uint64_t hit = 0;
    for (std::uint32_t i : obj.points) {
      if (i >= pred_labels.size()) throw ArgumentError("acc_seg: point index out of range");
      if (pred_labels[i] == obj.class_id) ++hit;
    }
    auto& row = report.per_class[static_cast<std::size_t>(obj.class_id)];
    ++row.total;
    if (static_cast<double>(hit) / static_cast<double>(obj.points.size()) >= threshold) ++row.correct;
  }
  double s = 0.0;
  int counted = 0;
  for (auto& row : report.per_class) {
    if (row.total == 0) continue;
    row.accuracy = static_cast<double>(row.correct) / static_cast<double>(row.total);
    s += row.accuracy;
    ++counted;
  }
  report.mean = counted > 0 ? s / counted : 0.0;
  return report;
}

std::vector<ScoredObject> gt_objects(const LabelArray& labels) {
  std::map<std::uint16_t, std::vector<std::uint32_t>> groups;
  for (std::uint32_t i = 0; i < labels.size(); ++i) {
    const auto inst = labels.labels[i].instance_id;
    if (inst != 0) groups[inst].push_back(i);
  }
  std::vector<ScoredObject> out;
  for (auto& [id, pts] : groups) {
    std::map<int, std::size_t> votes;
    for (std::uint32_t i : pts) ++votes[labels.labels[i].semantic_id];
    int best = votes.begin()->first;
    for (const auto& [c, v] : votes) {
      if (v > votes[best]) best = c;
    }
    out.push_back({best, std::move(pts)});
  }
  return out;
}

namespace {

double choose2(double n) { return n * (n - 1.0) / 2.0; }

}  // namespace

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw ArgumentError("adjusted_rand_index: length mismatch");
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> rows, cols;
  double n = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < 0 || b[i] < 0) continue;
    joint[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
    n += 1.0;
  }
  if (n < 2.0) return 1.0;
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [k, v] : joint) index += choose2(v);
  for (const auto& [k, v] : rows) sum_a += choose2(v);
  for (const auto& [k, v] : cols) sum_b += choose2(v);
  const double expected = sum_a * sum_b / choose2(n);
  const double max_index = 0.5 * (sum_a + sum_b);
  // Both partitions trivial and identical (all-together or all-singletons).
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

}  // namespace iaseg

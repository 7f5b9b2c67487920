#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "iaseg/scene_io.hpp"

namespace iaseg {

// Entry (i, j) counts points with ground-truth class i predicted as class j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = 0);

  static ConfusionMatrix from_labels(std::span<const int> gt, std::span<const int> pred, int num_classes);

  void add(int gt, int pred, std::uint64_t count = 1);
  void merge(const ConfusionMatrix& other);

  int num_classes() const { return n_; }
  std::uint64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt * n_ + pred)]; }
  std::uint64_t total() const;

  std::uint64_t true_positives(int c) const;
  std::uint64_t false_positives(int c) const;
  std::uint64_t false_negatives(int c) const;

 private:
  int n_ = 0;
  std::vector<std::uint64_t> counts_;
};

struct IoU {
  double value = 0.0;
  bool present = false;  // false when TP + FP + FN == 0
};

/// TP / (TP + FP + FN). Throws ArgumentError for an out-of-range class.
IoU iou(const ConfusionMatrix& conf, int class_id);

/// Unweighted mean IoU over present classes. Throws UndefinedMetric when no
/// class is present.
double miou(const ConfusionMatrix& conf);

// An object to be scored: its class and member point indices.
struct ScoredObject {
  int class_id = 0;
  std::vector<std::uint32_t> points;
};

struct AccSegClass {
  int class_id = 0;
  std::uint64_t correct = 0;
  std::uint64_t total = 0;
  double accuracy = 0.0;  // meaningful only when total > 0
};

struct AccSegReport {
  double threshold = 0.5;
  std::string source;  // "gt" or "clustered"
  std::vector<AccSegClass> per_class;
  double mean = 0.0;  // over classes with total > 0
};

/// An object of class c with m points is correct iff (#points predicted c) / m >= t.
/// Throws ArgumentError for t outside (0, 1].
AccSegReport acc_seg(std::span<const int> pred_labels, std::span<const ScoredObject> objects, double threshold,
                     int num_classes, std::string source = "gt");

/// Objects grouped by nonzero ground-truth instance id; class = majority semantic id.
std::vector<ScoredObject> gt_objects(const LabelArray& labels);

/// Adjusted Rand index between two labelings; entries < 0 mean unassigned and
/// such points are excluded. Throws ArgumentError on length mismatch.
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

}  // namespace iaseg

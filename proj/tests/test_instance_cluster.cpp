#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>

#include "iaseg/errors.hpp"
#include "iaseg/instance_cluster.hpp"
#include "iaseg/metrics.hpp"
#include "iaseg/model.hpp"
#include "test_support.hpp"

using namespace iaseg;
using iaseg::testing::random_matrix;

namespace {

// Plain O(n^2) flat-kernel mode seeking with the same stopping and merging
// rules, without the spatial hash.
std::vector<int> oracle_mean_shift(const Matrix& f, double h) {
  const Eigen::Index n = f.rows();
  Matrix modes(n, f.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    RowVector x = f.row(i);
    for (int it = 0; it < 100; ++it) {
      RowVector acc = RowVector::Zero(f.cols());
      int count = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if ((f.row(j) - x).squaredNorm() <= h * h) {
          acc += f.row(j);
          ++count;
        }
      }
      acc /= count;
      const double shift = (acc - x).norm();
      x = acc;
      if (shift < 1e-4 * h) break;
    }
    modes.row(i) = x;
  }
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < n; ++i) {
    bool merged = false;
    for (auto k : keep) merged = merged || (modes.row(i) - modes.row(k)).norm() <= h / 2;
    if (!merged) keep.push_back(i);
  }
  std::vector<int> out(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < keep.size(); ++k) {
      const double d = (modes.row(i) - modes.row(keep[k])).squaredNorm();
      if (d < best) {
        best = d;
        out[static_cast<std::size_t>(i)] = static_cast<int>(k);
      }
    }
  }
  return out;
}

Matrix blobs(Rng& rng, int per_blob, const std::vector<RowVector>& centers, double spread) {
  Matrix f(per_blob * static_cast<Eigen::Index>(centers.size()), centers.front().size());
  for (std::size_t c = 0; c < centers.size(); ++c) {
    for (int i = 0; i < per_blob; ++i) {
      const auto row = static_cast<Eigen::Index>(c) * per_blob + i;
      for (Eigen::Index k = 0; k < f.cols(); ++k) f(row, k) = centers[c](k) + rng.uniform(-spread, spread);
    }
  }
  return f;
}

// Point-level ARI over instance points; predicted-unassigned points count as
// singletons so dropped points are penalized.
double instance_ari(const LabeledScene& scene, const InstanceSet& set) {
  std::vector<int> gt, pred;
  int next = 1 << 20;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (scene.labels.labels[i].instance_id == 0) continue;
    gt.push_back(scene.labels.labels[i].instance_id);
    pred.push_back(set.assignment[i] >= 0 ? set.assignment[i] : next++);
  }
  return adjusted_rand_index(gt, pred);
}

}  // namespace

TEST_CASE("lambda on a 3-point neighborhood with descriptors 0 1 2 is 1.5") {
  const std::vector<SpatialHash::Position> pos{{0, 0, 0}, {0.1, 0, 0}, {0.2, 0, 0}};
  Matrix d(3, 1);
  d << 0, 1, 2;
  const std::vector<int> labels{1, 1, 1};
  const auto lambda = compute_lambda(pos, d, labels, RadiusTable::defaults());
  for (double l : lambda) CHECK(l == doctest::Approx(1.5));
}

TEST_CASE("lambda clamps degenerate neighborhoods") {
  const std::vector<SpatialHash::Position> pos{{0, 0, 0}, {0.1, 0, 0}, {5, 0, 0}, {9, 9, 9}};
  Matrix d(4, 2);
  d << 1, 2, 1, 2, 3, 4, 7, 7;
  const std::vector<int> labels{1, 1, 1, 0};
  const auto lambda = compute_lambda(pos, d, labels, RadiusTable::defaults());
  CHECK(lambda[0] == kLambdaMax);  // identical neighbors
  CHECK(lambda[2] == kLambdaMax);  // alone within r
  CHECK(lambda[3] == kLambdaMin);  // class without a radius
  Matrix wide(2, 1);
  wide << -1e4, 1e4;
  const auto tiny = compute_lambda({{0, 0, 0}, {0.1, 0, 0}}, wide, std::vector<int>{1, 1}, RadiusTable::defaults());
  CHECK(tiny[0] == kLambdaMin);
}

TEST_CASE("lambda equals a brute-force variance over same-class neighbors") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 60;
    std::vector<SpatialHash::Position> pos(n);
    for (auto& p : pos) p = {rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 1)};
    const Matrix d = random_matrix(rng, static_cast<Eigen::Index>(n), 4);
    std::vector<int> labels(n);
    for (auto& l : labels) l = 1 + static_cast<int>(rng.below(3));
    const RadiusTable radii = RadiusTable::defaults();
    const auto lambda = compute_lambda(pos, d, labels, radii);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = radii.at(static_cast<std::uint16_t>(labels[i]));
      std::vector<std::size_t> nb;
      for (std::size_t j = 0; j < n; ++j) {
        const double dx = pos[i][0] - pos[j][0], dy = pos[i][1] - pos[j][1], dz = pos[i][2] - pos[j][2];
        if (labels[j] == labels[i] && dx * dx + dy * dy + dz * dz <= r * r) nb.push_back(j);
      }
      double sigma = 0.0;
      for (Eigen::Index k = 0; k < 4; ++k) {
        double m = 0.0, v = 0.0;
        for (auto j : nb) m += d(static_cast<Eigen::Index>(j), k);
        m /= static_cast<double>(nb.size());
        for (auto j : nb) v += (d(static_cast<Eigen::Index>(j), k) - m) * (d(static_cast<Eigen::Index>(j), k) - m);
        sigma += v / static_cast<double>(nb.size());
      }
      sigma /= 4.0;
      const double want = sigma > 0 ? std::clamp(1.0 / sigma, kLambdaMin, kLambdaMax) : kLambdaMax;
      CHECK(lambda[i] == doctest::Approx(want).epsilon(1e-10));
    }
  }
}

TEST_CASE("cluster features scale the unit descriptor by relative confidence") {
  const std::vector<SpatialHash::Position> pos{{1, 2, 3}, {4, 5, 6}};
  Matrix d(2, 2);
  d << 3, 4, 0, 2;
  const std::vector<double> lambda{2.0, 1.0};
  const Matrix f = cluster_features(pos, d, lambda, 0.5);
  CHECK(f.cols() == 5);
  CHECK(f(0, 0) == 1);
  CHECK(f(1, 2) == 6);
  CHECK(f(0, 3) == doctest::Approx(0.5 * 0.6));
  CHECK(f(0, 4) == doctest::Approx(0.5 * 0.8));
  CHECK(f(1, 3) == 0.0);
  CHECK(f(1, 4) == doctest::Approx(0.25));
}

TEST_CASE("mean shift trivial cases") {
  Matrix same = Matrix::Constant(10, 4, 2.5);
  auto r = mean_shift(same, 0.3);
  CHECK(r.num_clusters() == 1);
  CHECK(std::all_of(r.assignment.begin(), r.assignment.end(), [](int a) { return a == 0; }));
  auto one = mean_shift(Matrix::Constant(1, 3, 1.0), 1.0);
  CHECK(one.num_clusters() == 1);
  CHECK(one.assignment == std::vector<int>{0});
  CHECK_THROWS_AS(mean_shift(same, 0.0), ArgumentError);
  CHECK_THROWS_AS(mean_shift(Matrix(0, 3), 1.0), ArgumentError);
}

TEST_CASE("two separated blobs give exactly two clusters") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const double h = rng.uniform(0.2, 2.0);
    RowVector a = RowVector::Zero(5), b = RowVector::Zero(5);
    b(0) = 10 * h;
    const Matrix f = blobs(rng, 50, {a, b}, h / 8.1);
    const auto r = mean_shift(f, h);
    CHECK(r.num_clusters() == 2);
    for (int i = 0; i < 100; ++i) CHECK(r.assignment[static_cast<std::size_t>(i)] == (i < 50 ? 0 : 1));
  }
}

TEST_CASE("mean shift equals the brute-force oracle and ignores row order") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<RowVector> centers;
    for (int c = 0; c < 4; ++c) centers.push_back(random_matrix(rng, 1, 6, -3, 3));
    const Matrix f = blobs(rng, 15, centers, 0.4);
    const double h = 0.8;
    const auto r = mean_shift(f, h);
    const auto oracle = oracle_mean_shift(f, h);
    CHECK(adjusted_rand_index(r.assignment, oracle) == 1.0);
    CHECK(r.num_clusters() == static_cast<std::size_t>(*std::max_element(oracle.begin(), oracle.end()) + 1));

    std::vector<Eigen::Index> perm(static_cast<std::size_t>(f.rows()));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    rng.shuffle(std::span(perm));
    Matrix g(f.rows(), f.cols());
    for (Eigen::Index i = 0; i < f.rows(); ++i) g.row(i) = f.row(perm[static_cast<std::size_t>(i)]);
    const auto rp = mean_shift(g, h);
    std::vector<int> back(r.assignment.size());
    for (std::size_t i = 0; i < perm.size(); ++i) back[static_cast<std::size_t>(perm[i])] = rp.assignment[i];
    CHECK(adjusted_rand_index(r.assignment, back) == 1.0);

    Matrix moved = f;
    moved.col(0).array() += 7.25;
    moved.col(2).array() -= 3.5;
    CHECK(adjusted_rand_index(r.assignment, mean_shift(moved, h).assignment) == 1.0);
  }
}

TEST_CASE("cluster_instances partitions by class and recovers generated objects") {
  const auto spec = SceneSpec::default_spec();
  const ModelConfig mc;
  const Model model(mc, 5);
  const ClusterConfig cc;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto ps = prepare_scene(generate_scene(spec, seed), mc);
    const Matrix desc = interpolate_to_points(ps.grid, run_forward(model, ps).descriptors);
    const auto set = cluster_instances(ps.scene, desc, cc, ps.grid.point_to_voxel);
    CHECK(instance_ari(ps.scene, set) >= 0.95);
    std::vector<int> owner(ps.scene.size(), -1);
    for (std::size_t k = 0; k < set.size(); ++k) {
      const auto& inst = set.instances[k];
      CHECK(inst.point_indices.size() >= static_cast<std::size_t>(cc.min_points));
      std::set<std::uint32_t> voxels;
      for (auto i : inst.point_indices) {
        CHECK(owner[i] == -1);
        owner[i] = static_cast<int>(k);
        CHECK(ps.scene.labels.labels[i].semantic_id == inst.class_id);
        CHECK(set.assignment[i] == static_cast<int>(k));
        voxels.insert(ps.grid.point_to_voxel[i]);
      }
      CHECK(std::vector<std::uint32_t>(voxels.begin(), voxels.end()) == inst.voxel_indices);
    }
    for (std::size_t i = 0; i < ps.scene.size(); ++i) {
      if (ps.scene.labels.labels[i].semantic_id == 0) CHECK(set.assignment[i] == -1);
    }
  }
}

TEST_CASE("scenes without instance classes give an empty set") {
  LabeledScene s;
  for (int i = 0; i < 20; ++i) {
    s.cloud.points.push_back({0.1f * i, 0.0f, 0.0f, 0.0f});
    s.labels.labels.push_back({0, 0});
  }
  const auto set = cluster_instances(s, Matrix::Ones(20, 8), ClusterConfig{});
  CHECK(set.size() == 0);
  CHECK(set.assignment == std::vector<int>(20, -1));
  CHECK_THROWS_AS(cluster_instances(s, Matrix::Ones(19, 8), ClusterConfig{}), ArgumentError);
}

TEST_CASE("radius table validation") {
  RadiusTable t = RadiusTable::defaults();
  CHECK(t.at(1) == 1.0);
  CHECK(t.at(3) == 0.5);
  CHECK_THROWS_AS(t.at(0), ArgumentError);
  t.radii[2] = 0.0;
  CHECK_THROWS_AS(t.validate(), ArgumentError);
}

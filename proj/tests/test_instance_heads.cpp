#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "iaseg/errors.hpp"
#include "iaseg/instance_heads.hpp"
#include "iaseg/voxel_grid.hpp"
#include "test_support.hpp"

using namespace iaseg;
using iaseg::testing::grad_check;
using iaseg::testing::random_matrix;

namespace {

HeadsConfig small_heads() {
  HeadsConfig h;
  h.descriptor_dim = 6;
  h.num_classes = 3;
  h.cls_hidden = 7;
  h.recon_hidden = 5;
  h.latent_dim = 4;
  h.recon_points = 5;
  return h;
}

InstanceGroup random_group(Rng& rng, std::size_t m, std::uint32_t rows_available, int cls) {
  InstanceGroup g;
  std::vector<std::uint32_t> all(rows_available);
  std::iota(all.begin(), all.end(), 0u);
  rng.shuffle(std::span(all));
  g.voxel_indices.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(m));
  std::sort(g.voxel_indices.begin(), g.voxel_indices.end());
  g.voxel_centers = random_matrix(rng, static_cast<Eigen::Index>(m), 3, -1.0, 1.0);
  g.class_id = cls;
  return g;
}

double oracle_chamfer(const Matrix& a, const Matrix& b) {
  double sa = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      double d = 0.0;
      for (Eigen::Index c = 0; c < a.cols(); ++c) d += (a(i, c) - b(j, c)) * (a(i, c) - b(j, c));
      best = std::min(best, d);
    }
    sa += best;
  }
  double sb = 0.0;
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      double d = 0.0;
      for (Eigen::Index c = 0; c < a.cols(); ++c) d += (a(i, c) - b(j, c)) * (a(i, c) - b(j, c));
      best = std::min(best, d);
    }
    sb += best;
  }
  return sa / static_cast<double>(a.rows()) + sb / static_cast<double>(b.rows());
}

}  // namespace

TEST_CASE("classifier logits ignore row order and duplicates") {
  Rng rng(1);
  const auto cfg = small_heads();
  ad::ParameterSet p;
  const ClassificationHead head(cfg, p, rng);
  const Matrix f = random_matrix(rng, 9, cfg.descriptor_dim);
  ad::Tape t;
  const Matrix base = t.value(head.forward(t, p, t.constant(f)));
  CHECK(base.rows() == 1);
  CHECK(base.cols() == cfg.num_classes);
  Matrix shuffled = f.colwise().reverse();
  CHECK(t.value(head.forward(t, p, t.constant(shuffled))) == base);
  Matrix dup(10, f.cols());
  dup.topRows(9) = f;
  dup.row(9) = f.row(4);
  CHECK(t.value(head.forward(t, p, t.constant(dup))) == base);
  CHECK_THROWS_AS(head.forward(t, p, t.constant(Matrix(0, cfg.descriptor_dim))), ArgumentError);
}

TEST_CASE("non-maximal features get no gradient through the pool") {
  Rng rng(2);
  const auto cfg = small_heads();
  ad::ParameterSet p;
  const ClassificationHead head(cfg, p, rng);
  const auto in = p.add("features", random_matrix(rng, 6, cfg.descriptor_dim));
  ad::Tape t;
  ad::Var logits = head.forward(t, p, t.parameter(p, in));
  t.backward(t.mean(t.softmax_ce_rows(logits, {1})));
  auto g = p.zeros_like();
  t.accumulate_parameter_grads(g);
  const Matrix& f = p.value(in);
  for (Eigen::Index c = 0; c < f.cols(); ++c) {
    Eigen::Index arg = 0;
    f.col(c).maxCoeff(&arg);
    for (Eigen::Index r = 0; r < f.rows(); ++r) {
      if (r != arg) CHECK(g[in](r, c) == 0.0);
    }
  }
}

TEST_CASE("head gradients match finite differences") {
  Rng rng(3);
  const auto cfg = small_heads();
  for (int trial = 0; trial < 10; ++trial) {
    ad::ParameterSet p;
    const ClassificationHead cls(cfg, p, rng);
    const ReconstructionHead rec(cfg, p, rng);
    const auto desc = p.add("descriptors", random_matrix(rng, 20, cfg.descriptor_dim));
    std::vector<InstanceGroup> groups;
    for (int k = 0; k < 4; ++k) groups.push_back(random_group(rng, 3 + rng.below(6), 20, static_cast<int>(rng.below(3))));
    RadiusTable radii{{{0, 0.3}, {1, 0.3}, {2, 0.3}}};
    const Rng draws(rng.next_u64());
    const auto s = grad_check(p, [&](ad::Tape& t, const ad::ParameterSet& ps) {
      Rng r = draws;
      ad::Var d = t.parameter(ps, desc);
      ad::Var lc = classification_loss(t, ps, cls, d, groups, 0.5);
      ad::Var lg = reconstruction_loss(t, ps, rec, d, groups, radii, r);
      return total_loss(t, t.constant(Matrix::Zero(1, 1)), lc, lg, 1.0, 1.0);
    }, rng, 400);
    CHECK(s.failures == 0);
    CHECK(s.checked > 300);
  }
}

TEST_CASE("OHEM loss examples") {
  CHECK(ohem_loss(std::vector<double>{1.0, 3.0, 2.0, 0.5}, 0.5) == 2.5);
  CHECK(ohem_loss(std::vector<double>{1.0, 3.0, 2.0, 0.5}, 1.0) == doctest::Approx(6.5 / 4));
  CHECK(ohem_loss(std::vector<double>{0.7}, 0.01) == 0.7);
  CHECK(ohem_loss(std::vector<double>{}, 0.25) == 0.0);
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> l(1 + rng.below(30));
    for (auto& x : l) x = std::floor(rng.uniform(0, 5) * 4) / 4;  // many ties
    const double kf = rng.uniform(0.01, 1.0);
    std::vector<double> sorted = l;
    std::sort(sorted.rbegin(), sorted.rend());
    const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(kf * static_cast<double>(l.size()))));
    double want = 0.0;
    for (std::size_t i = 0; i < keep; ++i) want += sorted[i];
    CHECK(ohem_loss(l, kf) == doctest::Approx(want / static_cast<double>(keep)).epsilon(1e-14));
  }
}

TEST_CASE("masking keeps rows strictly outside the radius") {
  Matrix line(4, 3);
  line << 0, 0, 0, 1, 0, 0, 2, 0, 0, 3, 0, 0;
  CHECK(mask_instance(line, 0, 1.5).kept_rows == std::vector<std::uint32_t>{2, 3});
  CHECK(mask_instance(line, 1, 1.0).kept_rows == std::vector<std::uint32_t>{3});
  CHECK(mask_instance(line, 2, 0.5).kept_rows == std::vector<std::uint32_t>{0, 1, 3});
  CHECK(mask_instance(line, 0, 3.0).skip());
  CHECK_THROWS_AS(mask_instance(line, 4, 1.0), ArgumentError);
  CHECK_THROWS_AS(mask_instance(line, 0, 0.0), ArgumentError);
  Rng rng(5);
  std::set<std::array<double, 3>> origins;
  for (int i = 0; i < 200; ++i) origins.insert(mask_instance(line, 0.5, rng).origin);
  CHECK(origins.size() == 4);
}

TEST_CASE("reconstruction output shape and permutation invariance") {
  Rng rng(6);
  const auto cfg = small_heads();
  ad::ParameterSet p;
  const ReconstructionHead head(cfg, p, rng);
  ad::Tape t;
  for (Eigen::Index m : {1, 2, 7, 40}) {
    const Matrix f = random_matrix(rng, m, cfg.descriptor_dim);
    const Matrix out = t.value(head.forward(t, p, t.constant(f)));
    CHECK(out.rows() == cfg.recon_points);
    CHECK(out.cols() == 3);
    CHECK(t.value(head.forward(t, p, t.constant(f.colwise().reverse()))) == out);
  }
}

TEST_CASE("chamfer examples and oracle") {
  Matrix a(1, 3), b(1, 3);
  a << 0, 0, 0;
  b << 1, 0, 0;
  CHECK(chamfer(a, b) == 2.0);
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix x = random_matrix(rng, 7, 3), y = random_matrix(rng, 5, 3);
    CHECK(chamfer(x, y) == oracle_chamfer(x, y));
    CHECK(chamfer(x, x) == 0.0);
  }
}

TEST_CASE("reconstruction targets are resampled and centered") {
  Rng rng(8);
  for (Eigen::Index m : {1, 3, 5, 9, 30}) {
    const Matrix centers = random_matrix(rng, m, 3, 0, 4);
    const Matrix t = reconstruction_target(centers, 5, rng);
    REQUIRE(t.rows() == 5);
    CHECK(t.colwise().sum().cwiseAbs().maxCoeff() < 1e-12);
    // The centering shift is unknown, so try each source row for target row 0.
    std::multiset<Eigen::Index> used;
    for (Eigen::Index j0 = 0; j0 < m && used.empty(); ++j0) {
      const RowVector shift = centers.row(j0) - t.row(0);
      std::multiset<Eigen::Index> hits;
      for (Eigen::Index i = 0; i < 5; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
          if ((t.row(i) + shift - centers.row(j)).norm() < 1e-12) {
            hits.insert(j);
            break;
          }
        }
      }
      if (hits.size() == 5) used = hits;
    }
    REQUIRE(used.size() == 5);
    if (m <= 5) {
      for (Eigen::Index j = 0; j < m; ++j) CHECK(used.count(j) >= 1);
    } else {
      CHECK(std::set<Eigen::Index>(used.begin(), used.end()).size() == 5);
    }
  }
  CHECK_THROWS_AS(reconstruction_target(Matrix(0, 3), 5, rng), ArgumentError);
}

TEST_CASE("planted decoder reconstructs its target exactly") {
  Rng rng(9);
  const auto cfg = small_heads();
  ad::ParameterSet p;
  const ReconstructionHead head(cfg, p, rng);
  InstanceGroup g = random_group(rng, static_cast<std::size_t>(cfg.recon_points), 10, 1);
  g.voxel_centers.col(0) *= 4.0;  // elongate so the mask leaves survivors
  Matrix target = g.voxel_centers;
  target.rowwise() -= target.colwise().mean();
  const auto w = p.index_of("recon.decode_out.weight");
  const auto b = p.index_of("recon.decode_out.bias");
  p.value(w).setZero();
  p.value(b) = Eigen::Map<const Matrix>(target.data(), 1, target.size());
  const std::vector<InstanceGroup> groups{g};
  const RadiusTable radii{{{1, 0.01}}};
  ad::Tape t;
  Rng draws(3);
  ad::Var l = reconstruction_loss(t, p, head, t.constant(random_matrix(rng, 10, cfg.descriptor_dim)), groups, radii, draws);
  REQUIRE(l.valid());
  CHECK(t.scalar(l) == 0.0);
}

TEST_CASE("reconstruction loss averages surviving instances") {
  Rng rng(10);
  const auto cfg = small_heads();
  ad::ParameterSet p;
  const ReconstructionHead head(cfg, p, rng);
  const Matrix desc = random_matrix(rng, 30, cfg.descriptor_dim);
  std::vector<InstanceGroup> groups{random_group(rng, 8, 30, 1), random_group(rng, 6, 30, 2)};
  const RadiusTable radii{{{1, 0.2}, {2, 0.2}}};

  ad::Tape t;
  Rng draws(21);
  const double both = t.scalar(reconstruction_loss(t, p, head, t.constant(desc), groups, radii, draws));

  Rng replay(21);
  std::vector<double> each;
  for (const auto& g : groups) {
    const auto mask = mask_instance(g.voxel_centers, 0.2, replay);
    const Matrix target = reconstruction_target(g.voxel_centers, cfg.recon_points, replay);
    REQUIRE_FALSE(mask.skip());
    std::vector<std::uint32_t> rows;
    for (auto k : mask.kept_rows) rows.push_back(g.voxel_indices[k]);
    ad::Tape s;
    const Matrix out = s.value(head.forward(s, p, s.gather_rows(s.constant(desc), rows)));
    each.push_back(chamfer(out, target));
  }
  CHECK(both == doctest::Approx((each[0] + each[1]) / 2).epsilon(1e-14));

  ad::Tape empty;
  Rng r(1);
  CHECK_FALSE(reconstruction_loss(empty, p, head, empty.constant(desc), {}, radii, r).valid());
  const RadiusTable huge{{{1, 100.0}, {2, 100.0}}};
  CHECK_FALSE(reconstruction_loss(empty, p, head, empty.constant(desc), groups, huge, r).valid());
}

TEST_CASE("joint loss weights") {
  CHECK(total_loss(1.0, 1.0, 1.0) == doctest::Approx(1.11));
  CHECK(total_loss(0.7, 5.0, 9.0, 0.0, 0.0) == 0.7);
  ad::Tape t;
  ad::Var s = t.constant(Matrix::Constant(1, 1, 2.0));
  ad::Var c = t.constant(Matrix::Constant(1, 1, 3.0));
  ad::Var g = t.constant(Matrix::Constant(1, 1, 4.0));
  CHECK(t.scalar(total_loss(t, s, c, g, 0.1, 0.01)) == doctest::Approx(2.34));
  CHECK(t.scalar(total_loss(t, s, ad::Var{}, ad::Var{}, 0.1, 0.01)) == 2.0);
}

TEST_CASE("joint loss gradient is the weighted sum of the parts") {
  Rng rng(11);
  const auto cfg = small_heads();
  ad::ParameterSet p;
  const ClassificationHead cls(cfg, p, rng);
  const ReconstructionHead rec(cfg, p, rng);
  const auto desc = p.add("descriptors", random_matrix(rng, 20, cfg.descriptor_dim));
  std::vector<InstanceGroup> groups;
  for (int k = 0; k < 3; ++k) groups.push_back(random_group(rng, 6, 20, k));
  const RadiusTable radii{{{0, 0.3}, {1, 0.3}, {2, 0.3}}};
  std::vector<int> labels(20);
  for (auto& y : labels) y = static_cast<int>(rng.below(3));
  Matrix w = random_matrix(rng, cfg.descriptor_dim, cfg.num_classes);

  auto grads_of = [&](double ws, double wc, double wg) {
    ad::Tape t;
    Rng draws(99);
    ad::Var d = t.parameter(p, desc);
    ad::Var ls = t.mean(t.softmax_ce_rows(t.matmul(d, t.constant(w)), labels));
    ad::Var lc = classification_loss(t, p, cls, d, groups, 0.25);
    ad::Var lg = reconstruction_loss(t, p, rec, d, groups, radii, draws);
    ad::Var l = t.add(t.scale(ls, ws), total_loss(t, t.constant(Matrix::Zero(1, 1)), lc, lg, wc, wg));
    t.backward(l);
    auto g = p.zeros_like();
    t.accumulate_parameter_grads(g);
    return g;
  };
  const auto full = grads_of(1.0, 0.1, 0.01);
  const auto gs = grads_of(1.0, 0.0, 0.0);
  const auto gc = grads_of(0.0, 1.0, 0.0);
  const auto gg = grads_of(0.0, 0.0, 1.0);
  for (std::size_t i = 0; i < full.size(); ++i) {
    const Matrix combo = gs[i] + 0.1 * gc[i] + 0.01 * gg[i];
    CHECK((full[i] - combo).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, combo.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("groups are built from instance voxels") {
  PointCloud c;
  for (int i = 0; i < 6; ++i) c.points.push_back({0.5f * i, 0.0f, 0.0f, 0.0f});
  const auto grid = voxelize(c, 0.4);
  InstanceSet set;
  set.assignment = {0, 0, 0, -1, 1, 1};
  set.instances.push_back({1, {0, 1, 2}, {0, 1, 2}});
  set.instances.push_back({2, {4, 5}, {4, 5}});
  const auto groups = make_groups(set, grid);
  REQUIRE(groups.size() == 2);
  CHECK(groups[1].class_id == 2);
  CHECK(groups[1].voxel_centers.rows() == 2);
  CHECK(groups[1].voxel_centers(1, 0) == doctest::Approx(grid.cells[5].center[0]));
}

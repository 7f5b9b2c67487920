#include "iaseg/instance_heads.hpp"

#include <algorithm>
#include <numeric>

#include "iaseg/errors.hpp"
#include "iaseg/voxel_grid.hpp"

namespace iaseg {

void HeadsConfig::validate() const {
  if (descriptor_dim <= 0 || num_classes <= 0 || cls_hidden <= 0 || recon_hidden <= 0 || latent_dim <= 0 ||
      recon_points <= 0) {
    throw ArgumentError("heads: dimensions must be positive");
  }
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ArgumentError("heads: keep_fraction must be in (0, 1]");
}

ClassificationHead::ClassificationHead(const HeadsConfig& config, ad::ParameterSet& params, Rng& rng)
    : hidden_(Linear::create(params, "cls.hidden", config.descriptor_dim, config.cls_hidden, rng)),
      out_(Linear::create(params, "cls.out", config.cls_hidden, config.num_classes, rng)) {}

ad::Var ClassificationHead::forward(ad::Tape& tape, const ad::ParameterSet& params, ad::Var group_features) const {
  if (tape.value(group_features).rows() == 0) throw ArgumentError("classify_instance: empty group");
  ad::Var pooled = tape.max_rows(group_features);
  return out_(tape, params, tape.relu(hidden_(tape, params, pooled)));
}

ReconstructionHead::ReconstructionHead(const HeadsConfig& config, ad::ParameterSet& params, Rng& rng)
    : encode_(Linear::create(params, "recon.encode", config.descriptor_dim, config.latent_dim, rng)),
      decode_hidden_(Linear::create(params, "recon.decode_hidden", config.latent_dim, config.recon_hidden, rng)),
      decode_out_(Linear::create(params, "recon.decode_out", config.recon_hidden, 3 * config.recon_points, rng)),
      points_(config.recon_points) {}

ad::Var ReconstructionHead::forward(ad::Tape& tape, const ad::ParameterSet& params, ad::Var masked_features) const {
  if (tape.value(masked_features).rows() == 0) throw ArgumentError("reconstruct: no surviving rows");
  ad::Var code = tape.max_rows(tape.relu(encode_(tape, params, masked_features)));
  ad::Var flat = decode_out_(tape, params, tape.relu(decode_hidden_(tape, params, code)));
  return tape.reshape(flat, points_, 3);
}

double ohem_loss(std::span<const double> per_instance_losses, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ArgumentError("keep_fraction must be in (0, 1]");
  if (per_instance_losses.empty()) return 0.0;
  const auto kept = ad::ohem_keep_indices(per_instance_losses, keep_fraction);
  double s = 0.0;
  for (std::size_t i : kept) s += per_instance_losses[i];
  return s / static_cast<double>(kept.size());
}

MaskedGroup mask_instance(const Matrix& voxel_centers, std::size_t q_row, double radius) {
  if (voxel_centers.cols() != 3) throw ArgumentError("mask_instance: centers must be M x 3");
  if (q_row >= static_cast<std::size_t>(voxel_centers.rows())) throw ArgumentError("mask_instance: q not in V(O_k)");
  if (!(radius > 0.0)) throw ArgumentError("mask_instance: radius must be positive");
  MaskedGroup g;
  g.radius = radius;
  const auto q = voxel_centers.row(static_cast<Eigen::Index>(q_row));
  g.origin = {q(0), q(1), q(2)};
  for (Eigen::Index i = 0; i < voxel_centers.rows(); ++i) {
    if ((voxel_centers.row(i) - q).norm() > radius) g.kept_rows.push_back(static_cast<std::uint32_t>(i));
  }
  return g;
}

MaskedGroup mask_instance(const Matrix& voxel_centers, double radius, Rng& rng) {
  if (voxel_centers.rows() == 0) throw ArgumentError("mask_instance: empty group");
  const auto q = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(voxel_centers.rows())));
  return mask_instance(voxel_centers, q, radius);
}

double chamfer(const Matrix& a, const Matrix& b) { return ad::chamfer_with_matches(a, b).value; }

Matrix reconstruction_target(const Matrix& voxel_centers, int n, Rng& rng) {
  const auto m = static_cast<std::uint64_t>(voxel_centers.rows());
  if (m == 0) throw ArgumentError("reconstruction_target: empty group");
  if (n <= 0) throw ArgumentError("reconstruction_target: N^g must be positive");
  std::vector<std::uint32_t> rows;
  if (m == static_cast<std::uint64_t>(n)) {
    rows.resize(m);
    std::iota(rows.begin(), rows.end(), 0u);
  } else if (m < static_cast<std::uint64_t>(n)) {
    // keep every center once, pad with draws
    rows.resize(m);
    std::iota(rows.begin(), rows.end(), 0u);
    while (rows.size() < static_cast<std::size_t>(n)) rows.push_back(static_cast<std::uint32_t>(rng.below(m)));
  } else {
    std::vector<std::uint32_t> all(m);
    std::iota(all.begin(), all.end(), 0u);
    // partial Fisher-Yates
    for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(m - i));
      std::swap(all[i], all[j]);
    }
    rows.assign(all.begin(), all.begin() + n);
  }
  Matrix t(n, voxel_centers.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) t.row(static_cast<Eigen::Index>(i)) = voxel_centers.row(rows[i]);
  const RowVector mean = t.colwise().mean();
  t.rowwise() -= mean;
  return t;
}

std::vector<InstanceGroup> make_groups(const InstanceSet& instances, const VoxelGrid& grid) {
  std::vector<InstanceGroup> groups;
  groups.reserve(instances.size());
  for (const auto& inst : instances.instances) {
    if (inst.voxel_indices.empty()) continue;
    InstanceGroup g;
    g.voxel_indices = inst.voxel_indices;
    g.class_id = inst.class_id;
    g.voxel_centers.resize(static_cast<Eigen::Index>(g.voxel_indices.size()), 3);
    for (std::size_t k = 0; k < g.voxel_indices.size(); ++k) {
      const auto& c = grid.cells.at(g.voxel_indices[k]).center;
      g.voxel_centers.row(static_cast<Eigen::Index>(k)) << c[0], c[1], c[2];
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

ad::Var classification_loss(ad::Tape& tape, const ad::ParameterSet& params, const ClassificationHead& head,
                            ad::Var descriptors, std::span<const InstanceGroup> groups, double keep_fraction) {
  if (groups.empty()) return {};
  std::vector<ad::Var> logits;
  std::vector<int> labels;
  logits.reserve(groups.size());
  for (const auto& g : groups) {
    logits.push_back(head.forward(tape, params, tape.gather_rows(descriptors, g.voxel_indices)));
    labels.push_back(g.class_id);
  }
  ad::Var ce = tape.softmax_ce_rows(tape.stack_rows(logits), std::move(labels));
  return tape.ohem_mean(ce, keep_fraction);
}

ad::Var reconstruction_loss(ad::Tape& tape, const ad::ParameterSet& params, const ReconstructionHead& head,
                            ad::Var descriptors, std::span<const InstanceGroup> groups, const RadiusTable& radii,
                            Rng& rng) {
  std::vector<ad::Var> terms;
  for (const auto& g : groups) {
    const auto mask = mask_instance(g.voxel_centers, radii.at(static_cast<std::uint16_t>(g.class_id)), rng);
    Matrix target = reconstruction_target(g.voxel_centers, head.output_points(), rng);
    if (mask.skip()) continue;
    std::vector<std::uint32_t> rows;
    rows.reserve(mask.kept_rows.size());
    for (std::uint32_t k : mask.kept_rows) rows.push_back(g.voxel_indices[k]);
    ad::Var recon = head.forward(tape, params, tape.gather_rows(descriptors, std::move(rows)));
    terms.push_back(tape.chamfer(recon, std::move(target)));
  }
  if (terms.empty()) return {};
  return tape.mean(tape.stack_rows(terms));
}

double total_loss(double semantic, double classification, double reconstruction, double lambda1, double lambda2) {
  return semantic + lambda1 * classification + lambda2 * reconstruction;
}

ad::Var total_loss(ad::Tape& tape, ad::Var semantic, ad::Var classification, ad::Var reconstruction,
                   double lambda1, double lambda2) {
  ad::Var total = semantic;
  if (classification.valid()) total = tape.add(total, tape.scale(classification, lambda1));
  if (reconstruction.valid()) total = tape.add(total, tape.scale(reconstruction, lambda2));
  return total;
}

}  // namespace iaseg

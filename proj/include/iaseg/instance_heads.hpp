#pragma once

// Instance-level supervision: a max-pool classifier trained with OHEM
// cross-entropy, and a masked PointNet-style autoencoder that reconstructs an
// instance's voxel centers from the descriptors that survive a ball mask.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "iaseg/autodiff.hpp"
#include "iaseg/instance_cluster.hpp"
#include "iaseg/layers.hpp"
#include "iaseg/rng.hpp"
#include "iaseg/voxel_grid.hpp"

namespace iaseg {

struct HeadsConfig {
  int descriptor_dim = 32;
  int num_classes = 5;
  int cls_hidden = 64;
  int recon_hidden = 64;
  int latent_dim = 64;
  int recon_points = 64;  // N^g
  double keep_fraction = 0.25;

  void validate() const;
};

// MLP(max-pool(F(O_k))): 1 x num_classes logits from an M_k x d group.
class ClassificationHead {
 public:
  ClassificationHead() = default;
  ClassificationHead(const HeadsConfig& config, ad::ParameterSet& params, Rng& rng);

  /// Throws ArgumentError for an empty group.
  ad::Var forward(ad::Tape& tape, const ad::ParameterSet& params, ad::Var group_features) const;

 private:
  Linear hidden_;
  Linear out_;
};

// Encoder: per-row MLP then column max-pool to a latent code. Decoder: MLP
// from the code to recon_points x 3 coordinates.
class ReconstructionHead {
 public:
  ReconstructionHead() = default;
  ReconstructionHead(const HeadsConfig& config, ad::ParameterSet& params, Rng& rng);

  ad::Var forward(ad::Tape& tape, const ad::ParameterSet& params, ad::Var masked_features) const;
  int output_points() const { return points_; }

 private:
  Linear encode_;
  Linear decode_hidden_;
  Linear decode_out_;
  int points_ = 0;
};

/// Mean of the hardest ceil(keep_fraction * K) losses (at least one kept,
/// ties to the lower index). Returns 0 for an empty list.
double ohem_loss(std::span<const double> per_instance_losses, double keep_fraction);

struct MaskedGroup {
  std::vector<std::uint32_t> kept_rows;  // rows of V(O_k) with |v - q| > r, ascending
  std::array<double, 3> origin{};
  double radius = 0.0;

  bool skip() const { return kept_rows.empty(); }
};

/// Keeps exactly the rows strictly farther than r from the row `q_row`.
MaskedGroup mask_instance(const Matrix& voxel_centers, std::size_t q_row, double radius);

/// Draws q uniformly from the group's rows, then masks.
MaskedGroup mask_instance(const Matrix& voxel_centers, double radius, Rng& rng);

/// Squared symmetric chamfer distance with per-set means.
double chamfer(const Matrix& a, const Matrix& b);

/// Resamples the centers to exactly n rows (with replacement when there are
/// fewer, without replacement when there are more) and removes the column
/// means.
Matrix reconstruction_target(const Matrix& voxel_centers, int n, Rng& rng);

// One clustered instance as seen by the heads.
struct InstanceGroup {
  std::vector<std::uint32_t> voxel_indices;  // rows of the scene's F
  Matrix voxel_centers;                      // M_k x 3, aligned with voxel_indices
  int class_id = 0;
};

std::vector<InstanceGroup> make_groups(const InstanceSet& instances, const VoxelGrid& grid);

/// L^c for one scene: OHEM over per-instance cross-entropies of the classifier
/// logits. Returns an invalid Var when there are no groups.
ad::Var classification_loss(ad::Tape& tape, const ad::ParameterSet& params, const ClassificationHead& head,
                            ad::Var descriptors, std::span<const InstanceGroup> groups,
                            double keep_fraction);

/// L^g for one scene: mean chamfer over instances that survive masking.
/// Draw order per instance: mask origin, then target resampling. Returns an
/// invalid Var when no instance survives.
ad::Var reconstruction_loss(ad::Tape& tape, const ad::ParameterSet& params, const ReconstructionHead& head,
                            ad::Var descriptors, std::span<const InstanceGroup> groups,
                            const RadiusTable& radii, Rng& rng);

inline constexpr double kDefaultLambdaCls = 0.1;
inline constexpr double kDefaultLambdaRecon = 0.01;

/// L = L^s + lambda1 L^c + lambda2 L^g.
double total_loss(double semantic, double classification, double reconstruction,
                  double lambda1 = kDefaultLambdaCls, double lambda2 = kDefaultLambdaRecon);

/// Tape version; invalid (absent) terms contribute nothing.
ad::Var total_loss(ad::Tape& tape, ad::Var semantic, ad::Var classification, ad::Var reconstruction,
                   double lambda1, double lambda2);

}  // namespace iaseg

#pragma once

// Terms of the training objective
//
//   L = l_ssl (L_ssl(z) + L_ssl(z')) + l_lie L_lie(z_hat, z') + l_euc |z' - z_hat|^2 + s(delta) |t_hat|^2
//
// Per-sample terms are returned as 1 x B rows; batch reduction is the mean.

#include <cstdint>
#include <functional>
#include <vector>

#include "lieop/autograd.hpp"
#include "lieop/lie_operator.hpp"
#include "lieop/model.hpp"
#include "lieop/rng.hpp"

namespace lieop {

struct LossWeights {
  double lambda_ssl = 1.0;
  double lambda_lie = 5.0;
  double lambda_euc = 1.0;
  double temperature = 0.1;

  bool operator==(const LossWeights&) const = default;
};

/// s(delta) = 1 / (1 + exp(|delta|)), in (0, 0.5].
double similarity_weight(double delta);

/// s(delta_j) |t_j|^2 per column. `delta` is 1 x B.
ag::Var norm_penalty(ag::Var t_hat, const Matrix& delta);

enum class NegativeTag { OtherInstance, OtherInstanceTransformed, OtherInstanceInferred, OwnSourceZ };

const char* to_string(NegativeTag tag);

/// Negatives of one anchor z' inside a minibatch, described by provenance and
/// batch column. Values are looked up with `materialize`.
struct NegativeSet {
  struct Member {
    NegativeTag tag;
    Eigen::Index column;
  };
  std::vector<Member> members;

  std::size_t size() const { return members.size(); }
  /// Gathers member values from the batch's z, z' and z_hat (each m x B).
  Matrix materialize(const Matrix& z, const Matrix& z_g, const Matrix& z_hat) const;
};

/// {z_j, z'_j, z_hat_j : instance j differs from the anchor's} plus z_anchor
/// when `collapse_guard` is set. `instances` holds one id per batch column.
NegativeSet build_negative_set(std::span<const std::int64_t> instances, Eigen::Index anchor, bool collapse_guard);

/// -log softmax of the positive among {positive} U negatives, with cosine
/// similarity of projected codes divided by the temperature. Single anchor:
/// z_hat_g, z_g are m x 1 and negatives m x n.
ag::Var lie_infonce(ag::Tape& tape, ag::Var z_hat_g, ag::Var z_g, ag::Var negatives, ProjectionHead& proj,
                    double temperature);

/// Batched form: for every column i the negatives are build_negative_set(instances, i, guard).
/// Projects each code once. Returns 1 x B.
ag::Var lie_infonce_batch(ag::Tape& tape, ag::Var z_hat_g, ag::Var z_g, ag::Var z,
                          std::span<const std::int64_t> instances, ProjectionHead& proj, double temperature,
                          bool collapse_guard);

/// |z' - z_hat|^2 per column.
ag::Var euclidean_loss(ag::Var z_g, ag::Var z_hat_g);

/// InfoNCE of each anchor column against its positive column, with the other
/// positives of the batch as negatives. Inputs are the codes to compare (the
/// caller projects them). Needs at least two columns. Returns 1 x B.
ag::Var pair_invariance_loss(ag::Var anchors, ag::Var positives, double temperature);

/// Which embedding plays the positive in the pair-invariance loss: a second
/// augmented view of the same frame, or the transformed frame of the pair.
enum class PairMode { Views, Frames };

ag::Var ssl_loss_pair_invariance(ag::Var anchors, ag::Var second_views, ag::Var transformed, PairMode mode,
                                 double temperature);

/// Column-wise random coordinate masks with round(ratio * F) masked entries
/// (at least one). True marks a masked coordinate.
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;
BoolMatrix sample_coordinate_mask(Eigen::Index features, Eigen::Index batch, double mask_ratio, Rng& rng);

/// Masked-input reconstruction: encode x with masked coordinates zeroed,
/// decode, and average the squared error over masked coordinates only.
/// Returns 1 x B.
ag::Var ssl_loss_masked_reconstruction(ag::Tape& tape, const Matrix& x, const BoolMatrix& mask,
                                       const std::function<ag::Var(ag::Tape&, ag::Var)>& encode,
                                       const std::function<ag::Var(ag::Tape&, ag::Var)>& decode);

/// A minibatch of frame pairs, one pair per column.
struct PairBatch {
  Matrix x;        // F x B
  Matrix x_prime;  // F x B
  Matrix delta;    // 1 x B
  std::vector<std::int64_t> instances;

  Eigen::Index size() const { return x.cols(); }
};

/// Per-step randomness of the SSL term, drawn by the caller.
struct SslInputs {
  BoolMatrix mask_x, mask_x_prime;       // masked reconstruction
  Matrix x_view_a, x_view_b;             // pair invariance
  Matrix x_prime_view_a, x_prime_view_b;
};

struct LossOptions {
  LossWeights weights;
  bool collapse_guard = true;
  /// Weight of the additional frame-pair InfoNCE (frames control); 0 disables.
  double lambda_frames = 0.0;
};

/// Every node the objective is built from, for diagnostics and tests.
struct LossTerms {
  ag::Var total;
  ag::Var ssl;        // mean L_ssl(z) + mean L_ssl(z'), unweighted; unset when l_ssl = 0
  ag::Var lie;        // mean Lie InfoNCE; unset when l_lie = 0
  ag::Var euc;        // mean squared distance
  ag::Var norm;       // mean s(delta)|t_hat|^2
  ag::Var frames;     // mean frame-pair InfoNCE; unset unless lambda_frames > 0
  ag::Var z, z_g, z_hat_g, t_hat;
};

LossTerms total_loss(ag::Tape& tape, LieModel& model, const PairBatch& batch, const SslInputs& ssl,
                     const LossOptions& options);

/// The objective given the batch codes z, z' and coordinates t_hat, however
/// they were produced.
LossTerms assemble_loss(ag::Tape& tape, LieModel& model, const PairBatch& batch, const SslInputs& ssl,
                        const LossOptions& options, ag::Var z, ag::Var z_g, ag::Var t_hat);

/// Draws the SSL randomness for a batch: coordinate masks for masked
/// reconstruction, or two noisy views per frame for pair invariance.
SslInputs prepare_ssl_inputs(const PairBatch& batch, SslKind kind, double mask_ratio, bool need_views, Rng& rng);

/// Augmentation used for pair-invariance views: random coordinate dropout
/// (keep probability 0.8) followed by Gaussian noise of stddev 0.1.
Matrix augment_view(const Matrix& x, Rng& rng);

}  // namespace lieop

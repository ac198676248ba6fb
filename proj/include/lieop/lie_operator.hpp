#pragma once

// The learnable transformation model. A basis {L_k} of d matrices of size
// m x m spans a matrix Lie algebra; a coordinate vector t selects the group
// element exp(sum_k t_k L_k), which acts on latent codes by multiplication.

#include <vector>

#include "lieop/autograd.hpp"
#include "lieop/nn.hpp"
#include "lieop/rng.hpp"

namespace lieop {

/// Coordinates of an algebra element in the learned basis.
struct CoordVector {
  Vector values;

  Eigen::Index dim() const { return values.size(); }
  static CoordVector zero(Eigen::Index d) { return {Vector::Zero(d)}; }
};

class LieBasis {
 public:
  LieBasis() = default;
  /// Entries i.i.d. Normal with variance 0.01 / m. With `skew_init` each
  /// matrix is replaced by its skew-symmetric part (L - L^T) / 2.
  LieBasis(Eigen::Index d, Eigen::Index m, Rng& rng, bool skew_init = false);
  explicit LieBasis(const std::vector<Matrix>& generators);

  Eigen::Index dim() const { return static_cast<Eigen::Index>(generators_.size()); }
  Eigen::Index embed_dim() const { return generators_.empty() ? 0 : generators_.front().value().rows(); }

  Parameter& generator(Eigen::Index k) { return generators_.at(static_cast<std::size_t>(k)); }
  const Parameter& generator(Eigen::Index k) const { return generators_.at(static_cast<std::size_t>(k)); }

  std::vector<ag::Var> on_tape(ag::Tape& tape);
  void collect(std::vector<Parameter*>& out);

 private:
  std::vector<Parameter> generators_;
};

/// Infers coordinates t from (z, z', delta): two affine layers joined by a
/// leaky ReLU, input dimension 2m + 1, output d.
class CoordHead {
 public:
  CoordHead() = default;
  CoordHead(Eigen::Index m, Eigen::Index d, Eigen::Index hidden, Rng& rng, double slope = 0.01,
            double delta_scale = 1.0);

  nn::Mlp& mlp() { return mlp_; }
  const nn::Mlp& mlp() const { return mlp_; }
  double delta_scale() const { return delta_scale_; }
  Eigen::Index embed_dim() const { return (mlp_.in_dim() - 1) / 2; }
  Eigen::Index out_dim() const { return mlp_.out_dim(); }
  void collect(std::vector<Parameter*>& out) { mlp_.collect(out); }

 private:
  nn::Mlp mlp_;
  double delta_scale_ = 1.0;
};

/// m -> 2m -> m projection applied before every similarity in the Lie loss.
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(const std::string& name, Eigen::Index m, Rng& rng, double slope = 0.01);

  ag::Var forward(ag::Tape& tape, ag::Var z) { return mlp_.forward(tape, z); }
  Matrix forward(const Matrix& z) const { return mlp_.forward(z); }
  nn::Mlp& mlp() { return mlp_; }
  void collect(std::vector<Parameter*>& out) { mlp_.collect(out); }

 private:
  nn::Mlp mlp_;
};

/// t_hat = h(concat(z, z', delta)) for column batches; z and z' enter through
/// stop_gradient so nothing flows back into whatever produced them.
/// `delta` is 1 x B.
ag::Var infer_coordinates(ag::Tape& tape, CoordHead& head, ag::Var z, ag::Var z_g, const Matrix& delta);
CoordVector infer_coordinates(const CoordHead& head, const Vector& z, const Vector& z_g, double delta);

/// sum_k t_k L_k.
Matrix compose_generator(const CoordVector& t, const LieBasis& basis);
ag::Var compose_generator(ag::Var t, std::span<const ag::Var> basis);

/// exp(sum_k t_k L_k) z.
Vector apply_operator(const CoordVector& t, const LieBasis& basis, const Vector& z);
/// Column-wise: output column j is exp(sum_k T(k, j) L_k) Z.col(j).
ag::Var apply_operator(ag::Tape& tape, ag::Var coords, std::span<const ag::Var> basis, ag::Var z);

/// k latent neighbours exp(t_i^T L) z with t_i ~ Normal(0, sigma^2 I).
std::vector<Vector> sample_neighbors(const Vector& z, const LieBasis& basis, int k, double sigma, Rng& rng);

/// Group elements exp(t^T L) for `count` independent draws t ~ Normal(0, sigma^2 I).
std::vector<Matrix> sample_group_elements(const LieBasis& basis, int count, double sigma, Rng& rng);

}  // namespace lieop

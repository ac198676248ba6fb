#include "lieop/lie_operator.hpp"

#include <cmath>

namespace lieop {

LieBasis::LieBasis(Eigen::Index d, Eigen::Index m, Rng& rng, bool skew_init) {
  if (d < 1 || m < 1) throw ConfigError("LieBasis: d and m must be positive", d < 1 ? "d" : "m");
  const double stddev = std::sqrt(0.01 / static_cast<double>(m));
  for (Eigen::Index k = 0; k < d; ++k) {
    Matrix l = rng.normal_matrix(m, m, stddev);
    if (skew_init) l = 0.5 * (l - l.transpose()).eval();
    generators_.emplace_back("lie.L" + std::to_string(k), std::move(l));
  }
}

LieBasis::LieBasis(const std::vector<Matrix>& generators) {
  if (generators.empty()) throw DimensionError("LieBasis: empty generator list");
  for (std::size_t k = 0; k < generators.size(); ++k) {
    require_square("LieBasis", generators[k]);
    if (generators[k].rows() != generators.front().rows())
      throw DimensionError("LieBasis: generators have different sizes");
    generators_.emplace_back("lie.L" + std::to_string(k), generators[k]);
  }
}

std::vector<ag::Var> LieBasis::on_tape(ag::Tape& tape) {
  std::vector<ag::Var> out;
  out.reserve(generators_.size());
  for (Parameter& p : generators_) out.push_back(tape.param(p));
  return out;
}

void LieBasis::collect(std::vector<Parameter*>& out) {
  for (Parameter& p : generators_) out.push_back(&p);
}

CoordHead::CoordHead(Eigen::Index m, Eigen::Index d, Eigen::Index hidden, Rng& rng, double slope,
                     double delta_scale)
    : mlp_("coord_head", {2 * m + 1, hidden, d}, rng, slope), delta_scale_(delta_scale) {}

ProjectionHead::ProjectionHead(const std::string& name, Eigen::Index m, Rng& rng, double slope)
    : mlp_(name, {m, 2 * m, m}, rng, slope) {}

ag::Var infer_coordinates(ag::Tape& tape, CoordHead& head, ag::Var z, ag::Var z_g, const Matrix& delta) {
  const Eigen::Index m = head.embed_dim();
  if (z.rows() != m || z_g.rows() != m)
    throw DimensionError("infer_coordinates: head expects embeddings of size " + std::to_string(m) + ", got " +
                         std::to_string(z.rows()) + " and " + std::to_string(z_g.rows()));
  if (delta.rows() != 1 || delta.cols() != z.cols() || z_g.cols() != z.cols())
    throw DimensionError("infer_coordinates: batch sizes of z, z_g and delta differ");
  const ag::Var parts[] = {ag::stop_gradient(z), ag::stop_gradient(z_g),
                           tape.constant(delta * head.delta_scale())};
  return head.mlp().forward(tape, ag::concat_rows(parts));
}

CoordVector infer_coordinates(const CoordHead& head, const Vector& z, const Vector& z_g, double delta) {
  const Eigen::Index m = head.embed_dim();
  if (z.size() != m || z_g.size() != m)
    throw DimensionError("infer_coordinates: head expects embeddings of size " + std::to_string(m) + ", got " +
                         std::to_string(z.size()) + " and " + std::to_string(z_g.size()));
  Matrix input(2 * m + 1, 1);
  input << z, z_g, delta * head.delta_scale();
  return {head.mlp().forward(input).col(0)};
}

Matrix compose_generator(const CoordVector& t, const LieBasis& basis) {
  if (t.dim() != basis.dim())
    throw DimensionError("compose_generator: " + std::to_string(t.dim()) + " coordinates for a basis of size " +
                         std::to_string(basis.dim()));
  Matrix out = Matrix::Zero(basis.embed_dim(), basis.embed_dim());
  for (Eigen::Index k = 0; k < basis.dim(); ++k) out += t.values(k) * basis.generator(k).value();
  return out;
}

ag::Var compose_generator(ag::Var t, std::span<const ag::Var> basis) { return ag::linear_combination(t, basis); }

Vector apply_operator(const CoordVector& t, const LieBasis& basis, const Vector& z) {
  if (z.size() != basis.embed_dim())
    throw DimensionError("apply_operator: latent of size " + std::to_string(z.size()) + " for " +
                         std::to_string(basis.embed_dim()) + "x" + std::to_string(basis.embed_dim()) + " generators");
  return mat_mul(mat_exp(compose_generator(t, basis)), z);
}

ag::Var apply_operator(ag::Tape& tape, ag::Var coords, std::span<const ag::Var> basis, ag::Var z) {
  (void)tape;
  if (basis.empty()) throw DimensionError("apply_operator: empty basis");
  if (coords.rows() != static_cast<Eigen::Index>(basis.size()))
    throw DimensionError("apply_operator: " + std::to_string(coords.rows()) + " coordinates for a basis of size " +
                         std::to_string(basis.size()));
  if (coords.cols() != z.cols()) throw DimensionError("apply_operator: batch sizes of coordinates and latents differ");
  if (z.rows() != basis.front().rows())
    throw DimensionError("apply_operator: latent of size " + std::to_string(z.rows()) + " for generators of size " +
                         std::to_string(basis.front().rows()));
  std::vector<ag::Var> cols;
  cols.reserve(static_cast<std::size_t>(z.cols()));
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const ag::Var g = ag::mat_exp(compose_generator(ag::column(coords, j), basis));
    cols.push_back(ag::matmul(g, ag::column(z, j)));
  }
  return ag::hstack(cols);
}

std::vector<Matrix> sample_group_elements(const LieBasis& basis, int count, double sigma, Rng& rng) {
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    CoordVector t{Vector(basis.dim())};
    for (Eigen::Index k = 0; k < basis.dim(); ++k) t.values(k) = sigma * rng.normal();
    out.push_back(mat_exp(compose_generator(t, basis)));
  }
  return out;
}

std::vector<Vector> sample_neighbors(const Vector& z, const LieBasis& basis, int k, double sigma, Rng& rng) {
  if (k < 1) throw UsageError("sample_neighbors: k must be at least 1");
  if (!(sigma > 0.0)) throw UsageError("sample_neighbors: sigma must be positive");
  if (z.size() != basis.embed_dim())
    throw DimensionError("sample_neighbors: latent of size " + std::to_string(z.size()) + " for generators of size " +
                         std::to_string(basis.embed_dim()));
  std::vector<Vector> out;
  for (const Matrix& g : sample_group_elements(basis, k, sigma, rng)) out.push_back(g * z);
  return out;
}

}  // namespace lieop

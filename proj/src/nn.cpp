#include "lieop/nn.hpp"

#include <cmath>

namespace lieop::nn {

Linear::Linear(std::string name, Eigen::Index in, Eigen::Index out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = Parameter(name + ".weight", rng.uniform_matrix(out, in, -bound, bound));
  bias_ = Parameter(name + ".bias", rng.uniform_matrix(out, 1, -bound, bound));
}

ag::Var Linear::forward(ag::Tape& tape, ag::Var x) {
  return ag::add_bias(ag::matmul(tape.param(weight_), x), tape.param(bias_));
}

Matrix Linear::forward(const Matrix& x) const {
  Matrix y = mat_mul(weight_.value(), x);
  y.colwise() += bias_.value().col(0);
  return y;
}

void Linear::set_zero() {
  weight_.value().setZero();
  bias_.value().setZero();
}

Mlp::Mlp(const std::string& name, const std::vector<Eigen::Index>& widths, Rng& rng, double slope)
    : slope_(slope) {
  if (widths.size() < 2) throw UsageError("Mlp: need at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    layers_.emplace_back(name + "." + std::to_string(i), widths[i], widths[i + 1], rng);
}

ag::Var Mlp::forward(ag::Tape& tape, ag::Var x) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i].forward(tape, x);
    if (i + 1 < layers_.size()) x = ag::leaky_relu(x, slope_);
  }
  return x;
}

Matrix Mlp::forward(const Matrix& x) const {
  Matrix h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    if (i + 1 < layers_.size()) h = h.unaryExpr([s = slope_](double e) { return e > 0.0 ? e : s * e; });
  }
  return h;
}

void Mlp::collect(std::vector<Parameter*>& out) {
  for (Linear& l : layers_) l.collect(out);
}

}  // namespace lieop::nn

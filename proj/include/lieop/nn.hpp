#pragma once

#include <string>
#include <vector>

#include "lieop/autograd.hpp"
#include "lieop/rng.hpp"

namespace lieop::nn {

/// y = W x + b on column batches.
class Linear {
 public:
  Linear() = default;
  /// Weights and biases uniform in +-1/sqrt(in).
  Linear(std::string name, Eigen::Index in, Eigen::Index out, Rng& rng);

  ag::Var forward(ag::Tape& tape, ag::Var x);
  Matrix forward(const Matrix& x) const;

  Eigen::Index in_dim() const { return weight_.value().cols(); }
  Eigen::Index out_dim() const { return weight_.value().rows(); }

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  const Parameter& weight() const { return weight_; }
  const Parameter& bias() const { return bias_; }
  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }
  void set_zero();

 private:
  Parameter weight_;
  Parameter bias_;
};

/// Affine layers joined by leaky ReLU; no activation after the last layer.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& name, const std::vector<Eigen::Index>& widths, Rng& rng, double slope = 0.01);

  ag::Var forward(ag::Tape& tape, ag::Var x);
  Matrix forward(const Matrix& x) const;

  Eigen::Index in_dim() const { return layers_.front().in_dim(); }
  Eigen::Index out_dim() const { return layers_.back().out_dim(); }
  double slope() const { return slope_; }
  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }
  void collect(std::vector<Parameter*>& out);

 private:
  std::vector<Linear> layers_;
  double slope_ = 0.01;
};

}  // namespace lieop::nn

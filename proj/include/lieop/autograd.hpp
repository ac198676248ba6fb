#pragma once

// Define-by-run reverse-mode differentiation over dense matrices. Every value
// on a tape is a Matrix; vectors are single columns and batches are stored
// one sample per column. A fresh Tape is built for every training step.

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lieop/tensor.hpp"

namespace lieop {

/// A trainable tensor with a gradient accumulator.
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Matrix value)
      : name_(std::move(name)), value_(std::move(value)), grad_(Matrix::Zero(value_.rows(), value_.cols())) {}

  const std::string& name() const noexcept { return name_; }
  Matrix& value() noexcept { return value_; }
  const Matrix& value() const noexcept { return value_; }
  Matrix& grad() noexcept { return grad_; }
  const Matrix& grad() const noexcept { return grad_; }

  void zero_grad() { grad_.setZero(value_.rows(), value_.cols()); }

 private:
  std::string name_;
  Matrix value_;
  Matrix grad_;
};

namespace ag {

enum class OpKind {
  Constant,
  Parameter,
  MatMul,
  Add,
  Sub,
  Scale,
  AddBias,
  MultiplyConst,
  ConcatRows,
  HStack,
  Column,
  Transpose,
  LeakyRelu,
  SquaredNorm,
  CosineSimilarity,
  NormalizeColumns,
  LogSumExp,
  Gather,
  MatExp,
  LinearCombination,
  Mean,
  Sum,
  MaskApply,
  StopGradient,
};

const char* op_name(OpKind kind);

class Tape;

/// Lightweight handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var param(Parameter& p);

  /// Fills gradients of every node reachable from `root` and accumulates
  /// into bound Parameters. Node gradients are reset first, so calling it
  /// twice adds the parameter gradient twice.
  void backward(Var root);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

  // Used by primitive implementations.
  Var record(OpKind kind, std::vector<std::size_t> inputs, Matrix value, BackwardFn backward);
  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  Matrix& grad_mut(std::size_t id) { return nodes_[id].grad; }
  template <typename Expr>
  void accumulate(std::size_t id, const Expr& contribution) {
    nodes_[id].grad += contribution;
  }

 private:
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitives. All inputs must live on the same tape (UsageError otherwise);
// incompatible shapes raise DimensionError.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double factor);
/// x + b broadcast over columns; b is rows(x) x 1.
Var add_bias(Var x, Var b);
/// Elementwise product with a constant of the same shape.
Var multiply_const(Var x, const Matrix& weights);
/// Vertical concatenation; all parts share the column count.
Var concat_rows(std::span<const Var> parts);
/// Horizontal concatenation; all parts share the row count.
Var hstack(std::span<const Var> parts);
Var column(Var x, Eigen::Index j);
Var transpose(Var x);
Var leaky_relu(Var x, double slope = 0.01);
/// Column-wise sum of squares: 1 x cols.
Var squared_norm(Var x);
/// Column-wise cosine similarity of a and b: 1 x cols.
Var cosine_similarity(Var a, Var b);
/// Each column scaled to unit Euclidean norm.
Var normalize_columns(Var x);
/// Column-wise log-sum-exp with max shift: 1 x cols. Entries equal to
/// -infinity contribute nothing.
Var logsumexp(Var x);
/// out(0, j) = x(rows[j], j).
Var gather(Var x, std::span<const Eigen::Index> rows);
/// Matrix exponential; backward applies the exact Frechet adjoint.
Var mat_exp(Var a);
/// sum_k coords(k, 0) * mats[k].
Var linear_combination(Var coords, std::span<const Var> mats);
/// Mean of all entries: 1 x 1.
Var mean(Var x);
/// Sum of all entries: 1 x 1.
Var sum(Var x);
/// Keeps entries where mask is true, replaces the rest by `fill`; no gradient
/// flows to replaced entries.
Var mask_apply(Var x, const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& mask,
               double fill = -std::numeric_limits<double>::infinity());
/// Identity in the forward pass, blocks gradient in the backward pass.
Var stop_gradient(Var x);

// ---------------------------------------------------------------------------

struct OptimizerConfig {
  enum class Kind { Sgd, Adam };
  Kind kind = Kind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First-order optimizer over a fixed parameter list. Adam moments are kept
/// per parameter in list order.
class Optimizer {
 public:
  Optimizer(std::vector<Parameter*> params, OptimizerConfig config);

  /// Applies one update. Throws NumericalError naming the first parameter
  /// with a non-finite gradient; no parameter is modified in that case.
  void step();
  void zero_grad();

  const OptimizerConfig& config() const noexcept { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  std::size_t steps_taken() const noexcept { return steps_; }

  // State access for checkpointing.
  std::span<Parameter* const> params() const noexcept { return params_; }
  std::vector<Matrix>& first_moments() noexcept { return m_; }
  std::vector<Matrix>& second_moments() noexcept { return v_; }
  void set_steps_taken(std::size_t n) noexcept { steps_ = n; }

 private:
  std::vector<Parameter*> params_;
  OptimizerConfig config_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::size_t steps_ = 0;
};

/// Applies a single update with a throwaway optimizer state. Adam from a
/// fresh state is the first-step Adam update.
void optimizer_step(std::span<Parameter* const> params, const OptimizerConfig& config);

}  // namespace ag
}  // namespace lieop

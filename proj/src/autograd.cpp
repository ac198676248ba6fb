#include "lieop/autograd.hpp"

#include <algorithm>
#include <cmath>

namespace lieop::ag {

namespace {

constexpr double kNormFloor = 1e-12;

Tape& tape_of(Var a) {
  if (!a.valid()) throw UsageError("autograd: uninitialized variable");
  return *a.tape();
}

Tape& same_tape(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw UsageError("autograd: operands recorded on different tapes");
  return t;
}

Tape& same_tape(std::span<const Var> vars) {
  if (vars.empty()) throw UsageError("autograd: empty operand list");
  Tape& t = tape_of(vars.front());
  for (const Var& v : vars)
    if (v.tape() != &t) throw UsageError("autograd: operands recorded on different tapes");
  return t;
}

std::string shape(const Matrix& m) { return detail::shape_str(m.rows(), m.cols()); }

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shapes " + shape(a) + " and " + shape(b) + " differ");
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Parameter: return "parameter";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Scale: return "scale";
    case OpKind::AddBias: return "add_bias";
    case OpKind::MultiplyConst: return "multiply_const";
    case OpKind::ConcatRows: return "concat_rows";
    case OpKind::HStack: return "hstack";
    case OpKind::Column: return "column";
    case OpKind::Transpose: return "transpose";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::SquaredNorm: return "squared_norm";
    case OpKind::CosineSimilarity: return "cosine_similarity";
    case OpKind::NormalizeColumns: return "normalize_columns";
    case OpKind::LogSumExp: return "logsumexp";
    case OpKind::Gather: return "gather";
    case OpKind::MatExp: return "mat_exp";
    case OpKind::LinearCombination: return "linear_combination";
    case OpKind::Mean: return "mean";
    case OpKind::Sum: return "sum";
    case OpKind::MaskApply: return "mask_apply";
    case OpKind::StopGradient: return "stop_gradient";
  }
  return "unknown";
}

const Matrix& Var::value() const { return tape_of(*this).value(id_); }
const Matrix& Var::grad() const { return tape_of(*this).grad(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw UsageError("autograd: scalar() on a " + shape(v) + " node");
  return v(0, 0);
}

Var Tape::record(OpKind kind, std::vector<std::size_t> inputs, Matrix value, BackwardFn backward) {
  Node n{kind, std::move(inputs), std::move(value), Matrix(), std::move(backward), nullptr};
  n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) { return record(OpKind::Constant, {}, std::move(value), nullptr); }

Var Tape::param(Parameter& p) {
  Var v = record(OpKind::Parameter, {}, p.value(), nullptr);
  nodes_.back().param = &p;
  return v;
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw UsageError("backward: root belongs to another tape");
  if (value(root.id()).size() != 1)
    throw UsageError("backward: root must be scalar, got " + shape(value(root.id())));
  for (Node& n : nodes_) n.grad.setZero();
  nodes_[root.id()].grad(0, 0) = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.param != nullptr) {
      n.param->grad() += n.grad;
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  Matrix out = mat_mul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(OpKind::MatMul, {ia, ib}, std::move(out), [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    tp.grad_mut(ia).noalias() += g * tp.value(ib).transpose();
    tp.grad_mut(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("add", a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(OpKind::Add, {ia, ib}, a.value() + b.value(), [ia, ib](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self));
    tp.accumulate(ib, tp.grad(self));
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("sub", a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(OpKind::Sub, {ia, ib}, a.value() - b.value(), [ia, ib](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self));
    tp.grad_mut(ib) -= tp.grad(self);
  });
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.record(OpKind::Scale, {ia}, factor * a.value(), [ia, factor](Tape& tp, std::size_t self) {
    tp.accumulate(ia, factor * tp.grad(self));
  });
}

Var add_bias(Var x, Var b) {
  Tape& t = same_tape(x, b);
  if (b.cols() != 1 || b.rows() != x.rows())
    throw DimensionError("add_bias: bias " + shape(b.value()) + " does not fit " + shape(x.value()));
  Matrix out = x.value().colwise() + b.value().col(0);
  const std::size_t ix = x.id(), ib = b.id();
  return t.record(OpKind::AddBias, {ix, ib}, std::move(out), [ix, ib](Tape& tp, std::size_t self) {
    tp.accumulate(ix, tp.grad(self));
    tp.accumulate(ib, tp.grad(self).rowwise().sum());
  });
}

Var multiply_const(Var x, const Matrix& weights) {
  Tape& t = tape_of(x);
  require_same_shape("multiply_const", x.value(), weights);
  const std::size_t ix = x.id();
  return t.record(OpKind::MultiplyConst, {ix}, x.value().cwiseProduct(weights),
                  [ix, weights](Tape& tp, std::size_t self) {
                    tp.accumulate(ix, tp.grad(self).cwiseProduct(weights));
                  });
}

Var concat_rows(std::span<const Var> parts) {
  Tape& t = same_tape(parts);
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols)
      throw DimensionError("concat_rows: column counts differ (" + shape(parts.front().value()) + " vs " +
                           shape(p.value()) + ")");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.rows();
  }
  return t.record(OpKind::ConcatRows, ids, std::move(out), [ids, offsets](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k)
      tp.accumulate(ids[k], g.middleRows(offsets[k], tp.value(ids[k]).rows()));
  });
}

Var hstack(std::span<const Var> parts) {
  Tape& t = same_tape(parts);
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows)
      throw DimensionError("hstack: row counts differ (" + shape(parts.front().value()) + " vs " +
                           shape(p.value()) + ")");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.cols();
  }
  return t.record(OpKind::HStack, ids, std::move(out), [ids, offsets](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k)
      tp.accumulate(ids[k], g.middleCols(offsets[k], tp.value(ids[k]).cols()));
  });
}

Var column(Var x, Eigen::Index j) {
  Tape& t = tape_of(x);
  if (j < 0 || j >= x.cols())
    throw DimensionError("column: index " + std::to_string(j) + " out of range for " + shape(x.value()));
  const std::size_t ix = x.id();
  return t.record(OpKind::Column, {ix}, x.value().col(j), [ix, j](Tape& tp, std::size_t self) {
    tp.grad_mut(ix).col(j) += tp.grad(self).col(0);
  });
}

Var transpose(Var x) {
  Tape& t = tape_of(x);
  const std::size_t ix = x.id();
  return t.record(OpKind::Transpose, {ix}, x.value().transpose(), [ix](Tape& tp, std::size_t self) {
    tp.accumulate(ix, tp.grad(self).transpose());
  });
}

Var leaky_relu(Var x, double slope) {
  Tape& t = tape_of(x);
  const Matrix& v = x.value();
  Matrix out = v.unaryExpr([slope](double e) { return e > 0.0 ? e : slope * e; });
  const std::size_t ix = x.id();
  return t.record(OpKind::LeakyRelu, {ix}, std::move(out), [ix, slope](Tape& tp, std::size_t self) {
    const Matrix& in = tp.value(ix);
    const Matrix& g = tp.grad(self);
    tp.accumulate(ix, g.cwiseProduct(in.unaryExpr([slope](double e) { return e > 0.0 ? 1.0 : slope; })));
  });
}

Var squared_norm(Var x) {
  Tape& t = tape_of(x);
  const std::size_t ix = x.id();
  return t.record(OpKind::SquaredNorm, {ix}, x.value().colwise().squaredNorm(),
                  [ix](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    tp.accumulate(ix, 2.0 * (tp.value(ix).array().rowwise() * g.row(0).array()).matrix());
                  });
}

Var cosine_similarity(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("cosine_similarity", a.value(), b.value());
  const Matrix& va = a.value();
  const Matrix& vb = b.value();
  const Eigen::Index n = va.cols();
  Eigen::RowVectorXd na = va.colwise().norm().cwiseMax(kNormFloor);
  Eigen::RowVectorXd nb = vb.colwise().norm().cwiseMax(kNormFloor);
  Matrix out(1, n);
  for (Eigen::Index j = 0; j < n; ++j) out(0, j) = va.col(j).dot(vb.col(j)) / (na(j) * nb(j));
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(OpKind::CosineSimilarity, {ia, ib}, out,
                  [ia, ib, na, nb, out](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    const Matrix& xa = tp.value(ia);
                    const Matrix& xb = tp.value(ib);
                    for (Eigen::Index j = 0; j < xa.cols(); ++j) {
                      const double c = out(0, j);
                      tp.grad_mut(ia).col(j) +=
                          g(0, j) * (xb.col(j) / (na(j) * nb(j)) - c * xa.col(j) / (na(j) * na(j)));
                      tp.grad_mut(ib).col(j) +=
                          g(0, j) * (xa.col(j) / (na(j) * nb(j)) - c * xb.col(j) / (nb(j) * nb(j)));
                    }
                  });
}

Var normalize_columns(Var x) {
  Tape& t = tape_of(x);
  Eigen::RowVectorXd norms = x.value().colwise().norm().cwiseMax(kNormFloor);
  Matrix out = x.value().array().rowwise() / norms.array();
  const std::size_t ix = x.id();
  return t.record(OpKind::NormalizeColumns, {ix}, out, [ix, norms, out](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    const Eigen::RowVectorXd proj = out.cwiseProduct(g).colwise().sum();
    Matrix d = g - (out.array().rowwise() * proj.array()).matrix();
    tp.accumulate(ix, (d.array().rowwise() / norms.array()).matrix());
  });
}

Var logsumexp(Var x) {
  Tape& t = tape_of(x);
  const Matrix& v = x.value();
  const Eigen::Index n = v.cols();
  Matrix out(1, n);
  Matrix softmax(v.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double mx = v.col(j).maxCoeff();
    if (!std::isfinite(mx)) {
      out(0, j) = mx;
      softmax.col(j).setZero();
      continue;
    }
    const Eigen::VectorXd e = (v.col(j).array() - mx).exp().matrix();
    const double s = e.sum();
    out(0, j) = mx + std::log(s);
    softmax.col(j) = e / s;
  }
  const std::size_t ix = x.id();
  return t.record(OpKind::LogSumExp, {ix}, std::move(out), [ix, softmax](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    tp.accumulate(ix, (softmax.array().rowwise() * g.row(0).array()).matrix());
  });
}

Var gather(Var x, std::span<const Eigen::Index> rows) {
  Tape& t = tape_of(x);
  const Matrix& v = x.value();
  if (static_cast<Eigen::Index>(rows.size()) != v.cols())
    throw DimensionError("gather: " + std::to_string(rows.size()) + " indices for " + shape(v));
  Matrix out(1, v.cols());
  std::vector<Eigen::Index> idx(rows.begin(), rows.end());
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    if (idx[j] < 0 || idx[j] >= v.rows())
      throw DimensionError("gather: row index " + std::to_string(idx[j]) + " out of range for " + shape(v));
    out(0, j) = v(idx[j], j);
  }
  const std::size_t ix = x.id();
  return t.record(OpKind::Gather, {ix}, std::move(out), [ix, idx](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    for (std::size_t j = 0; j < idx.size(); ++j) tp.grad_mut(ix)(idx[j], j) += g(0, j);
  });
}

Var mat_exp(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.record(OpKind::MatExp, {ia}, lieop::mat_exp(a.value()), [ia](Tape& tp, std::size_t self) {
    tp.accumulate(ia, mat_exp_frechet_adjoint(tp.value(ia), tp.grad(self)));
  });
}

Var linear_combination(Var coords, std::span<const Var> mats) {
  Tape& t = tape_of(coords);
  same_tape(mats);
  if (mats.front().tape() != &t) throw UsageError("linear_combination: operands on different tapes");
  const Matrix& c = coords.value();
  if (c.cols() != 1 || c.rows() != static_cast<Eigen::Index>(mats.size()))
    throw DimensionError("linear_combination: coordinates " + shape(c) + " for " +
                         std::to_string(mats.size()) + " matrices");
  Matrix out = Matrix::Zero(mats.front().rows(), mats.front().cols());
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < mats.size(); ++k) {
    require_same_shape("linear_combination", mats.front().value(), mats[k].value());
    out += c(static_cast<Eigen::Index>(k), 0) * mats[k].value();
    ids.push_back(mats[k].id());
  }
  std::vector<std::size_t> inputs = ids;
  inputs.insert(inputs.begin(), coords.id());
  const std::size_t ic = coords.id();
  return t.record(OpKind::LinearCombination, std::move(inputs), std::move(out),
                  [ic, ids](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    const Matrix& cv = tp.value(ic);
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      const auto kk = static_cast<Eigen::Index>(k);
                      tp.grad_mut(ic)(kk, 0) += g.cwiseProduct(tp.value(ids[k])).sum();
                      tp.accumulate(ids[k], cv(kk, 0) * g);
                    }
                  });
}

Var mean(Var x) {
  Tape& t = tape_of(x);
  const auto n = static_cast<double>(x.value().size());
  Matrix out(1, 1);
  out(0, 0) = x.value().sum() / n;
  const std::size_t ix = x.id();
  return t.record(OpKind::Mean, {ix}, std::move(out), [ix, n](Tape& tp, std::size_t self) {
    tp.grad_mut(ix).array() += tp.grad(self)(0, 0) / n;
  });
}

Var sum(Var x) {
  Tape& t = tape_of(x);
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  const std::size_t ix = x.id();
  return t.record(OpKind::Sum, {ix}, std::move(out), [ix](Tape& tp, std::size_t self) {
    tp.grad_mut(ix).array() += tp.grad(self)(0, 0);
  });
}

Var mask_apply(Var x, const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& mask, double fill) {
  Tape& t = tape_of(x);
  const Matrix& v = x.value();
  if (mask.rows() != v.rows() || mask.cols() != v.cols())
    throw DimensionError("mask_apply: mask " + detail::shape_str(mask.rows(), mask.cols()) + " for " +
                         shape(v));
  Matrix keep = mask.cast<double>();
  Matrix out = v;
  for (Eigen::Index j = 0; j < v.cols(); ++j)
    for (Eigen::Index i = 0; i < v.rows(); ++i)
      if (!mask(i, j)) out(i, j) = fill;
  const std::size_t ix = x.id();
  return t.record(OpKind::MaskApply, {ix}, std::move(out), [ix, keep](Tape& tp, std::size_t self) {
    tp.accumulate(ix, tp.grad(self).cwiseProduct(keep));
  });
}

Var stop_gradient(Var x) {
  Tape& t = tape_of(x);
  return t.record(OpKind::StopGradient, {x.id()}, x.value(), nullptr);
}

// ---------------------------------------------------------------------------

Optimizer::Optimizer(std::vector<Parameter*> params, OptimizerConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter* p : params_) {
    m_.push_back(Matrix::Zero(p->value().rows(), p->value().cols()));
    v_.push_back(Matrix::Zero(p->value().rows(), p->value().cols()));
  }
}

void Optimizer::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void Optimizer::step() {
  for (Parameter* p : params_)
    if (!p->grad().allFinite()) throw NumericalError("optimizer: non-finite gradient in parameter '" + p->name() + "'");

  ++steps_;
  const double lr = config_.learning_rate;
  if (config_.kind == OptimizerConfig::Kind::Sgd) {
    for (Parameter* p : params_) p->value() -= lr * p->grad();
    return;
  }
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * p.grad();
    v_[i] = b2 * v_[i] + (1.0 - b2) * p.grad().cwiseAbs2();
    p.value().array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.epsilon);
  }
}

void optimizer_step(std::span<Parameter* const> params, const OptimizerConfig& config) {
  Optimizer opt(std::vector<Parameter*>(params.begin(), params.end()), config);
  opt.step();
}

}  // namespace lieop::ag

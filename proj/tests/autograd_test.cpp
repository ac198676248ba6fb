#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "lieop/autograd.hpp"
#include "lieop/errors.hpp"
#include "oracles.hpp"

using lieop::Matrix;
using lieop::ag::Tape;
using lieop::ag::Var;
namespace ag = lieop::ag;

namespace {

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Reduces any output to a scalar through a fixed random cotangent so every
// output entry contributes to the check.
Var contract(Tape& tape, Var out, const Matrix& weights) {
  (void)tape;
  return ag::sum(ag::multiply_const(out, weights));
}

// Compares the tape gradient of every input with central differences.
void check_gradients(const Builder& build, const std::vector<Matrix>& inputs, std::uint64_t seed, double tol = 1e-5) {
  lieop::Rng rng(seed);
  Matrix weights;
  {
    Tape probe;
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(probe.constant(x));
    const Var out = build(probe, vars);
    weights = rng.normal_matrix(out.rows(), out.cols());
  }

  Tape tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.constant(x));
  const Var root = contract(tape, build(tape, vars), weights);
  tape.backward(root);

  const auto f = [&](std::vector<Matrix>& xs) {
    Tape t;
    std::vector<Var> v;
    for (const auto& x : xs) v.push_back(t.constant(x));
    return contract(t, build(t, v), weights).scalar();
  };
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Matrix numeric = oracle::numeric_gradient(f, inputs, i);
    INFO("input " << i);
    CHECK(oracle::max_relative_error(vars[i].grad(), numeric) < tol);
  }
}

Matrix small(lieop::Rng& rng, Eigen::Index r, Eigen::Index c) { return oracle::random_with_norm(rng, r, c, rng.uniform(0.3, 1.0)); }

}  // namespace

TEST_CASE("primitive gradients match central differences") {
  lieop::Rng rng(11);

  SUBCASE("matmul") {
    check_gradients([](Tape&, const std::vector<Var>& v) { return ag::matmul(v[0], v[1]); },
                    {small(rng, 3, 4), small(rng, 4, 2)}, 1);
  }
  SUBCASE("add and sub") {
    check_gradients([](Tape&, const std::vector<Var>& v) { return ag::add(v[0], v[1]); },
                    {small(rng, 3, 2), small(rng, 3, 2)}, 2);
    check_gradients([](Tape&, const std::vector<Var>& v) { return ag::sub(v[0], v[1]); },
                    {small(rng, 3, 2), small(rng, 3, 2)}, 3);
  }
  SUBCASE("scale") {
    check_gradients([](Tape&, const std::vector<Var>& v) { return ag::scale(v[0], -2.5); }, {small(rng, 2, 3)}, 4);
  }
  SUBCASE("add_bias") {
    check_gradients([](Tape&, const std::vector<Var>& v) { return ag::add_bias(v[0], v[1]); },
                    {small(rng, 3, 5), small(rng, 3, 1)}, 5);
  }
  SUBCASE("multiply_const") {
    const Matrix w = rng.normal_matrix(2, 2);
    check_gradients([w](Tape&, const std::vector<Var>& v) { return ag::multiply_const(v[0], w); },
                    {small(rng, 2, 2)}, 6);
  }
  SUBCASE("concat_rows and hstack") {
    check_gradients(
        [](Tape&, const std::vector<Var>& v) {
          const Var parts[] = {v[0], v[1]};
          return ag::concat_rows(parts);
        },
        {small(rng, 2, 3), small(rng, 4, 3)}, 7);
    check_gradients(
        [](Tape&, const std::vector<Var>& v) {
          const Var parts[] = {v[0], v[1], v[0]};
          return ag::hstack(parts);
        },
        {small(rng, 3, 1), small(rng, 3, 2)}, 8);
  }
  SUBCASE("column and transpose") {
    check_gradients([](Tape&, const std::vector<Var>& v) { return ag::column(v[0], 2); }, {small(rng, 3, 4)}, 9);
    check_gradients([](Tape&, const std::vector<Var>& v) { return ag::transpose(v[0]); }, {small(rng, 3, 4)}, 10);
  }
  SUBCASE("leaky_relu") {
    check_gradients([](Tape&, const std::vector<Var>& v) { return ag::leaky_relu(v[0], 0.01); }, {small(rng, 4, 3)},
                    11);
  }
  SUBCASE("squared_norm") {
    check_gradients([](Tape&, const std::vector<Var>& v) { return ag::squared_norm(v[0]); }, {small(rng, 4, 3)}, 12);
  }
  SUBCASE("cosine_similarity") {
    check_gradients([](Tape&, const std::vector<Var>& v) { return ag::cosine_similarity(v[0], v[1]); },
                    {small(rng, 4, 3), small(rng, 4, 3)}, 13);
  }
  SUBCASE("normalize_columns") {
    check_gradients([](Tape&, const std::vector<Var>& v) { return ag::normalize_columns(v[0]); }, {small(rng, 4, 3)},
                    14);
  }
  SUBCASE("logsumexp") {
    check_gradients([](Tape&, const std::vector<Var>& v) { return ag::logsumexp(v[0]); }, {small(rng, 5, 3)}, 15);
  }
  SUBCASE("gather") {
    const std::vector<Eigen::Index> rows = {1, 0, 3};
    check_gradients([rows](Tape&, const std::vector<Var>& v) { return ag::gather(v[0], rows); }, {small(rng, 4, 3)},
                    16);
  }
  SUBCASE("mat_exp") {
    check_gradients([](Tape&, const std::vector<Var>& v) { return ag::mat_exp(v[0]); }, {small(rng, 4, 4)}, 17);
  }
  SUBCASE("linear_combination") {
    check_gradients(
        [](Tape&, const std::vector<Var>& v) {
          const Var mats[] = {v[1], v[2]};
          return ag::linear_combination(v[0], mats);
        },
        {small(rng, 2, 1), small(rng, 3, 3), small(rng, 3, 3)}, 18);
  }
  SUBCASE("mean and sum") {
    check_gradients([](Tape&, const std::vector<Var>& v) { return ag::mean(v[0]); }, {small(rng, 3, 4)}, 19);
    check_gradients([](Tape&, const std::vector<Var>& v) { return ag::sum(v[0]); }, {small(rng, 3, 4)}, 20);
  }
  SUBCASE("mask_apply feeding logsumexp") {
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask(4, 2);
    mask << true, false, false, true, true, true, true, false;
    check_gradients([mask](Tape&, const std::vector<Var>& v) { return ag::logsumexp(ag::mask_apply(v[0], mask)); },
                    {small(rng, 4, 2)}, 21);
  }
  SUBCASE("composite: |exp(tL) z - y|^2") {
    check_gradients(
        [](Tape&, const std::vector<Var>& v) {
          const Var mats[] = {v[1]};
          const Var g = ag::mat_exp(ag::linear_combination(v[0], mats));
          return ag::squared_norm(ag::sub(ag::matmul(g, v[2]), v[3]));
        },
        {small(rng, 1, 1), small(rng, 3, 3), small(rng, 3, 1), small(rng, 3, 1)}, 22);
  }
}

TEST_CASE("forward values of simple primitives") {
  Tape tape;
  Matrix x(1, 1);
  x << -1.0;
  CHECK(ag::leaky_relu(tape.constant(x), 0.01).scalar() == doctest::Approx(-0.01).epsilon(1e-15));

  lieop::Rng rng(12);
  const Matrix v = rng.normal_matrix(5, 1);
  const Var cv = tape.constant(v);
  CHECK(ag::cosine_similarity(cv, cv).scalar() == doctest::Approx(1.0).epsilon(1e-14));

  Matrix big(2, 1);
  big << 1000.0, 1000.0;
  const double lse = ag::logsumexp(tape.constant(big)).scalar();
  CHECK(std::isfinite(lse));
  CHECK(std::abs(lse - (1000.0 + std::log(2.0))) < 1e-10);

  Matrix with_inf(3, 1);
  with_inf << 0.0, -std::numeric_limits<double>::infinity(), 0.0;
  CHECK(std::abs(ag::logsumexp(tape.constant(with_inf)).scalar() - std::log(2.0)) < 1e-14);
}

TEST_CASE("mask_apply blocks gradient at masked entries") {
  Tape tape;
  lieop::Rng rng(13);
  const Var x = tape.constant(rng.normal_matrix(3, 2));
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask(3, 2);
  mask << true, false, false, true, true, true;
  const Var y = ag::mask_apply(x, mask, 0.0);
  CHECK(y.value()(1, 0) == 0.0);
  tape.backward(ag::sum(y));
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 2; ++j) CHECK(x.grad()(i, j) == (mask(i, j) ? 1.0 : 0.0));
}

TEST_CASE("stop_gradient passes values and blocks gradients") {
  Tape tape;
  lieop::Rng rng(14);
  lieop::Parameter w("w", rng.normal_matrix(3, 3));
  const Var z = ag::matmul(tape.param(w), tape.constant(rng.normal_matrix(3, 1)));
  const Var detached = ag::stop_gradient(z);
  CHECK(detached.value() == z.value());
  tape.backward(ag::sum(ag::squared_norm(detached)));
  CHECK(w.grad().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward: linear case and contracts") {
  lieop::Rng rng(15);
  lieop::Parameter w("w", rng.normal_matrix(2, 3));
  const Matrix v = rng.normal_matrix(3, 1);

  Tape tape;
  const Var root = ag::sum(ag::matmul(tape.param(w), tape.constant(v)));
  tape.backward(root);
  const Matrix outer = Matrix::Ones(2, 1) * v.transpose();
  CHECK((w.grad() - outer).cwiseAbs().maxCoeff() < 1e-15);

  // A second pass accumulates the same gradient again.
  tape.backward(root);
  CHECK((w.grad() - 2.0 * outer).cwiseAbs().maxCoeff() < 1e-15);

  w.zero_grad();
  CHECK(w.grad().cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(tape.backward(ag::matmul(tape.param(w), tape.constant(v))), lieop::UsageError);
}

TEST_CASE("backward is deterministic") {
  lieop::Rng rng(16);
  lieop::Parameter a("a", rng.normal_matrix(3, 3));
  const Matrix z = rng.normal_matrix(3, 4);
  Matrix first;
  for (int run = 0; run < 2; ++run) {
    a.zero_grad();
    Tape tape;
    const Var e = ag::mat_exp(ag::scale(tape.param(a), 0.3));
    tape.backward(ag::mean(ag::logsumexp(ag::matmul(e, tape.constant(z)))));
    if (run == 0)
      first = a.grad();
    else
      CHECK(a.grad() == first);
  }
}

TEST_CASE("primitive errors") {
  Tape t1, t2;
  const Var a = t1.constant(Matrix::Zero(2, 3));
  const Var b = t2.constant(Matrix::Zero(3, 2));
  CHECK_THROWS_AS(ag::matmul(a, b), lieop::UsageError);
  CHECK_THROWS_AS(ag::matmul(a, t1.constant(Matrix::Zero(2, 2))), lieop::DimensionError);
  CHECK_THROWS_AS(ag::add(a, t1.constant(Matrix::Zero(3, 2))), lieop::DimensionError);
  CHECK_THROWS_AS(ag::mat_exp(a), lieop::DimensionError);
  CHECK_THROWS_AS(ag::add_bias(a, t1.constant(Matrix::Zero(3, 1))), lieop::DimensionError);
}

TEST_CASE("optimizer: SGD and Adam") {
  SUBCASE("SGD, lr 0.1, grad 2, value 1 gives 0.8") {
    lieop::Parameter p("p", Matrix::Constant(1, 1, 1.0));
    p.grad()(0, 0) = 2.0;
    lieop::Parameter* ps[] = {&p};
    ag::optimizer_step(ps, {ag::OptimizerConfig::Kind::Sgd, 0.1});
    CHECK(p.value()(0, 0) == doctest::Approx(0.8).epsilon(1e-15));
  }
  SUBCASE("first Adam step moves against the gradient sign") {
    lieop::Parameter p("p", Matrix::Zero(1, 2));
    p.grad() << 3.0, -0.5;
    lieop::Parameter* ps[] = {&p};
    ag::optimizer_step(ps, {});
    CHECK(p.value()(0, 0) < 0.0);
    CHECK(p.value()(0, 1) > 0.0);
  }
  SUBCASE("200 Adam steps on (x - 3)^2") {
    lieop::Parameter x("x", Matrix::Zero(1, 1));
    ag::Optimizer opt({&x}, {ag::OptimizerConfig::Kind::Adam, 0.1});
    for (int step = 0; step < 200; ++step) {
      opt.zero_grad();
      Tape tape;
      const Var d = ag::sub(tape.param(x), tape.constant(Matrix::Constant(1, 1, 3.0)));
      tape.backward(ag::sum(ag::squared_norm(d)));
      opt.step();
    }
    CHECK(std::abs(x.value()(0, 0) - 3.0) < 1e-3);
    CHECK(opt.steps_taken() == 200);
  }
  SUBCASE("non-finite gradient aborts and names the parameter") {
    lieop::Parameter good("good", Matrix::Zero(1, 1)), bad("encoder.0.weight", Matrix::Zero(2, 2));
    good.grad()(0, 0) = 1.0;
    bad.grad()(1, 0) = std::numeric_limits<double>::quiet_NaN();
    ag::Optimizer opt({&good, &bad}, {});
    try {
      opt.step();
      FAIL("expected NumericalError");
    } catch (const lieop::NumericalError& e) {
      CHECK(std::string(e.what()).find("encoder.0.weight") != std::string::npos);
    }
    CHECK(good.value()(0, 0) == 0.0);
  }
}

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "lieop/errors.hpp"
#include "lieop/losses.hpp"
#include "oracles.hpp"

using lieop::Matrix;
using lieop::Vector;
namespace ag = lieop::ag;

namespace {

// Projection head that computes 1.01 x: W1 = [I; -I], W2 = [I, -I], zero biases.
lieop::ProjectionHead scaled_identity_proj(Eigen::Index m) {
  lieop::Rng rng(0);
  lieop::ProjectionHead proj("proj", m, rng);
  auto& layers = proj.mlp().layers();
  layers[0].weight().value() << Matrix::Identity(m, m), -Matrix::Identity(m, m);
  layers[0].bias().value().setZero();
  layers[1].weight().value() << Matrix::Identity(m, m), -Matrix::Identity(m, m);
  layers[1].bias().value().setZero();
  return proj;
}

Vector unit2(double cos) {
  Vector v(2);
  v << cos, std::sqrt(1.0 - cos * cos);
  return v;
}

double infonce_value(const Vector& z_hat, const Vector& z_g, const Matrix& negatives, lieop::ProjectionHead& proj,
                     double tau) {
  ag::Tape tape;
  return lieop::lie_infonce(tape, tape.constant(z_hat), tape.constant(z_g), tape.constant(negatives), proj, tau)
      .scalar();
}

lieop::ModelConfig tiny_config(lieop::SslKind ssl = lieop::SslKind::MaskedReconstruction) {
  lieop::ModelConfig c;
  c.input_dim = 8;
  c.embed_dim = 4;
  c.algebra_dim = 2;
  c.encoder_hidden = {6};
  c.coord_hidden = 5;
  c.decoder_hidden = 6;
  c.ssl = ssl;
  return c;
}

lieop::PairBatch tiny_batch(lieop::Rng& rng, std::vector<std::int64_t> instances) {
  const auto b = static_cast<Eigen::Index>(instances.size());
  lieop::PairBatch batch;
  batch.x = rng.normal_matrix(8, b);
  batch.x_prime = rng.normal_matrix(8, b);
  batch.delta = rng.uniform_matrix(1, b, -2.0, 2.0);
  batch.instances = std::move(instances);
  return batch;
}

}  // namespace

TEST_CASE("similarity_weight") {
  CHECK(lieop::similarity_weight(0.0) == 0.5);
  CHECK(lieop::similarity_weight(3.7) == lieop::similarity_weight(-3.7));
  CHECK(std::abs(lieop::similarity_weight(1.0) - 0.268941) < 1e-6);
  double prev = 0.5;
  for (double d = 0.25; d < 40.0; d += 0.25) {
    const double s = lieop::similarity_weight(d);
    CHECK(s < prev);
    CHECK(s > 0.0);
    prev = s;
  }
}

TEST_CASE("norm_penalty") {
  ag::Tape tape;
  CHECK(ag::sum(lieop::norm_penalty(tape.constant(Matrix::Zero(3, 1)), Matrix::Zero(1, 1))).scalar() == 0.0);
  CHECK(ag::sum(lieop::norm_penalty(tape.constant(Matrix::Ones(2, 1)), Matrix::Zero(1, 1))).scalar() == 1.0);

  lieop::Rng rng(1);
  const Matrix t = rng.normal_matrix(3, 4), delta = rng.normal_matrix(1, 4);
  const ag::Var tv = tape.constant(t);
  tape.backward(ag::sum(lieop::norm_penalty(tv, delta)));
  Matrix want(3, 4);
  for (Eigen::Index j = 0; j < 4; ++j) want.col(j) = 2.0 * lieop::similarity_weight(delta(0, j)) * t.col(j);
  CHECK(oracle::max_relative_error(tv.grad(), want) < 1e-14);

  const auto f = [&](std::vector<Matrix>& xs) {
    ag::Tape tp;
    return ag::sum(lieop::norm_penalty(tp.constant(xs[0]), delta)).scalar();
  };
  CHECK(oracle::max_relative_error(tv.grad(), oracle::numeric_gradient(f, {t}, 0)) < 1e-6);
}

TEST_CASE("build_negative_set") {
  const std::vector<std::int64_t> instances = {4, 9, 2, 7, 5};
  const auto with_guard = lieop::build_negative_set(instances, 1, true);
  const auto without = lieop::build_negative_set(instances, 1, false);
  CHECK(with_guard.size() == 3 * 4 + 1);
  CHECK(without.size() == 3 * 4);

  std::map<lieop::NegativeTag, int> counts;
  for (const auto& mem : with_guard.members) {
    ++counts[mem.tag];
    if (mem.tag == lieop::NegativeTag::OwnSourceZ)
      CHECK(mem.column == 1);
    else
      CHECK(mem.column != 1);
  }
  CHECK(counts[lieop::NegativeTag::OwnSourceZ] == 1);
  CHECK(counts[lieop::NegativeTag::OtherInstance] == 4);
  CHECK(counts[lieop::NegativeTag::OtherInstanceTransformed] == 4);
  CHECK(counts[lieop::NegativeTag::OtherInstanceInferred] == 4);

  const std::vector<std::int64_t> repeated = {3, 3, 8};
  CHECK(lieop::build_negative_set(repeated, 0, true).size() == 4);

  const std::vector<std::int64_t> single = {6, 6};
  CHECK_THROWS_AS(lieop::build_negative_set(single, 0, true), lieop::UsageError);
}

TEST_CASE("lie_infonce values") {
  auto proj = scaled_identity_proj(2);

  SUBCASE("equal similarities give ln(1 + |N|)") {
    lieop::Rng rng(2);
    lieop::ProjectionHead constant_proj("proj", 3, rng);
    for (auto& layer : constant_proj.mlp().layers()) layer.set_zero();
    constant_proj.mlp().layers().back().bias().value().setOnes();
    const double loss = infonce_value(rng.normal_matrix(3, 1).col(0), rng.normal_matrix(3, 1).col(0),
                                      rng.normal_matrix(3, 6), constant_proj, 0.1);
    CHECK(std::abs(loss - std::log(7.0)) < 1e-12);
  }
  SUBCASE("hand-evaluated softplus(-0.8)") {
    Vector anchor(2);
    anchor << 1, 0;
    const double loss = infonce_value(unit2(0.9), anchor, unit2(0.1), proj, 1.0);
    CHECK(std::abs(loss - 0.371101) < 1e-6);
    CHECK(std::abs(loss - std::log1p(std::exp(-0.8))) < 1e-12);
  }
  SUBCASE("vanishes as the temperature shrinks") {
    Vector anchor(2);
    anchor << 1, 0;
    Matrix negs(2, 2);
    negs << unit2(0.3), unit2(-0.5);
    CHECK(infonce_value(unit2(0.95), anchor, negs, proj, 0.01) < 1e-10);
  }
  SUBCASE("invariant to negative order, decreasing in the positive similarity") {
    lieop::Rng rng(3);
    Vector anchor(2);
    anchor << 1, 0;
    Matrix negs = rng.normal_matrix(2, 5);
    const double base = infonce_value(unit2(0.2), anchor, negs, proj, 0.5);
    Matrix shuffled(2, 5);
    shuffled << negs.col(3), negs.col(0), negs.col(4), negs.col(1), negs.col(2);
    CHECK(std::abs(infonce_value(unit2(0.2), anchor, shuffled, proj, 0.5) - base) < 1e-14);
    double prev = base;
    for (double c = 0.3; c <= 1.0; c += 0.1) {
      const double v = infonce_value(unit2(std::min(c, 1.0)), anchor, negs, proj, 0.5);
      CHECK(v < prev);
      prev = v;
    }
  }
  SUBCASE("empty negative set") {
    CHECK_THROWS_AS(infonce_value(unit2(0.5), unit2(0.5), Matrix(2, 0), proj, 0.1), lieop::UsageError);
  }
}

TEST_CASE("lie_infonce_batch equals per-anchor lie_infonce over materialized negatives") {
  lieop::Rng rng(4);
  lieop::ProjectionHead proj("proj", 4, rng);
  const Matrix z = rng.normal_matrix(4, 5), zg = rng.normal_matrix(4, 5), zh = rng.normal_matrix(4, 5);
  const std::vector<std::int64_t> instances = {0, 1, 2, 1, 3};
  for (bool guard : {true, false}) {
    ag::Tape tape;
    const ag::Var batch = lieop::lie_infonce_batch(tape, tape.constant(zh), tape.constant(zg), tape.constant(z),
                                                   instances, proj, 0.2, guard);
    for (Eigen::Index i = 0; i < 5; ++i) {
      const Matrix negs = lieop::build_negative_set(instances, i, guard).materialize(z, zg, zh);
      CHECK(std::abs(batch.value()(0, i) - infonce_value(zh.col(i), zg.col(i), negs, proj, 0.2)) < 1e-12);
    }
  }
}

TEST_CASE("collapse guard penalizes the collapsed configuration") {
  auto proj = scaled_identity_proj(2);
  const std::vector<std::int64_t> instances = {0, 1};
  Matrix a(2, 2), b(2, 2);
  // Collapsed: every code of an instance is the same point.
  a << 1, 0, 0, 1;
  // Separated: z differs from z' within each instance.
  b << std::cos(1.2), std::cos(1.2 + 1.5708), std::sin(1.2), std::sin(1.2 + 1.5708);
  const auto loss = [&](const Matrix& z, const Matrix& zg, bool guard) {
    ag::Tape tape;
    return ag::mean(lieop::lie_infonce_batch(tape, tape.constant(zg), tape.constant(zg), tape.constant(z), instances,
                                             proj, 0.1, guard))
        .scalar();
  };
  CHECK(loss(a, a, true) > loss(b, a, true));
  // Without the guard the collapsed point is no worse.
  CHECK(loss(a, a, false) <= loss(b, a, false) + 1e-12);
}

TEST_CASE("euclidean_loss") {
  ag::Tape tape;
  Vector p(2), q(2);
  p << 0, 0;
  q << 3, 4;
  CHECK(lieop::euclidean_loss(tape.constant(p), tape.constant(q)).scalar() == 25.0);
  CHECK(lieop::euclidean_loss(tape.constant(q), tape.constant(q)).scalar() == 0.0);
  CHECK_THROWS_AS(lieop::euclidean_loss(tape.constant(p), tape.constant(Vector::Zero(3))), lieop::DimensionError);

  lieop::Rng rng(5);
  const Matrix zg = rng.normal_matrix(3, 1), zh = rng.normal_matrix(3, 1);
  ag::Tape t2;
  const ag::Var zhv = t2.constant(zh);
  t2.backward(ag::sum(lieop::euclidean_loss(t2.constant(zg), zhv)));
  const auto f = [&](std::vector<Matrix>& xs) {
    ag::Tape tp;
    return lieop::euclidean_loss(tp.constant(zg), tp.constant(xs[0])).scalar();
  };
  CHECK(oracle::max_relative_error(zhv.grad(), oracle::numeric_gradient(f, {zh}, 0)) < 1e-6);
  CHECK(oracle::max_relative_error(zhv.grad(), 2.0 * (zh - zg)) < 1e-14);
}

TEST_CASE("pair invariance loss") {
  ag::Tape tape;
  const Matrix views = Matrix::Identity(2, 2);
  const ag::Var a = tape.constant(views);
  const ag::Var loss = lieop::ssl_loss_pair_invariance(a, a, a, lieop::PairMode::Views, 1.0);
  const double want = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(std::abs(loss.value()(0, 0) - want) < 1e-14);

  lieop::Rng rng(6);
  const Matrix anchors = rng.normal_matrix(3, 4), positives = rng.normal_matrix(3, 4);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(4);
  perm.indices() << 2, 0, 3, 1;
  const Matrix pa = anchors * perm, pp = positives * perm;
  const ag::Var base = lieop::pair_invariance_loss(tape.constant(anchors), tape.constant(positives), 0.3);
  const ag::Var permuted = lieop::pair_invariance_loss(tape.constant(pa), tape.constant(pp), 0.3);
  CHECK((base.value() * perm - permuted.value()).cwiseAbs().maxCoeff() < 1e-14);

  const ag::Var x = tape.constant(anchors), v = tape.constant(positives);
  CHECK(lieop::ssl_loss_pair_invariance(x, v, v, lieop::PairMode::Frames, 0.3).value() ==
        lieop::ssl_loss_pair_invariance(x, v, x, lieop::PairMode::Views, 0.3).value());

  CHECK_THROWS_AS(lieop::pair_invariance_loss(tape.constant(Matrix::Ones(3, 1)), tape.constant(Matrix::Ones(3, 1)),
                                              0.1),
                  lieop::UsageError);
}

TEST_CASE("masked reconstruction") {
  lieop::Rng rng(7);
  const Matrix x = rng.normal_matrix(10, 3);
  const auto mask = lieop::sample_coordinate_mask(10, 3, 0.5, rng);
  for (Eigen::Index j = 0; j < 3; ++j) CHECK(mask.col(j).count() == 5);
  CHECK(lieop::sample_coordinate_mask(10, 1, 0.01, rng).count() == 1);
  CHECK_THROWS_AS(lieop::sample_coordinate_mask(10, 1, 0.0, rng), lieop::ConfigError);
  CHECK_THROWS_AS(lieop::sample_coordinate_mask(10, 1, 1.0, rng), lieop::ConfigError);

  lieop::Rng a(8), b(8);
  CHECK(lieop::sample_coordinate_mask(20, 4, 0.3, a) == lieop::sample_coordinate_mask(20, 4, 0.3, b));

  const auto identity = [](ag::Tape&, ag::Var v) { return v; };
  const auto perfect = [&x](ag::Tape& tape, ag::Var) { return tape.constant(x); };
  ag::Tape tape;
  CHECK(lieop::ssl_loss_masked_reconstruction(tape, x, mask, identity, perfect).value().cwiseAbs().maxCoeff() ==
        0.0);

  const Matrix recon = rng.normal_matrix(10, 3);
  const auto fixed = [&recon](ag::Tape& tp, ag::Var) { return tp.constant(recon); };
  Matrix altered = x;
  for (Eigen::Index i = 0; i < 10; ++i)
    if (!mask(i, 1)) altered(i, 1) += 5.0;
  const Matrix base = lieop::ssl_loss_masked_reconstruction(tape, x, mask, identity, fixed).value();
  CHECK(lieop::ssl_loss_masked_reconstruction(tape, altered, mask, identity, fixed).value() == base);

  double want = 0.0;
  for (Eigen::Index i = 0; i < 10; ++i)
    if (mask(i, 0)) want += (recon(i, 0) - x(i, 0)) * (recon(i, 0) - x(i, 0));
  CHECK(std::abs(base(0, 0) - want / 5.0) < 1e-14);
}

TEST_CASE("total_loss: term-by-term recomputation") {
  lieop::Rng rng(9);
  auto model = lieop::LieModel::create(tiny_config(), rng);
  const auto batch = tiny_batch(rng, {0, 1, 2});
  const auto ssl = lieop::prepare_ssl_inputs(batch, lieop::SslKind::MaskedReconstruction, 0.5, false, rng);
  lieop::LossOptions options;

  ag::Tape tape;
  const auto terms = lieop::total_loss(tape, model, batch, ssl, options);

  // Independent recomputation from the plain forward passes.
  const Matrix z = model.encoder.forward(batch.x), zg = model.encoder.forward(batch.x_prime);
  double norm = 0.0, euc = 0.0, lie = 0.0;
  Matrix z_hat(4, 3);
  for (Eigen::Index j = 0; j < 3; ++j) {
    const auto t = lieop::infer_coordinates(model.head, z.col(j), zg.col(j), batch.delta(0, j));
    norm += lieop::similarity_weight(batch.delta(0, j)) * t.values.squaredNorm() / 3.0;
    z_hat.col(j) = lieop::apply_operator(t, model.basis, z.col(j));
    euc += (zg.col(j) - z_hat.col(j)).squaredNorm() / 3.0;
  }
  for (Eigen::Index j = 0; j < 3; ++j) {
    const Matrix negs = lieop::build_negative_set(batch.instances, j, true).materialize(z, zg, z_hat);
    lie += infonce_value(z_hat.col(j), zg.col(j), negs, model.proj, 0.1) / 3.0;
  }
  double ssl_sum = 0.0;
  for (const auto& [input, mask] : {std::pair{&batch.x, &ssl.mask_x}, std::pair{&batch.x_prime, &ssl.mask_x_prime}}) {
    const Matrix recon = model.decoder.forward(model.encoder.forward(
        input->cwiseProduct((1.0 - mask->cast<double>().array()).matrix())));
    for (Eigen::Index j = 0; j < 3; ++j) {
      double se = 0.0;
      for (Eigen::Index i = 0; i < 8; ++i)
        if ((*mask)(i, j)) se += (recon(i, j) - (*input)(i, j)) * (recon(i, j) - (*input)(i, j));
      ssl_sum += se / static_cast<double>(mask->col(j).count()) / 3.0;
    }
  }

  CHECK(std::abs(terms.norm.scalar() - norm) < 1e-12);
  CHECK(std::abs(terms.euc.scalar() - euc) < 1e-12);
  CHECK(std::abs(terms.lie.scalar() - lie) < 1e-12);
  CHECK(std::abs(terms.ssl.scalar() - ssl_sum) < 1e-12);
  CHECK(std::abs(terms.total.scalar() - (ssl_sum + 5.0 * lie + euc + norm)) < 1e-11);
}

TEST_CASE("total_loss: ablation identities") {
  lieop::Rng rng(10);
  auto model = lieop::LieModel::create(tiny_config(), rng);
  const auto batch = tiny_batch(rng, {0, 1, 2, 3});
  const auto ssl = lieop::prepare_ssl_inputs(batch, lieop::SslKind::MaskedReconstruction, 0.5, false, rng);
  const auto enc = model.encoder_parameters();

  lieop::LossOptions baseline;
  baseline.weights.lambda_lie = 0.0;
  baseline.weights.lambda_euc = 0.0;
  {
    ag::Tape tape;
    const auto terms = lieop::total_loss(tape, model, batch, ssl, baseline);
    CHECK(terms.total.scalar() - terms.norm.scalar() == doctest::Approx(terms.ssl.scalar()).epsilon(1e-15));
    CHECK_FALSE(terms.lie.valid());
  }

  // Encoder gradients of the baseline equal those of the SSL term alone.
  for (auto* p : model.parameters()) p->zero_grad();
  {
    ag::Tape tape;
    tape.backward(lieop::total_loss(tape, model, batch, ssl, baseline).total);
  }
  std::vector<Matrix> with_norm;
  for (auto* p : enc) with_norm.push_back(p->grad());
  for (auto* p : model.parameters()) p->zero_grad();
  {
    ag::Tape tape;
    tape.backward(lieop::total_loss(tape, model, batch, ssl, baseline).ssl);
  }
  for (std::size_t i = 0; i < enc.size(); ++i) CHECK(enc[i]->grad() == with_norm[i]);

  lieop::LossOptions none;
  none.weights = {0.0, 0.0, 0.0, 0.1};
  ag::Tape tape;
  const auto terms = lieop::total_loss(tape, model, batch, ssl, none);
  CHECK(terms.total.scalar() == terms.norm.scalar());
  for (auto* p : model.parameters()) p->zero_grad();
  tape.backward(terms.total);
  for (auto* p : enc) CHECK(p->grad().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("total_loss: encoder gradient depends on the detach") {
  lieop::Rng rng(11);
  auto model = lieop::LieModel::create(tiny_config(), rng);
  const auto batch = tiny_batch(rng, {0, 1, 2});
  lieop::LossOptions options;
  options.weights.lambda_ssl = 0.0;
  const auto enc = model.encoder_parameters();

  for (auto* p : model.parameters()) p->zero_grad();
  {
    ag::Tape tape;
    tape.backward(lieop::total_loss(tape, model, batch, {}, options).total);
  }
  std::vector<Matrix> detached;
  for (auto* p : enc) detached.push_back(p->grad());

  // Same objective with z and z' entering the head directly.
  for (auto* p : model.parameters()) p->zero_grad();
  {
    ag::Tape tape;
    const ag::Var z = model.encoder.forward(tape, tape.constant(batch.x));
    const ag::Var zg = model.encoder.forward(tape, tape.constant(batch.x_prime));
    const ag::Var parts[] = {z, zg, tape.constant(batch.delta)};
    const ag::Var t = model.head.mlp().forward(tape, ag::concat_rows(parts));
    const auto basis = model.basis.on_tape(tape);
    const ag::Var zh = lieop::apply_operator(tape, t, basis, z);
    const ag::Var lie = ag::mean(lieop::lie_infonce_batch(tape, zh, zg, z, batch.instances, model.proj, 0.1, true));
    const ag::Var total = ag::add(ag::add(ag::mean(lieop::norm_penalty(t, batch.delta)), ag::scale(lie, 5.0)),
                                  ag::mean(lieop::euclidean_loss(zg, zh)));
    tape.backward(total);
  }
  double diff = 0.0;
  for (std::size_t i = 0; i < enc.size(); ++i) diff += (enc[i]->grad() - detached[i]).norm();
  CHECK(diff > 1e-8);
}

TEST_CASE("total_loss: every parameter gradient matches finite differences") {
  for (auto kind : {lieop::SslKind::MaskedReconstruction, lieop::SslKind::PairInvariance}) {
    CAPTURE(std::string(lieop::to_string(kind)));
    lieop::Rng rng(12);
    auto config = tiny_config(kind);
    config.pair_head = true;
    auto model = lieop::LieModel::create(config, rng);
    for (Eigen::Index k = 0; k < 2; ++k) model.basis.generator(k).value() *= 10.0;
    const auto batch = tiny_batch(rng, {0, 1});
    const auto ssl = lieop::prepare_ssl_inputs(batch, kind, 0.5, true, rng);
    lieop::LossOptions options;
    options.lambda_frames = 0.5;

    const auto loss = [&] {
      ag::Tape tape;
      return lieop::total_loss(tape, model, batch, ssl, options).total.scalar();
    };
    // Encoder parameters reach the head only through stop_gradient, so their
    // oracle holds the coordinates at the unperturbed values.
    Matrix t_fixed;
    {
      ag::Tape tape;
      t_fixed = lieop::total_loss(tape, model, batch, ssl, options).t_hat.value();
    }
    const auto loss_fixed_coords = [&] {
      ag::Tape tape;
      const ag::Var z = model.encoder.forward(tape, tape.constant(batch.x));
      const ag::Var zg = model.encoder.forward(tape, tape.constant(batch.x_prime));
      return lieop::assemble_loss(tape, model, batch, ssl, options, z, zg, tape.constant(t_fixed)).total.scalar();
    };

    for (auto* p : model.parameters()) p->zero_grad();
    {
      ag::Tape tape;
      tape.backward(lieop::total_loss(tape, model, batch, ssl, options).total);
    }
    const auto enc = model.encoder_parameters();
    for (auto* p : model.parameters()) {
      CAPTURE(p->name());
      const bool is_encoder = std::find(enc.begin(), enc.end(), p) != enc.end();
      const Matrix numeric = is_encoder ? oracle::numeric_parameter_gradient(loss_fixed_coords, *p)
                                        : oracle::numeric_parameter_gradient(loss, *p);
      CHECK(oracle::max_relative_error(p->grad(), numeric) < 1e-4);
    }
  }
}

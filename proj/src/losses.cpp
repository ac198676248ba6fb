#include "lieop/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lieop {

double similarity_weight(double delta) { return 1.0 / (1.0 + std::exp(std::abs(delta))); }

ag::Var norm_penalty(ag::Var t_hat, const Matrix& delta) {
  if (delta.rows() != 1 || delta.cols() != t_hat.cols())
    throw DimensionError("norm_penalty: delta must be 1 x " + std::to_string(t_hat.cols()));
  const Matrix weights = delta.unaryExpr([](double d) { return similarity_weight(d); });
  return ag::multiply_const(ag::squared_norm(t_hat), weights);
}

const char* to_string(NegativeTag tag) {
  switch (tag) {
    case NegativeTag::OtherInstance: return "other-instance";
    case NegativeTag::OtherInstanceTransformed: return "other-instance-transformed";
    case NegativeTag::OtherInstanceInferred: return "other-instance-inferred";
    case NegativeTag::OwnSourceZ: return "own-source-z";
  }
  return "unknown";
}

Matrix NegativeSet::materialize(const Matrix& z, const Matrix& z_g, const Matrix& z_hat) const {
  Matrix out(z.rows(), static_cast<Eigen::Index>(members.size()));
  for (std::size_t k = 0; k < members.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    switch (members[k].tag) {
      case NegativeTag::OtherInstance:
      case NegativeTag::OwnSourceZ: out.col(kk) = z.col(members[k].column); break;
      case NegativeTag::OtherInstanceTransformed: out.col(kk) = z_g.col(members[k].column); break;
      case NegativeTag::OtherInstanceInferred: out.col(kk) = z_hat.col(members[k].column); break;
    }
  }
  return out;
}

NegativeSet build_negative_set(std::span<const std::int64_t> instances, Eigen::Index anchor, bool collapse_guard) {
  const auto b = static_cast<Eigen::Index>(instances.size());
  if (anchor < 0 || anchor >= b) throw UsageError("build_negative_set: anchor outside the batch");
  const std::int64_t own = instances[static_cast<std::size_t>(anchor)];
  const bool has_other = std::any_of(instances.begin(), instances.end(), [own](std::int64_t i) { return i != own; });
  if (!has_other) throw UsageError("build_negative_set: batch needs at least two distinct instances");

  NegativeSet set;
  for (Eigen::Index j = 0; j < b; ++j) {
    if (instances[static_cast<std::size_t>(j)] == own) continue;
    set.members.push_back({NegativeTag::OtherInstance, j});
    set.members.push_back({NegativeTag::OtherInstanceTransformed, j});
    set.members.push_back({NegativeTag::OtherInstanceInferred, j});
  }
  if (collapse_guard) set.members.push_back({NegativeTag::OwnSourceZ, anchor});
  return set;
}

namespace {

// -pos/tau + logsumexp([pos; candidates]/tau), column-wise.
ag::Var contrastive_from_logits(ag::Var positive, ag::Var logits_with_positive, double temperature) {
  return ag::add(ag::scale(positive, -1.0 / temperature),
                 ag::logsumexp(ag::scale(logits_with_positive, 1.0 / temperature)));
}

}  // namespace

ag::Var lie_infonce(ag::Tape& tape, ag::Var z_hat_g, ag::Var z_g, ag::Var negatives, ProjectionHead& proj,
                    double temperature) {
  if (negatives.cols() == 0) throw UsageError("lie_infonce: empty negative set");
  if (z_hat_g.cols() != 1 || z_g.cols() != 1) throw DimensionError("lie_infonce: expects single-column codes");
  if (!(temperature > 0.0)) throw ConfigError("lie_infonce: temperature must be positive", "temperature");
  const ag::Var p_hat = proj.forward(tape, z_hat_g);
  const ag::Var p_g = proj.forward(tape, z_g);
  const ag::Var p_neg = proj.forward(tape, negatives);
  const ag::Var positive = ag::cosine_similarity(p_hat, p_g);
  const ag::Var neg_sims = ag::matmul(ag::transpose(ag::normalize_columns(p_neg)), ag::normalize_columns(p_g));
  const ag::Var parts[] = {positive, neg_sims};
  return contrastive_from_logits(positive, ag::concat_rows(parts), temperature);
}

ag::Var lie_infonce_batch(ag::Tape& tape, ag::Var z_hat_g, ag::Var z_g, ag::Var z,
                          std::span<const std::int64_t> instances, ProjectionHead& proj, double temperature,
                          bool collapse_guard) {
  const Eigen::Index b = z_g.cols();
  if (static_cast<Eigen::Index>(instances.size()) != b || z.cols() != b || z_hat_g.cols() != b)
    throw DimensionError("lie_infonce_batch: batch sizes disagree");
  if (!(temperature > 0.0)) throw ConfigError("lie_infonce: temperature must be positive", "temperature");

  const ag::Var p_hat = ag::normalize_columns(proj.forward(tape, z_hat_g));
  const ag::Var p_z = ag::normalize_columns(proj.forward(tape, z));
  const ag::Var p_g = ag::normalize_columns(proj.forward(tape, z_g));
  const ag::Var blocks[] = {p_hat, p_z, p_g};
  // sims(r, i): row blocks [z_hat_j | z_j | z'_j] against z'_i.
  const ag::Var sims = ag::matmul(ag::transpose(ag::hstack(blocks)), p_g);

  BoolMatrix mask = BoolMatrix::Constant(3 * b, b, false);
  std::vector<Eigen::Index> positive_rows(static_cast<std::size_t>(b));
  for (Eigen::Index i = 0; i < b; ++i) {
    const NegativeSet negs = build_negative_set(instances, i, collapse_guard);
    mask(i, i) = true;
    positive_rows[static_cast<std::size_t>(i)] = i;
    for (const NegativeSet::Member& mem : negs.members) {
      switch (mem.tag) {
        case NegativeTag::OtherInstanceInferred: mask(mem.column, i) = true; break;
        case NegativeTag::OtherInstance:
        case NegativeTag::OwnSourceZ: mask(b + mem.column, i) = true; break;
        case NegativeTag::OtherInstanceTransformed: mask(2 * b + mem.column, i) = true; break;
      }
    }
  }
  const ag::Var positive = ag::gather(sims, positive_rows);
  return contrastive_from_logits(positive, ag::mask_apply(sims, mask), temperature);
}

ag::Var euclidean_loss(ag::Var z_g, ag::Var z_hat_g) { return ag::squared_norm(ag::sub(z_g, z_hat_g)); }

ag::Var pair_invariance_loss(ag::Var anchors, ag::Var positives, double temperature) {
  if (anchors.cols() < 2) throw UsageError("pair_invariance_loss: a batch of one has no negatives");
  if (anchors.rows() != positives.rows() || anchors.cols() != positives.cols())
    throw DimensionError("pair_invariance_loss: anchors and positives differ in shape");
  const ag::Var sims =
      ag::matmul(ag::transpose(ag::normalize_columns(positives)), ag::normalize_columns(anchors));
  std::vector<Eigen::Index> diag(static_cast<std::size_t>(anchors.cols()));
  std::iota(diag.begin(), diag.end(), Eigen::Index{0});
  return contrastive_from_logits(ag::gather(sims, diag), sims, temperature);
}

ag::Var ssl_loss_pair_invariance(ag::Var anchors, ag::Var second_views, ag::Var transformed, PairMode mode,
                                 double temperature) {
  return pair_invariance_loss(anchors, mode == PairMode::Views ? second_views : transformed, temperature);
}

BoolMatrix sample_coordinate_mask(Eigen::Index features, Eigen::Index batch, double mask_ratio, Rng& rng) {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0))
    throw ConfigError("mask_ratio must lie strictly between 0 and 1", "mask_ratio");
  const auto count = std::max<Eigen::Index>(1, std::llround(mask_ratio * static_cast<double>(features)));
  BoolMatrix mask = BoolMatrix::Constant(features, batch, false);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(features));
  for (Eigen::Index j = 0; j < batch; ++j) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    rng.shuffle(order);
    for (Eigen::Index k = 0; k < count; ++k) mask(order[static_cast<std::size_t>(k)], j) = true;
  }
  return mask;
}

ag::Var ssl_loss_masked_reconstruction(ag::Tape& tape, const Matrix& x, const BoolMatrix& mask,
                                       const std::function<ag::Var(ag::Tape&, ag::Var)>& encode,
                                       const std::function<ag::Var(ag::Tape&, ag::Var)>& decode) {
  if (mask.rows() != x.rows() || mask.cols() != x.cols())
    throw DimensionError("masked reconstruction: mask shape differs from input");
  const Matrix masked = mask.cast<double>();
  const Matrix visible_input = x.cwiseProduct((1.0 - masked.array()).matrix());
  const ag::Var recon = decode(tape, encode(tape, tape.constant(visible_input)));
  if (recon.rows() != x.rows() || recon.cols() != x.cols())
    throw DimensionError("masked reconstruction: decoder output does not match input shape");
  const ag::Var err = ag::squared_norm(ag::multiply_const(ag::sub(recon, tape.constant(x)), masked));
  const Matrix inv_count = masked.colwise().sum().cwiseMax(1.0).cwiseInverse();
  return ag::multiply_const(err, inv_count);
}

Matrix augment_view(const Matrix& x, Rng& rng) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double keep = rng.uniform() < 0.8 ? 1.0 : 0.0;
      out(i, j) = keep * x(i, j) + 0.1 * rng.normal();
    }
  return out;
}

SslInputs prepare_ssl_inputs(const PairBatch& batch, SslKind kind, double mask_ratio, bool need_views, Rng& rng) {
  SslInputs in;
  if (kind == SslKind::MaskedReconstruction) {
    in.mask_x = sample_coordinate_mask(batch.x.rows(), batch.size(), mask_ratio, rng);
    in.mask_x_prime = sample_coordinate_mask(batch.x.rows(), batch.size(), mask_ratio, rng);
  }
  if (kind == SslKind::PairInvariance || need_views) {
    in.x_view_a = augment_view(batch.x, rng);
    in.x_view_b = augment_view(batch.x, rng);
    in.x_prime_view_a = augment_view(batch.x_prime, rng);
    in.x_prime_view_b = augment_view(batch.x_prime, rng);
  }
  return in;
}

LossTerms total_loss(ag::Tape& tape, LieModel& model, const PairBatch& batch, const SslInputs& ssl,
                     const LossOptions& options) {
  if (batch.x.cols() != batch.x_prime.cols() || batch.delta.cols() != batch.x.cols())
    throw DimensionError("total_loss: batch components disagree in size");

  const ag::Var z = model.encoder.forward(tape, tape.constant(batch.x));
  const ag::Var z_g = model.encoder.forward(tape, tape.constant(batch.x_prime));
  const ag::Var t_hat = infer_coordinates(tape, model.head, z, z_g, batch.delta);
  return assemble_loss(tape, model, batch, ssl, options, z, z_g, t_hat);
}

LossTerms assemble_loss(ag::Tape& tape, LieModel& model, const PairBatch& batch, const SslInputs& ssl,
                        const LossOptions& options, ag::Var z, ag::Var z_g, ag::Var t_hat) {
  const LossWeights& w = options.weights;
  LossTerms terms;
  auto encode = [&model](ag::Tape& tp, ag::Var x) { return model.encoder.forward(tp, x); };
  terms.z = z;
  terms.z_g = z_g;
  terms.t_hat = t_hat;
  terms.norm = ag::mean(norm_penalty(terms.t_hat, batch.delta * model.head.delta_scale()));
  ag::Var total = terms.norm;

  if (w.lambda_lie != 0.0 || w.lambda_euc != 0.0) {
    const std::vector<ag::Var> basis = model.basis.on_tape(tape);
    terms.z_hat_g = apply_operator(tape, terms.t_hat, basis, terms.z);
    if (w.lambda_lie != 0.0) {
      terms.lie = ag::mean(lie_infonce_batch(tape, terms.z_hat_g, terms.z_g, terms.z, batch.instances, model.proj,
                                             w.temperature, options.collapse_guard));
      total = ag::add(total, ag::scale(terms.lie, w.lambda_lie));
    }
    terms.euc = ag::mean(euclidean_loss(terms.z_g, terms.z_hat_g));
    if (w.lambda_euc != 0.0) total = ag::add(total, ag::scale(terms.euc, w.lambda_euc));
  }

  if (w.lambda_ssl != 0.0) {
    ag::Var ssl_z, ssl_zg;
    if (model.config.ssl == SslKind::MaskedReconstruction) {
      if (!model.has_decoder) throw UsageError("total_loss: masked reconstruction needs a decoder");
      auto decode = [&model](ag::Tape& tp, ag::Var h) { return model.decoder.forward(tp, h); };
      ssl_z = ag::mean(ssl_loss_masked_reconstruction(tape, batch.x, ssl.mask_x, encode, decode));
      ssl_zg = ag::mean(ssl_loss_masked_reconstruction(tape, batch.x_prime, ssl.mask_x_prime, encode, decode));
    } else {
      auto views = [&](const Matrix& a, const Matrix& b) {
        const ag::Var pa = model.ssl_proj.forward(tape, encode(tape, tape.constant(a)));
        const ag::Var pb = model.ssl_proj.forward(tape, encode(tape, tape.constant(b)));
        return ag::mean(pair_invariance_loss(pa, pb, w.temperature));
      };
      ssl_z = views(ssl.x_view_a, ssl.x_view_b);
      ssl_zg = views(ssl.x_prime_view_a, ssl.x_prime_view_b);
    }
    terms.ssl = ag::add(ssl_z, ssl_zg);
    total = ag::add(total, ag::scale(terms.ssl, w.lambda_ssl));
  }

  if (options.lambda_frames != 0.0) {
    if (!model.has_ssl_proj) throw UsageError("total_loss: frames control needs the pair projection head");
    const ag::Var pz = model.ssl_proj.forward(tape, terms.z);
    const ag::Var pg = model.ssl_proj.forward(tape, terms.z_g);
    terms.frames = ag::mean(ssl_loss_pair_invariance(pz, pz, pg, PairMode::Frames, w.temperature));
    total = ag::add(total, ag::scale(terms.frames, options.lambda_frames));
  }

  terms.total = total;
  return terms;
}

}  // namespace lieop

#include "lieop/model.hpp"

namespace lieop {

const char* to_string(EncoderKind kind) { return kind == EncoderKind::Mlp ? "mlp" : "identity"; }

const char* to_string(SslKind kind) {
  return kind == SslKind::MaskedReconstruction ? "masked_reconstruction" : "pair_invariance";
}

EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "mlp") return EncoderKind::Mlp;
  if (s == "identity") return EncoderKind::Identity;
  throw ConfigError("unknown encoder kind '" + s + "' (expected mlp or identity)", "encoder");
}

SslKind ssl_kind_from_string(const std::string& s) {
  if (s == "masked_reconstruction") return SslKind::MaskedReconstruction;
  if (s == "pair_invariance") return SslKind::PairInvariance;
  throw ConfigError("unknown ssl kind '" + s + "' (expected masked_reconstruction or pair_invariance)", "ssl");
}

Encoder::Encoder(const ModelConfig& config, Rng& rng) : kind_(config.encoder), input_dim_(config.input_dim) {
  if (kind_ == EncoderKind::Identity) {
    if (config.input_dim != config.embed_dim)
      throw ConfigError("identity encoder needs input_dim == embed_dim (" + std::to_string(config.input_dim) +
                            " vs " + std::to_string(config.embed_dim) + ")",
                        "embed_dim");
    return;
  }
  std::vector<Eigen::Index> widths{config.input_dim};
  widths.insert(widths.end(), config.encoder_hidden.begin(), config.encoder_hidden.end());
  widths.push_back(config.embed_dim);
  mlp_ = nn::Mlp("encoder", widths, rng, config.leaky_slope);
}

ag::Var Encoder::forward(ag::Tape& tape, ag::Var x) {
  if (x.rows() != input_dim_)
    throw DimensionError("encoder: input of size " + std::to_string(x.rows()) + ", expected " +
                         std::to_string(input_dim_));
  if (kind_ == EncoderKind::Identity) return x;
  return mlp_.forward(tape, x);
}

Matrix Encoder::forward(const Matrix& x) const {
  if (x.rows() != input_dim_)
    throw DimensionError("encoder: input of size " + std::to_string(x.rows()) + ", expected " +
                         std::to_string(input_dim_));
  if (kind_ == EncoderKind::Identity) return x;
  return mlp_.forward(x);
}

void Encoder::collect(std::vector<Parameter*>& out) {
  if (kind_ == EncoderKind::Mlp) mlp_.collect(out);
}

LieModel LieModel::create(const ModelConfig& config, Rng& rng) {
  LieModel model;
  model.config = config;
  const Eigen::Index m = config.embed_dim;
  const Eigen::Index hidden = config.coord_hidden > 0 ? config.coord_hidden : 4 * m;
  model.encoder = Encoder(config, rng);
  model.head = CoordHead(m, config.algebra_dim, hidden, rng, config.leaky_slope, config.delta_scale);
  model.proj = ProjectionHead("proj", m, rng, config.leaky_slope);
  model.basis = LieBasis(config.algebra_dim, m, rng, config.skew_init);
  if (config.ssl == SslKind::MaskedReconstruction) {
    model.decoder = nn::Mlp("decoder", {m, config.decoder_hidden, config.input_dim}, rng, config.leaky_slope);
    model.has_decoder = true;
  }
  if (config.ssl == SslKind::PairInvariance || config.pair_head) {
    model.ssl_proj = ProjectionHead("ssl_proj", m, rng, config.leaky_slope);
    model.has_ssl_proj = true;
  }
  return model;
}

std::vector<Parameter*> LieModel::parameters() {
  std::vector<Parameter*> out;
  encoder.collect(out);
  head.collect(out);
  proj.collect(out);
  basis.collect(out);
  if (has_decoder) decoder.collect(out);
  if (has_ssl_proj) ssl_proj.collect(out);
  return out;
}

std::vector<Parameter*> LieModel::encoder_parameters() {
  std::vector<Parameter*> out;
  encoder.collect(out);
  return out;
}

}  // namespace lieop

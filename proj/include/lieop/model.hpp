#pragma once

#include <string>
#include <vector>

#include "lieop/lie_operator.hpp"
#include "lieop/nn.hpp"

namespace lieop {

enum class EncoderKind { Mlp, Identity };
enum class SslKind { MaskedReconstruction, PairInvariance };

const char* to_string(EncoderKind kind);
const char* to_string(SslKind kind);
EncoderKind encoder_kind_from_string(const std::string& s);
SslKind ssl_kind_from_string(const std::string& s);

struct ModelConfig {
  Eigen::Index input_dim = 256;
  Eigen::Index embed_dim = 16;
  Eigen::Index algebra_dim = 4;
  EncoderKind encoder = EncoderKind::Mlp;
  std::vector<Eigen::Index> encoder_hidden = {64, 32};
  /// 0 selects 4 * embed_dim.
  Eigen::Index coord_hidden = 0;
  Eigen::Index decoder_hidden = 64;
  double leaky_slope = 0.01;
  double delta_scale = 1.0;
  bool skew_init = false;
  SslKind ssl = SslKind::MaskedReconstruction;
  /// Adds the projection head used by pair-invariance losses even when the
  /// SSL kind is masked reconstruction (frames control).
  bool pair_head = false;

  bool operator==(const ModelConfig&) const = default;
};

/// The encoder f: an MLP F -> hidden... -> m with leaky ReLU, or the identity
/// map (requires F == m).
class Encoder {
 public:
  Encoder() = default;
  Encoder(const ModelConfig& config, Rng& rng);

  ag::Var forward(ag::Tape& tape, ag::Var x);
  Matrix forward(const Matrix& x) const;
  EncoderKind kind() const { return kind_; }
  void collect(std::vector<Parameter*>& out);

 private:
  EncoderKind kind_ = EncoderKind::Mlp;
  Eigen::Index input_dim_ = 0;
  nn::Mlp mlp_;
};

/// Every trainable piece of the self-supervised Lie model.
struct LieModel {
  ModelConfig config;
  Encoder encoder;
  CoordHead head;
  ProjectionHead proj;
  LieBasis basis;
  nn::Mlp decoder;          // masked reconstruction only
  ProjectionHead ssl_proj;  // pair invariance only
  bool has_decoder = false;
  bool has_ssl_proj = false;

  static LieModel create(const ModelConfig& config, Rng& rng);

  /// Stable order used by optimizers and checkpoints.
  std::vector<Parameter*> parameters();
  std::vector<Parameter*> encoder_parameters();
};

}  // namespace lieop

#pragma once

// Self-supervised training, supervised classifier phases, the four-cell
// generalization evaluation, ablations and seed aggregation.

#include <array>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lieop/datagen.hpp"
#include "lieop/losses.hpp"
#include "lieop/model.hpp"

namespace lieop {

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;
  bool collapse_guard = true;
  double lambda_frames = 0.0;
  double mask_ratio = 0.5;

  double learning_rate = 1e-3;
  int batch_size = 45;
  int steps = 5000;
  int log_every = 10;
  std::uint64_t seed = 0;
  std::string dataset;

  // Supervised phases.
  int classifier_option = 2;  // 1: plain, 2: with sampled latent neighbours
  int neighbors = 1;
  double neighbor_sigma = 0.5;
  int linear_steps = 2000;
  int finetune_steps = 3000;
  double linear_lr = 0.1;
  double finetune_lr = 1e-3;
  int classifier_batch = 64;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  TrainConfig config;
  /// Number of optimizer steps taken.
  std::uint64_t step = 0;
  std::vector<NamedTensor> parameters;
  /// Adam moments, named "adam.m/<param>" and "adam.v/<param>".
  std::vector<NamedTensor> optimizer_state;
};

/// Copies parameter values (and optionally optimizer moments) out of a model.
Checkpoint capture_checkpoint(const TrainConfig& config, LieModel& model, ag::Optimizer* optimizer,
                              std::uint64_t step);
/// Rebuilds the model a checkpoint was taken from. Parameter names and shapes
/// must match the configuration exactly.
LieModel restore_model(const Checkpoint& ckpt);

struct LossLogRow {
  std::uint64_t step = 0;
  double total = 0.0;
  double ssl = 0.0;
  double lie = 0.0;
  double euc = 0.0;
  double norm = 0.0;
  double wall_ms = 0.0;
};

struct SslOptions {
  /// Continue from this checkpoint; step numbering carries on.
  const Checkpoint* resume = nullptr;
  /// Record elapsed wall time in the log; zero otherwise so logs are reproducible.
  bool record_wall_time = false;
  std::function<void(const LossLogRow&)> on_log;
};

struct SslResult {
  Checkpoint checkpoint;
  std::vector<LossLogRow> log;
};

/// SSL phase plan: half of the known instances vary in pose.
SplitPlan ssl_plan(const PoseDataset& dataset);

/// Packs frame pairs into column batches.
PairBatch make_pair_batch(const std::vector<FramePair>& pairs);

/// Runs `config.steps` steps of the joint objective on pair batches of
/// distinct varying instances. Each step draws its randomness from
/// mix_seed(seed, step), so the data stream depends only on the seed and
/// resumed runs match uninterrupted ones. Throws NumericalError naming the
/// step and the loss terms when the objective is not finite.
SslResult ssl_phase(const PoseDataset& dataset, const TrainConfig& config, const SslOptions& options = {});

// ---------------------------------------------------------------------------
// Evaluation

enum class Cell { KnownTypical = 0, KnownNewPose = 1, UnknownTypical = 2, UnknownNewPose = 3 };
inline constexpr std::array<Cell, 4> kCells = {Cell::KnownTypical, Cell::KnownNewPose, Cell::UnknownTypical,
                                               Cell::UnknownNewPose};
const char* to_string(Cell cell);
Cell cell_from_string(const std::string& s);

using CellValues = std::array<std::optional<double>, 4>;

struct EvalReport {
  std::vector<std::uint64_t> seeds;
  /// One row per seed; a cell without frames is absent rather than zero.
  std::vector<CellValues> per_seed;
  CellValues mean;
  /// Standard error over seeds; absent with fewer than two seeds.
  CellValues stderr_;

  /// Frames per cell.
  std::array<std::size_t, 4> cell_sizes{};

  /// Cell mean minus the known x typical mean.
  CellValues gaps() const;
  /// Mean accuracy over all unknown-instance frames (both unknown cells pooled).
  std::optional<double> unknown_accuracy() const;
};

/// Mean and standard error (n - 1 denominator) per cell over all seeds of all
/// reports. Throws UsageError when reports disagree on which cells exist.
EvalReport aggregate_seeds(const std::vector<EvalReport>& reports);

enum class EvalMode { Linear, Finetune };
const char* to_string(EvalMode mode);
EvalMode eval_mode_from_string(const std::string& s);

struct ClassifierSettings {
  EvalMode mode = EvalMode::Linear;
  double proportion = 0.5;
  int option = 1;
  int neighbors = 1;
  double sigma = 0.5;
  int steps = 2000;
  double learning_rate = 1e-2;  // classifier
  double encoder_learning_rate = 1e-3;
  int batch_size = 64;
  std::uint64_t seed = 0;
};

ClassifierSettings classifier_settings(const TrainConfig& config, EvalMode mode, double proportion);

struct TrainedClassifier {
  LieModel model;
  nn::Linear head;
  SplitPlan plan;
  std::uint64_t seed = 0;
};

/// Trains an affine classifier on class labels with the balanced sampler.
/// Linear mode freezes the encoder; finetune mode trains it too. Option 2
/// adds `neighbors` latent points exp(t^T L) z per sample to the loss.
TrainedClassifier train_classifier(const Checkpoint& ckpt, const PoseDataset& dataset,
                                   const ClassifierSettings& settings);

/// Top-1 predictions; ties go to the lowest class index.
std::vector<int> predict(const TrainedClassifier& clf, const Matrix& features);
int argmax_lowest(const Eigen::Ref<const Vector>& logits);

/// Frames of one cell as (instance, pose) references.
std::vector<FrameRef> cell_frames(const PoseDataset& dataset, const SplitPlan& plan, Cell cell);

/// Per-cell top-1 accuracy of a trained classifier (single seed).
EvalReport evaluate(const TrainedClassifier& clf, const PoseDataset& dataset);

EvalReport linear_eval(const Checkpoint& ckpt, const PoseDataset& dataset, double proportion);
EvalReport finetune(const Checkpoint& ckpt, const PoseDataset& dataset, double proportion);
EvalReport classify_with_neighbors(const Checkpoint& ckpt, const PoseDataset& dataset, int k, double sigma,
                                   double proportion, EvalMode mode = EvalMode::Linear);

// ---------------------------------------------------------------------------
// Ablations

struct AblationVariant {
  std::string name;
  LossWeights weights;
};

/// Named weight vectors: full, no_euc, lie_only, baseline.
AblationVariant ablation_variant(const std::string& name, const LossWeights& base);
std::vector<AblationVariant> default_ablation(const LossWeights& base);

struct AblationRow {
  AblationVariant variant;
  EvalReport report;
};

struct RunSpec {
  std::string run_id;
  TrainConfig config;
};

struct RunOutcome {
  std::string run_id;
  std::uint64_t seed = 0;
  std::optional<EvalReport> report;
  /// Set when the run failed; other runs are unaffected.
  std::string error;
  std::exception_ptr exception;
};

/// ssl_phase followed by evaluation for every (spec, seed), in spec-major
/// order. Runs are spread over `jobs` threads and failures are captured per run.
std::vector<RunOutcome> run_many(const PoseDataset& dataset, const std::vector<RunSpec>& specs,
                                 const std::vector<std::uint64_t>& seeds, EvalMode mode, double proportion, int jobs);

/// ssl_phase followed by evaluation for every variant and seed, on the same
/// data. Rethrows the first failure.
std::vector<AblationRow> run_ablation(const PoseDataset& dataset, const TrainConfig& base,
                                      const std::vector<AblationVariant>& variants,
                                      const std::vector<std::uint64_t>& seeds, EvalMode mode, double proportion,
                                      int jobs = 1);

// ---------------------------------------------------------------------------
// Diagnostics on held-out pairs

/// Instances that do not vary during the SSL phase (known non-varying,
/// validation and test instances).
SplitPlan held_out_plan(const PoseDataset& dataset);

struct PairCodes {
  Matrix z, z_g, z_hat, t_hat;  // m x n, except t_hat: d x n
  Vector delta;
  std::vector<int> instances;
};

/// Encodes pairs and applies the learned operator with inferred coordinates.
PairCodes encode_pairs(const LieModel& model, const std::vector<FramePair>& pairs);

/// Fraction of queries z_hat_i whose cosine nearest neighbour among the
/// batch's z' columns is z'_i. Batches hold distinct instances.
double retrieval_top1(const LieModel& model, const PoseDataset& dataset, int batch_size, int batches, Rng& rng);

/// Mean cosine similarity between z_hat and z' over held-out pairs.
double mean_transfer_cosine(const LieModel& model, const PoseDataset& dataset, int pairs, Rng& rng);

/// Spearman rank correlation (average ranks for ties).
double spearman(const Vector& a, const Vector& b);

/// Spearman correlation between |delta| and |t_hat| over held-out pairs.
double norm_distance_spearman(const LieModel& model, const PoseDataset& dataset, int pairs, Rng& rng);

/// Mean distance between embeddings of the same instance at different poses
/// divided by the mean distance between embeddings of different instances.
/// Uses held-out instances at `poses_per_instance` evenly spaced poses.
double spread_ratio(const LieModel& model, const PoseDataset& dataset, int poses_per_instance = 9);

}  // namespace lieop

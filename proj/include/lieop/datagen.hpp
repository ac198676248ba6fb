#pragma once

// Procedural pose-variation corpus: classes of closed star-shaped glyphs,
// per-instance parameter jitter, and a dense rotation grid per instance.
// Frames are either anti-aliased rasters or flattened point sets. In 3-D
// mode every instance carries three glyphs, each turned by its own axis
// angle (an exact torus action).

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lieop/rng.hpp"
#include "lieop/tensor.hpp"

namespace lieop {

enum class FrameMode { Raster, PointSet };

const char* to_string(FrameMode mode);
FrameMode frame_mode_from_string(const std::string& s);

struct DataConfig {
  int classes = 10;
  int instances_per_class = 12;
  FrameMode mode = FrameMode::Raster;
  int pose_dims = 2;  // 2 (in-plane) or 3 (three axes)
  int raster_size = 16;
  int points_per_frame = 16;
  int pose_step_deg = 4;
  double val_fraction = 0.10;
  double test_fraction = 0.15;
  double instance_jitter = 0.12;
  /// Typical poses are the grid points within this many steps of pose 0.
  int typical_width = 0;
  std::uint64_t seed = 0;

  int poses_per_instance() const { return 360 / pose_step_deg; }
  Eigen::Index feature_dim() const;
  void validate() const;
  bool operator==(const DataConfig&) const = default;
};

enum class InstanceSplit : std::uint8_t { Train = 0, Val = 1, Test = 2 };

struct InstanceSpec {
  int class_id = 0;
  int instance_id = 0;
  /// Radial harmonic parameters, one glyph after another: for each glyph
  /// [base radius, a_1, phi_1, ..., a_H, phi_H, point offset].
  std::vector<double> shape;
};

/// Angles in degrees; only the first `dims` entries are meaningful.
struct Pose {
  std::array<double, 3> angles{0.0, 0.0, 0.0};
  int dims = 2;
};

struct Frame {
  Vector features;
  Pose pose;
  int instance = 0;
  int pose_index = 0;
};

struct FramePair {
  Frame x;
  Frame x_prime;
  double delta = 0.0;
};

/// Signed minimal angle difference b - a, wrapped to (-180, 180].
double angle_difference(double a, double b);

/// Transformation magnitude between two poses: the wrapped difference in
/// 2-D, the mean of the three wrapped per-axis differences in 3-D.
double pose_delta(const Pose& from, const Pose& to);

class PoseDataset {
 public:
  PoseDataset() = default;
  PoseDataset(DataConfig config, std::vector<InstanceSpec> instances, std::vector<Pose> poses, Matrix features,
              std::vector<InstanceSplit> splits, std::vector<std::uint32_t> varying_rank);

  const DataConfig& config() const { return config_; }
  int num_instances() const { return static_cast<int>(instances_.size()); }
  int num_poses() const { return static_cast<int>(poses_.size()); }
  Eigen::Index feature_dim() const { return features_.rows(); }

  const InstanceSpec& instance(int i) const { return instances_.at(static_cast<std::size_t>(i)); }
  const std::vector<InstanceSpec>& instances() const { return instances_; }
  const Pose& pose(int p) const { return poses_.at(static_cast<std::size_t>(p)); }
  const std::vector<Pose>& poses() const { return poses_; }
  InstanceSplit split(int i) const { return splits_.at(static_cast<std::size_t>(i)); }
  const std::vector<InstanceSplit>& splits() const { return splits_; }
  /// Order in which known instances are switched to varying; UINT32_MAX for
  /// instances outside the training split.
  std::uint32_t varying_rank(int i) const { return varying_rank_.at(static_cast<std::size_t>(i)); }
  const std::vector<std::uint32_t>& varying_ranks() const { return varying_rank_; }
  int class_of(int i) const { return instance(i).class_id; }

  Eigen::Index frame_index(int instance, int pose) const {
    return static_cast<Eigen::Index>(instance) * num_poses() + pose;
  }
  auto frame_features(int instance, int pose) const { return features_.col(frame_index(instance, pose)); }
  Frame frame(int instance, int pose) const;
  const Matrix& features() const { return features_; }

  bool is_typical_pose(int pose) const;
  std::vector<int> typical_poses() const;
  std::vector<int> known_instances() const;    // training split
  std::vector<int> unknown_instances() const;  // test split

 private:
  DataConfig config_;
  std::vector<InstanceSpec> instances_;
  std::vector<Pose> poses_;
  Matrix features_;  // F x (instances * poses), column = instance * poses + pose
  std::vector<InstanceSplit> splits_;
  std::vector<std::uint32_t> varying_rank_;
};

/// Pose of grid point p: p * step in 2-D; in 3-D the axes advance at strides
/// 1, 7 and 13 around the grid so the 90 stored poses cover all three axes.
Pose grid_pose(const DataConfig& config, int p);

/// Point set (K x 2 per glyph, stacked) of an instance at a pose, before any
/// rasterization. Rows are points.
Matrix instance_points(const DataConfig& config, const InstanceSpec& spec, const Pose& pose);

/// Rotates every glyph's points by the matching axis angle (degrees).
Matrix rotate_points(const Matrix& points, const Pose& pose, int points_per_glyph);

PoseDataset generate_dataset(const DataConfig& config);

/// Which known instances vary in pose during a phase.
struct SplitPlan {
  double proportion = 0.5;
  std::vector<bool> varying;  // per instance

  int varying_count() const;
};

/// Marks max(1, floor(p * known)) known instances as varying, following the
/// dataset's varying rank. p must be one of 0.05, 0.25, 0.5.
SplitPlan make_splits(const PoseDataset& dataset, double diversity_proportion);
bool is_valid_proportion(double p);

/// Two distinct poses of a varying instance, drawn without replacement.
FramePair sample_pair(const PoseDataset& dataset, const SplitPlan& plan, int instance, Rng& rng);

struct FrameRef {
  int instance = 0;
  int pose = 0;
};

/// Instances first (varying and non-varying groups drawn with equal
/// probability), then a frame: any pose for varying instances, a typical
/// pose otherwise. Every batch holds at least two distinct instances.
std::vector<FrameRef> balanced_batch_sampler(const PoseDataset& dataset, const SplitPlan& plan, int batch_size,
                                             Rng& rng);

/// Pair batch for the self-supervised phase: `batch_size` distinct varying
/// instances, one pair each.
std::vector<FramePair> sample_pair_batch(const PoseDataset& dataset, const SplitPlan& plan, int batch_size, Rng& rng);

}  // namespace lieop

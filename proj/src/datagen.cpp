#include "lieop/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lieop/errors.hpp"

namespace lieop {

namespace {

constexpr int kHarmonics = 8;
// Per glyph: base, (a_h, phi_h) for h = 1..H, point offset.
constexpr int kGlyphParams = 2 + 2 * kHarmonics;
constexpr int kTableSize = 1440;  // quarter-degree radial lookup
constexpr int kSuper = 4;         // subsamples per pixel side
constexpr double kRasterScale = 0.26;

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

int glyphs(const DataConfig& c) { return c.pose_dims == 3 ? 3 : 1; }

double radius(const double* g, double phi_deg) {
  const double phi = deg2rad(phi_deg);
  double r = 1.0;
  for (int h = 1; h <= kHarmonics; ++h) r += g[2 * h - 1] * std::cos(h * phi + g[2 * h]);
  return g[0] * std::max(r, 0.15);
}

std::vector<double> radial_table(const double* g) {
  std::vector<double> table(kTableSize + 1);
  for (int i = 0; i <= kTableSize; ++i) table[static_cast<std::size_t>(i)] = radius(g, 360.0 * i / kTableSize);
  return table;
}

double lookup(const std::vector<double>& table, double phi_deg) {
  double u = std::fmod(phi_deg, 360.0);
  if (u < 0) u += 360.0;
  const double pos = u * kTableSize / 360.0;
  const auto i = std::min(static_cast<int>(pos), kTableSize - 1);
  const double frac = pos - i;
  return (1.0 - frac) * table[static_cast<std::size_t>(i)] + frac * table[static_cast<std::size_t>(i + 1)];
}

struct Subsample {
  double rho;
  double phi_deg;
  Eigen::Index pixel;
};

std::vector<Subsample> raster_subsamples(int size) {
  std::vector<Subsample> out;
  out.reserve(static_cast<std::size_t>(size * size * kSuper * kSuper));
  const double scale = kRasterScale * size;
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j)
      for (int a = 0; a < kSuper; ++a)
        for (int b = 0; b < kSuper; ++b) {
          const double x = (j + (b + 0.5) / kSuper) - size / 2.0;
          const double y = size / 2.0 - (i + (a + 0.5) / kSuper);
          out.push_back({std::hypot(x, y) / scale, std::atan2(y, x) * 180.0 / std::numbers::pi,
                         static_cast<Eigen::Index>(i * size + j)});
        }
  return out;
}

std::vector<double> class_template(std::uint64_t seed, int class_id) {
  Rng rng(seed * 0x100000001B3ULL + 977ULL * static_cast<std::uint64_t>(class_id + 1));
  std::vector<double> t(kGlyphParams * 3);
  for (int g = 0; g < 3; ++g) {
    double* p = t.data() + g * kGlyphParams;
    const int dominant = 2 + (class_id + g) % 5;
    const bool star = ((class_id / 5) + g) % 2 == 1;
    p[0] = 1.0;
    for (int h = 1; h <= kHarmonics; ++h) {
      p[2 * h - 1] = rng.uniform(0.0, 0.05);
      p[2 * h] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    p[1] = 0.14;  // first harmonic breaks rotational symmetry
    p[2 * dominant - 1] = star ? 0.42 : 0.26;
    if (star && 2 * dominant <= kHarmonics) p[4 * dominant - 1] = 0.12;
    p[kGlyphParams - 1] = 0.0;
  }
  return t;
}

}  // namespace

const char* to_string(FrameMode mode) { return mode == FrameMode::Raster ? "raster" : "points"; }

FrameMode frame_mode_from_string(const std::string& s) {
  if (s == "raster") return FrameMode::Raster;
  if (s == "points") return FrameMode::PointSet;
  throw ConfigError("unknown frame mode '" + s + "' (expected raster or points)", "mode");
}

Eigen::Index DataConfig::feature_dim() const {
  const Eigen::Index per_glyph =
      mode == FrameMode::Raster ? static_cast<Eigen::Index>(raster_size) * raster_size : 2 * points_per_frame;
  return per_glyph * (pose_dims == 3 ? 3 : 1);
}

void DataConfig::validate() const {
  if (classes < 2) throw ConfigError("classes must be at least 2", "classes");
  if (instances_per_class < 2) throw ConfigError("instances_per_class must be at least 2", "instances_per_class");
  if (pose_dims != 2 && pose_dims != 3) throw ConfigError("pose_dims must be 2 or 3", "pose_dims");
  if (pose_step_deg < 1 || 360 % pose_step_deg != 0)
    throw ConfigError("pose_step_deg must divide 360", "pose_step_deg");
  if (raster_size < 4) throw ConfigError("raster_size must be at least 4", "raster_size");
  if (points_per_frame < 1) throw ConfigError("points_per_frame must be positive", "points_per_frame");
  if (val_fraction < 0 || test_fraction <= 0 || val_fraction + test_fraction >= 1)
    throw ConfigError("split fractions must satisfy 0 <= val, 0 < test, val + test < 1", "test_fraction");
  if (instance_jitter < 0) throw ConfigError("instance_jitter must be non-negative", "instance_jitter");
  if (typical_width < 0 || typical_width >= poses_per_instance() / 2)
    throw ConfigError("typical_width out of range", "typical_width");
}

double angle_difference(double a, double b) {
  double d = std::fmod(b - a, 360.0);
  if (d <= -180.0) d += 360.0;
  if (d > 180.0) d -= 360.0;
  return d;
}

double pose_delta(const Pose& from, const Pose& to) {
  if (from.dims != to.dims) throw DimensionError("pose_delta: poses of different dimensionality");
  if (from.dims == 2) return angle_difference(from.angles[0], to.angles[0]);
  double s = 0.0;
  for (int k = 0; k < 3; ++k) s += angle_difference(from.angles[static_cast<std::size_t>(k)], to.angles[static_cast<std::size_t>(k)]);
  return s / 3.0;
}

Pose grid_pose(const DataConfig& config, int p) {
  const int n = config.poses_per_instance();
  const double step = config.pose_step_deg;
  Pose pose;
  pose.dims = config.pose_dims;
  if (config.pose_dims == 2) {
    pose.angles = {step * p, 0.0, 0.0};
  } else {
    pose.angles = {step * p, step * ((7 * p) % n), step * ((13 * p) % n)};
  }
  return pose;
}

Matrix rotate_points(const Matrix& points, const Pose& pose, int points_per_glyph) {
  Matrix out(points.rows(), 2);
  const int n_glyphs = static_cast<int>(points.rows() / points_per_glyph);
  for (int g = 0; g < n_glyphs; ++g) {
    const double th = deg2rad(pose.angles[static_cast<std::size_t>(g)]);
    const double c = std::cos(th), s = std::sin(th);
    Eigen::Matrix2d rot;
    rot << c, -s, s, c;
    out.middleRows(g * points_per_glyph, points_per_glyph) =
        points.middleRows(g * points_per_glyph, points_per_glyph) * rot.transpose();
  }
  return out;
}

Matrix instance_points(const DataConfig& config, const InstanceSpec& spec, const Pose& pose) {
  const int k = config.points_per_frame;
  const int n_glyphs = glyphs(config);
  Matrix canonical(k * n_glyphs, 2);
  for (int g = 0; g < n_glyphs; ++g) {
    const double* p = spec.shape.data() + g * kGlyphParams;
    for (int j = 0; j < k; ++j) {
      const double psi = 360.0 * j / k + p[kGlyphParams - 1];
      const double r = radius(p, psi);
      canonical(g * k + j, 0) = r * std::cos(deg2rad(psi));
      canonical(g * k + j, 1) = r * std::sin(deg2rad(psi));
    }
  }
  return rotate_points(canonical, pose, k);
}

PoseDataset::PoseDataset(DataConfig config, std::vector<InstanceSpec> instances, std::vector<Pose> poses,
                         Matrix features, std::vector<InstanceSplit> splits, std::vector<std::uint32_t> varying_rank)
    : config_(std::move(config)),
      instances_(std::move(instances)),
      poses_(std::move(poses)),
      features_(std::move(features)),
      splits_(std::move(splits)),
      varying_rank_(std::move(varying_rank)) {
  if (features_.cols() != static_cast<Eigen::Index>(instances_.size() * poses_.size()))
    throw DimensionError("PoseDataset: feature block does not match instances x poses");
  if (splits_.size() != instances_.size() || varying_rank_.size() != instances_.size())
    throw DimensionError("PoseDataset: split tables do not match the instance count");
}

Frame PoseDataset::frame(int instance, int pose) const {
  return {frame_features(instance, pose), poses_.at(static_cast<std::size_t>(pose)), instance, pose};
}

bool PoseDataset::is_typical_pose(int pose) const {
  const int n = num_poses();
  const int dist = std::min(pose, n - pose);
  return dist <= config_.typical_width;
}

std::vector<int> PoseDataset::typical_poses() const {
  std::vector<int> out;
  for (int p = 0; p < num_poses(); ++p)
    if (is_typical_pose(p)) out.push_back(p);
  return out;
}

std::vector<int> PoseDataset::known_instances() const {
  std::vector<int> out;
  for (int i = 0; i < num_instances(); ++i)
    if (split(i) == InstanceSplit::Train) out.push_back(i);
  return out;
}

std::vector<int> PoseDataset::unknown_instances() const {
  std::vector<int> out;
  for (int i = 0; i < num_instances(); ++i)
    if (split(i) == InstanceSplit::Test) out.push_back(i);
  return out;
}

PoseDataset generate_dataset(const DataConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const int n_glyphs = glyphs(config);
  const int per_class = config.instances_per_class;

  std::vector<InstanceSpec> instances;
  for (int c = 0; c < config.classes; ++c) {
    const std::vector<double> tmpl = class_template(config.seed, c);
    for (int i = 0; i < per_class; ++i) {
      InstanceSpec spec{c, i, {}};
      spec.shape.resize(static_cast<std::size_t>(kGlyphParams * n_glyphs));
      for (int g = 0; g < n_glyphs; ++g) {
        const double* t = tmpl.data() + g * kGlyphParams;
        double* p = spec.shape.data() + g * kGlyphParams;
        p[0] = t[0] * (1.0 + 0.6 * config.instance_jitter * rng.normal());
        for (int h = 1; h <= kHarmonics; ++h) {
          p[2 * h - 1] = t[2 * h - 1] + config.instance_jitter * 0.5 * rng.normal();
          p[2 * h] = t[2 * h] + 2.5 * config.instance_jitter * rng.normal();
        }
        p[kGlyphParams - 1] = rng.uniform(0.0, 360.0);
      }
      instances.push_back(std::move(spec));
    }
  }

  const int n_poses = config.poses_per_instance();
  std::vector<Pose> poses;
  for (int p = 0; p < n_poses; ++p) poses.push_back(grid_pose(config, p));

  const Eigen::Index f = config.feature_dim();
  Matrix features(f, static_cast<Eigen::Index>(instances.size()) * n_poses);
  if (config.mode == FrameMode::Raster) {
    const std::vector<Subsample> subs = raster_subsamples(config.raster_size);
    const Eigen::Index pixels = static_cast<Eigen::Index>(config.raster_size) * config.raster_size;
    const double weight = 1.0 / (kSuper * kSuper);
    for (std::size_t i = 0; i < instances.size(); ++i) {
      std::vector<std::vector<double>> tables;
      for (int g = 0; g < n_glyphs; ++g) tables.push_back(radial_table(instances[i].shape.data() + g * kGlyphParams));
      for (int p = 0; p < n_poses; ++p) {
        auto col = features.col(static_cast<Eigen::Index>(i) * n_poses + p);
        col.setZero();
        for (int g = 0; g < n_glyphs; ++g) {
          const double theta = poses[static_cast<std::size_t>(p)].angles[static_cast<std::size_t>(g)];
          for (const Subsample& s : subs)
            if (s.rho < lookup(tables[static_cast<std::size_t>(g)], s.phi_deg - theta))
              col(g * pixels + s.pixel) += weight;
        }
      }
    }
  } else {
    for (std::size_t i = 0; i < instances.size(); ++i)
      for (int p = 0; p < n_poses; ++p) {
        const Matrix pts = instance_points(config, instances[i], poses[static_cast<std::size_t>(p)]);
        auto col = features.col(static_cast<Eigen::Index>(i) * n_poses + p);
        for (Eigen::Index r = 0; r < pts.rows(); ++r) {
          col(2 * r) = pts(r, 0);
          col(2 * r + 1) = pts(r, 1);
        }
      }
  }

  // Per class: shuffle, then test / val / train by the configured fractions.
  std::vector<InstanceSplit> splits(instances.size(), InstanceSplit::Train);
  std::vector<std::vector<int>> train_by_class(static_cast<std::size_t>(config.classes));
  Rng split_rng = rng.split();
  for (int c = 0; c < config.classes; ++c) {
    std::vector<int> ids(static_cast<std::size_t>(per_class));
    for (int i = 0; i < per_class; ++i) ids[static_cast<std::size_t>(i)] = c * per_class + i;
    split_rng.shuffle(ids);
    int n_test = std::max(1, static_cast<int>(std::lround(config.test_fraction * per_class)));
    int n_val = static_cast<int>(std::lround(config.val_fraction * per_class));
    n_test = std::min(n_test, per_class - 1);
    n_val = std::min(n_val, per_class - 1 - n_test);
    for (int k = 0; k < per_class; ++k) {
      const int id = ids[static_cast<std::size_t>(k)];
      if (k < n_test) {
        splits[static_cast<std::size_t>(id)] = InstanceSplit::Test;
      } else if (k < n_test + n_val) {
        splits[static_cast<std::size_t>(id)] = InstanceSplit::Val;
      } else {
        train_by_class[static_cast<std::size_t>(c)].push_back(id);
      }
    }
  }
  // Varying rank: round-robin over classes so any prefix spreads across them.
  std::vector<std::uint32_t> rank(instances.size(), UINT32_MAX);
  std::uint32_t next = 0;
  for (std::size_t round = 0;; ++round) {
    bool any = false;
    for (const auto& ids : train_by_class)
      if (round < ids.size()) {
        rank[static_cast<std::size_t>(ids[round])] = next++;
        any = true;
      }
    if (!any) break;
  }

  return PoseDataset(config, std::move(instances), std::move(poses), std::move(features), std::move(splits),
                     std::move(rank));
}

int SplitPlan::varying_count() const { return static_cast<int>(std::count(varying.begin(), varying.end(), true)); }

bool is_valid_proportion(double p) {
  for (double v : {0.05, 0.25, 0.5})
    if (std::abs(p - v) < 1e-12) return true;
  return false;
}

SplitPlan make_splits(const PoseDataset& dataset, double diversity_proportion) {
  if (!is_valid_proportion(diversity_proportion))
    throw ConfigError("diversity proportion must be one of 0.05, 0.25, 0.5", "proportion");
  const auto known = dataset.known_instances();
  const auto n_known = static_cast<std::uint32_t>(known.size());
  const auto n_vary = std::max<std::uint32_t>(
      1, static_cast<std::uint32_t>(std::floor(diversity_proportion * n_known + 1e-9)));
  SplitPlan plan{diversity_proportion, std::vector<bool>(static_cast<std::size_t>(dataset.num_instances()), false)};
  for (int i : known)
    if (dataset.varying_rank(i) < n_vary) plan.varying[static_cast<std::size_t>(i)] = true;
  return plan;
}

FramePair sample_pair(const PoseDataset& dataset, const SplitPlan& plan, int instance, Rng& rng) {
  if (instance < 0 || instance >= dataset.num_instances() || !plan.varying[static_cast<std::size_t>(instance)])
    throw UsageError("sample_pair: instance " + std::to_string(instance) + " is not varying");
  const int n = dataset.num_poses();
  const int a = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
  int b = static_cast<int>(rng.index(static_cast<std::size_t>(n - 1)));
  if (b >= a) ++b;
  FramePair pair{dataset.frame(instance, a), dataset.frame(instance, b), 0.0};
  pair.delta = pose_delta(pair.x.pose, pair.x_prime.pose);
  return pair;
}

std::vector<FrameRef> balanced_batch_sampler(const PoseDataset& dataset, const SplitPlan& plan, int batch_size,
                                             Rng& rng) {
  if (batch_size < 2) throw UsageError("balanced_batch_sampler: batch_size must be at least 2");
  std::vector<int> varying, fixed;
  for (int i : dataset.known_instances()) (plan.varying[static_cast<std::size_t>(i)] ? varying : fixed).push_back(i);
  if (varying.empty() && fixed.empty()) throw UsageError("balanced_batch_sampler: no known instances");
  if (varying.size() + fixed.size() < 2) throw UsageError("balanced_batch_sampler: need two known instances");
  const std::vector<int> typical = dataset.typical_poses();

  auto draw = [&]() -> FrameRef {
    bool from_varying = rng.uniform() < 0.5;
    if (varying.empty()) from_varying = false;
    if (fixed.empty()) from_varying = true;
    if (from_varying) {
      const int inst = varying[rng.index(varying.size())];
      return {inst, static_cast<int>(rng.index(static_cast<std::size_t>(dataset.num_poses())))};
    }
    const int inst = fixed[rng.index(fixed.size())];
    return {inst, typical[rng.index(typical.size())]};
  };

  std::vector<FrameRef> batch;
  batch.reserve(static_cast<std::size_t>(batch_size));
  for (int k = 0; k < batch_size; ++k) batch.push_back(draw());
  while (std::all_of(batch.begin(), batch.end(), [&](const FrameRef& r) { return r.instance == batch[0].instance; }))
    batch.back() = draw();
  return batch;
}

std::vector<FramePair> sample_pair_batch(const PoseDataset& dataset, const SplitPlan& plan, int batch_size, Rng& rng) {
  std::vector<int> varying;
  for (int i = 0; i < dataset.num_instances(); ++i)
    if (plan.varying[static_cast<std::size_t>(i)]) varying.push_back(i);
  if (batch_size < 2) throw UsageError("sample_pair_batch: batch_size must be at least 2");
  if (static_cast<int>(varying.size()) < batch_size)
    throw ConfigError("batch_size " + std::to_string(batch_size) + " exceeds the " + std::to_string(varying.size()) +
                          " varying instances",
                      "batch_size");
  // Partial Fisher-Yates: first batch_size entries are a uniform draw without replacement.
  for (int k = 0; k < batch_size; ++k) {
    const auto j = static_cast<std::size_t>(k) + rng.index(varying.size() - static_cast<std::size_t>(k));
    std::swap(varying[static_cast<std::size_t>(k)], varying[j]);
  }
  std::vector<FramePair> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (int k = 0; k < batch_size; ++k) out.push_back(sample_pair(dataset, plan, varying[static_cast<std::size_t>(k)], rng));
  return out;
}

}  // namespace lieop

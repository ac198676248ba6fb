#pragma once

// Text configuration documents: sections of `key = value` lines.
//
//   [data]
//   classes = 10
//   [train]
//   lambda_lie = 5
//
// Lists are comma separated. `#` starts a comment. Unknown sections and keys
// are rejected; missing keys keep their defaults.

#include <cstdint>
#include <string>
#include <vector>

#include "lieop/datagen.hpp"
#include "lieop/train_eval.hpp"

namespace lieop {

struct EvalSettings {
  EvalMode mode = EvalMode::Linear;
  double proportion = 0.5;
  std::vector<std::uint64_t> seeds = {0, 1, 2};

  bool operator==(const EvalSettings&) const = default;
};

struct SweepSettings {
  std::vector<std::string> ablations = {"full", "no_euc", "lie_only", "baseline"};
  /// Values tried for each of lambda_ssl, lambda_lie, lambda_euc.
  std::vector<double> lambda_grid = {1.0, 5.0};
  int jobs = 1;

  bool operator==(const SweepSettings&) const = default;
};

struct RunConfig {
  DataConfig data;
  TrainConfig train;
  EvalSettings eval;
  SweepSettings sweep;

  bool operator==(const RunConfig&) const = default;
};

/// Every key as "section.key", in document order.
std::vector<std::string> config_keys();

std::string render_config(const RunConfig& config);
/// Only the [model] and [train] sections.
std::string render_train_config(const TrainConfig& config);

/// Throws ConfigError naming the key on unknown keys or malformed values.
RunConfig parse_config(const std::string& text, const RunConfig& defaults = {});
RunConfig load_config(const std::string& path);

/// Applies "key=value"; the key is "section.key" or a bare key that exists
/// in exactly one section.
void apply_override(RunConfig& config, const std::string& assignment);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace lieop

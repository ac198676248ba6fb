#pragma once

// On-disk formats. Binary files are little-endian and start with a 4-byte
// magic and a u32 version; an unknown version is an IoError.
//
//   LOPD  dataset: counts, f64 feature block, split tables, instance and
//         pose metadata, the generating [data] section as text.
//   LOPC  checkpoint: step, embedded [model]/[train] text, then named
//         tensors (name, rows, cols, f64 payload) for parameters and
//         optimizer moments.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lieop/datagen.hpp"
#include "lieop/train_eval.hpp"

namespace lieop {

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = Checkpoint::kVersion;

std::string encode_dataset(const PoseDataset& dataset);
PoseDataset decode_dataset(const std::string& bytes);
void save_dataset(const std::string& path, const PoseDataset& dataset);
PoseDataset load_dataset(const std::string& path);

/// Plain-text summary written next to the dataset.
std::string dataset_manifest(const PoseDataset& dataset, std::size_t bytes);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::string read_file(const std::string& path);
/// Writes through a temporary file and renames, so a failed write leaves no
/// partial output.
void write_file(const std::string& path, const std::string& bytes);

// ---------------------------------------------------------------------------
// Metrics CSV

inline constexpr const char* kMetricsHeader = "run_id,seed,phase,diversity_proportion,cell,top1,gap,step,wall_ms";

struct MetricsRow {
  std::string run_id;
  /// A seed number, or "mean" / "stderr" for aggregate rows.
  std::string seed;
  std::string phase;
  double diversity_proportion = 0.5;
  Cell cell = Cell::KnownTypical;
  double top1 = 0.0;
  std::optional<double> gap;
  std::uint64_t step = 0;
  double wall_ms = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

/// Per-seed rows for every present cell, then mean rows and, with two or more
/// seeds, stderr rows.
std::vector<MetricsRow> report_rows(const std::string& run_id, EvalMode phase, double proportion,
                                    const EvalReport& report, std::uint64_t steps);
/// Rebuilds the report of one (run_id, phase, proportion) group.
EvalReport rows_to_report(const std::vector<MetricsRow>& rows);

/// Sorts by (run_id, seed, cell); numeric seeds first, then mean, stderr.
void sort_metrics(std::vector<MetricsRow>& rows);

std::string render_metrics_csv(const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);

inline constexpr const char* kLossHeader = "step,total,ssl,lie,euc,norm,wall_ms";
std::string render_loss_csv(const std::vector<LossLogRow>& rows);
std::vector<LossLogRow> parse_loss_csv(const std::string& text);

// ---------------------------------------------------------------------------
// Plot

/// Grouped bar chart, one group per cell, one bar per (run_id, phase,
/// proportion) series, whiskers of +-1 stderr. Uses aggregate rows when
/// present and the per-seed mean otherwise. Throws UsageError on no rows.
std::string render_bar_chart_svg(const std::vector<MetricsRow>& rows);

}  // namespace lieop

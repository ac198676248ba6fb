#include "lieop/io.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "lieop/config.hpp"
#include "lieop/errors.hpp"

namespace lieop {

namespace {

class Writer {
 public:
  void bytes(const char* p, std::size_t n) { out_.append(p, n); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) u8(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) u8(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    u64(bits);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void matrix(const Matrix& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) f64(m(i, j));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& data, std::string what) : data_(data), what_(std::move(what)) {}

  void need(std::size_t n) {
    if (data_.size() - pos_ < n) throw IoError(what_ + ": file is truncated");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(u8()) << (8 * k);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(u8()) << (8 * k);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Matrix matrix() {
    const std::uint64_t rows = u64(), cols = u64();
    if (rows != 0 && cols > (data_.size() - pos_) / 8 / rows) throw IoError(what_ + ": tensor larger than file");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = f64();
    return m;
  }
  void header(const char* magic, std::uint32_t version) {
    need(4);
    if (data_.compare(pos_, 4, magic) != 0) throw IoError(what_ + ": not a " + magic + " file");
    pos_ += 4;
    const std::uint32_t v = u32();
    if (v != version)
      throw IoError(what_ + ": unsupported " + magic + " version " + std::to_string(v) + " (expected " +
                    std::to_string(version) + ")");
  }
  void finish() {
    if (pos_ != data_.size()) throw IoError(what_ + ": trailing bytes after payload");
  }

 private:
  const std::string& data_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string data_section(const DataConfig& config) {
  RunConfig rc;
  rc.data = config;
  const std::string all = render_config(rc);
  return all.substr(0, all.find("\n[model]") + 1);
}

}  // namespace

// ---------------------------------------------------------------------------

std::string encode_dataset(const PoseDataset& ds) {
  Writer w;
  w.bytes("LOPD", 4);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.num_instances()));
  w.u32(static_cast<std::uint32_t>(ds.num_poses()));
  w.u32(static_cast<std::uint32_t>(ds.feature_dim()));
  w.u32(static_cast<std::uint32_t>(ds.config().classes));
  const Matrix& f = ds.features();
  for (Eigen::Index j = 0; j < f.cols(); ++j)
    for (Eigen::Index i = 0; i < f.rows(); ++i) w.f64(f(i, j));
  for (InstanceSplit s : ds.splits()) w.u8(static_cast<std::uint8_t>(s));
  for (std::uint32_t r : ds.varying_ranks()) w.u32(r);
  for (const InstanceSpec& spec : ds.instances()) {
    w.i32(spec.class_id);
    w.i32(spec.instance_id);
    w.u32(static_cast<std::uint32_t>(spec.shape.size()));
    for (double v : spec.shape) w.f64(v);
  }
  for (const Pose& p : ds.poses()) {
    w.i32(p.dims);
    for (double a : p.angles) w.f64(a);
  }
  w.str(data_section(ds.config()));
  return w.take();
}

PoseDataset decode_dataset(const std::string& bytes) {
  Reader r(bytes, "dataset");
  r.header("LOPD", kDatasetVersion);
  const std::uint32_t n_inst = r.u32(), n_poses = r.u32(), f = r.u32();
  r.u32();  // classes, repeated in the config text
  r.need(static_cast<std::size_t>(n_inst) * n_poses * f * 8);
  Matrix features(f, static_cast<Eigen::Index>(n_inst) * n_poses);
  for (Eigen::Index j = 0; j < features.cols(); ++j)
    for (Eigen::Index i = 0; i < features.rows(); ++i) features(i, j) = r.f64();
  std::vector<InstanceSplit> splits(n_inst);
  for (auto& s : splits) {
    const std::uint8_t v = r.u8();
    if (v > 2) throw IoError("dataset: bad split tag " + std::to_string(v));
    s = static_cast<InstanceSplit>(v);
  }
  std::vector<std::uint32_t> ranks(n_inst);
  for (auto& v : ranks) v = r.u32();
  std::vector<InstanceSpec> instances(n_inst);
  for (auto& spec : instances) {
    spec.class_id = r.i32();
    spec.instance_id = r.i32();
    spec.shape.resize(r.u32());
    for (double& v : spec.shape) v = r.f64();
  }
  std::vector<Pose> poses(n_poses);
  for (auto& p : poses) {
    p.dims = r.i32();
    for (double& a : p.angles) a = r.f64();
  }
  const DataConfig config = parse_config(r.str()).data;
  r.finish();
  return PoseDataset(config, std::move(instances), std::move(poses), std::move(features), std::move(splits),
                     std::move(ranks));
}

void save_dataset(const std::string& path, const PoseDataset& dataset) { write_file(path, encode_dataset(dataset)); }

PoseDataset load_dataset(const std::string& path) {
  try {
    return decode_dataset(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

std::string dataset_manifest(const PoseDataset& ds, std::size_t bytes) {
  std::ostringstream os;
  os << "format = LOPD " << kDatasetVersion << "\n"
     << "classes = " << ds.config().classes << "\n"
     << "instances_per_class = " << ds.config().instances_per_class << "\n"
     << "instances = " << ds.num_instances() << "\n"
     << "poses = " << ds.num_poses() << "\n"
     << "feature_dim = " << ds.feature_dim() << "\n"
     << "frames = " << ds.features().cols() << "\n"
     << "known_instances = " << ds.known_instances().size() << "\n"
     << "unknown_instances = " << ds.unknown_instances().size() << "\n"
     << "bytes = " << bytes << "\n\n"
     << data_section(ds.config());
  return os.str();
}

// ---------------------------------------------------------------------------

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes("LOPC", 4);
  w.u32(kCheckpointVersion);
  w.u64(ckpt.step);
  w.str(render_train_config(ckpt.config));
  for (const auto* group : {&ckpt.parameters, &ckpt.optimizer_state}) {
    w.u32(static_cast<std::uint32_t>(group->size()));
    for (const NamedTensor& t : *group) {
      w.str(t.name);
      w.matrix(t.value);
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes, "checkpoint");
  r.header("LOPC", kCheckpointVersion);
  Checkpoint ckpt;
  ckpt.step = r.u64();
  ckpt.config = parse_config(r.str()).train;
  for (auto* group : {&ckpt.parameters, &ckpt.optimizer_state}) {
    const std::uint32_t n = r.u32();
    for (std::uint32_t k = 0; k < n; ++k) {
      NamedTensor t;
      t.name = r.str();
      t.value = r.matrix();
      group->push_back(std::move(t));
    }
  }
  r.finish();
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) { write_file(path, encode_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const std::string& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw IoError("failed writing " + path);
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("cannot move output into place at " + path + ": " + ec.message());
  }
}

// ---------------------------------------------------------------------------

std::vector<MetricsRow> report_rows(const std::string& run_id, EvalMode phase, double proportion,
                                    const EvalReport& report, std::uint64_t steps) {
  std::vector<MetricsRow> rows;
  auto push = [&](const std::string& seed, Cell cell, double top1, std::optional<double> gap) {
    rows.push_back({run_id, seed, to_string(phase), proportion, cell, top1, gap, steps, 0.0});
  };
  for (std::size_t s = 0; s < report.per_seed.size(); ++s) {
    const CellValues& row = report.per_seed[s];
    const auto& base = row[static_cast<std::size_t>(Cell::KnownTypical)];
    for (Cell cell : kCells) {
      const auto& v = row[static_cast<std::size_t>(cell)];
      if (!v) continue;
      push(std::to_string(report.seeds[s]), cell, *v, base ? std::optional<double>(*v - *base) : std::nullopt);
    }
  }
  const CellValues gaps = report.gaps();
  for (Cell cell : kCells) {
    const auto c = static_cast<std::size_t>(cell);
    if (report.mean[c]) push("mean", cell, *report.mean[c], gaps[c]);
  }
  for (Cell cell : kCells) {
    const auto c = static_cast<std::size_t>(cell);
    if (report.stderr_[c]) push("stderr", cell, *report.stderr_[c], std::nullopt);
  }
  return rows;
}

EvalReport rows_to_report(const std::vector<MetricsRow>& rows) {
  if (rows.empty()) throw UsageError("rows_to_report: no rows");
  EvalReport report;
  std::map<std::string, std::size_t> seed_index;
  for (const MetricsRow& r : rows) {
    const auto c = static_cast<std::size_t>(r.cell);
    if (r.seed == "mean") {
      report.mean[c] = r.top1;
    } else if (r.seed == "stderr") {
      report.stderr_[c] = r.top1;
    } else {
      auto [it, fresh] = seed_index.emplace(r.seed, report.per_seed.size());
      if (fresh) {
        std::uint64_t seed = 0;
        try {
          seed = std::stoull(r.seed);
        } catch (const std::exception&) {
          throw IoError("metrics: bad seed '" + r.seed + "'");
        }
        report.seeds.push_back(seed);
        report.per_seed.emplace_back();
      }
      report.per_seed[it->second][c] = r.top1;
    }
  }
  return report;
}

namespace {

int seed_order(const std::string& seed) {
  if (seed == "mean") return 1;
  if (seed == "stderr") return 2;
  return 0;
}

std::uint64_t seed_value(const std::string& seed) {
  return seed_order(seed) == 0 ? std::stoull(seed) : 0;
}

std::string field(double v) { return format_double(v); }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError(std::string("metrics: bad ") + what + " '" + s + "'");
  }
}

std::uint64_t parse_u64(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw IoError(std::string("bad ") + what + " '" + s + "'");
  return std::stoull(s);
}

std::vector<std::string> data_lines(const std::string& text, const char* header, const char* what) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first) {
      if (line != header) throw IoError(std::string(what) + ": unexpected header '" + line + "'");
      first = false;
      continue;
    }
    if (!line.empty()) lines.push_back(line);
  }
  if (first) throw IoError(std::string(what) + ": empty file");
  return lines;
}

}  // namespace

void sort_metrics(std::vector<MetricsRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const MetricsRow& a, const MetricsRow& b) {
    if (a.run_id != b.run_id) return a.run_id < b.run_id;
    const int oa = seed_order(a.seed), ob = seed_order(b.seed);
    if (oa != ob) return oa < ob;
    if (oa == 0 && a.seed != b.seed) return seed_value(a.seed) < seed_value(b.seed);
    return a.cell < b.cell;
  });
}

std::string render_metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const MetricsRow& r : rows) {
    if (r.run_id.find_first_of(",\n\r") != std::string::npos)
      throw UsageError("run_id '" + r.run_id + "' contains a separator");
    out += r.run_id + "," + r.seed + "," + r.phase + "," + field(r.diversity_proportion) + "," + to_string(r.cell) +
           "," + field(r.top1) + "," + (r.gap ? field(*r.gap) : "") + "," + std::to_string(r.step) + "," +
           field(r.wall_ms) + "\n";
  }
  return out;
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::vector<MetricsRow> rows;
  for (const std::string& line : data_lines(text, kMetricsHeader, "metrics")) {
    const auto f = split_csv(line);
    if (f.size() != 9) throw IoError("metrics: expected 9 fields in '" + line + "'");
    MetricsRow r;
    r.run_id = f[0];
    r.seed = f[1];
    if (seed_order(r.seed) == 0) parse_u64(r.seed, "seed");
    r.phase = f[2];
    eval_mode_from_string(r.phase);
    r.diversity_proportion = parse_double(f[3], "diversity_proportion");
    try {
      r.cell = cell_from_string(f[4]);
    } catch (const ConfigError&) {
      throw IoError("metrics: unknown cell '" + f[4] + "'");
    }
    r.top1 = parse_double(f[5], "top1");
    if (!f[6].empty()) r.gap = parse_double(f[6], "gap");
    r.step = parse_u64(f[7], "step");
    r.wall_ms = parse_double(f[8], "wall_ms");
    if (seed_order(r.seed) != 2 && (r.top1 < 0.0 || r.top1 > 1.0))
      throw IoError("metrics: top1 outside [0, 1] in '" + line + "'");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string render_loss_csv(const std::vector<LossLogRow>& rows) {
  std::string out = std::string(kLossHeader) + "\n";
  for (const LossLogRow& r : rows)
    out += std::to_string(r.step) + "," + field(r.total) + "," + field(r.ssl) + "," + field(r.lie) + "," +
           field(r.euc) + "," + field(r.norm) + "," + field(r.wall_ms) + "\n";
  return out;
}

std::vector<LossLogRow> parse_loss_csv(const std::string& text) {
  std::vector<LossLogRow> rows;
  for (const std::string& line : data_lines(text, kLossHeader, "loss log")) {
    const auto f = split_csv(line);
    if (f.size() != 7) throw IoError("loss log: expected 7 fields in '" + line + "'");
    rows.push_back({parse_u64(f[0], "step"), parse_double(f[1], "total"), parse_double(f[2], "ssl"),
                    parse_double(f[3], "lie"), parse_double(f[4], "euc"), parse_double(f[5], "norm"),
                    parse_double(f[6], "wall_ms")});
  }
  return rows;
}

// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_bar_chart_svg(const std::vector<MetricsRow>& rows) {
  if (rows.empty()) throw UsageError("plot: metrics table is empty");

  struct Bar {
    std::optional<double> mean, err;
    double seed_sum = 0.0;
    int seed_count = 0;
  };
  std::vector<std::string> series;
  std::map<std::string, std::array<Bar, 4>> bars;
  for (const MetricsRow& r : rows) {
    const std::string key = r.run_id + " " + r.phase + " p=" + format_double(r.diversity_proportion);
    if (!bars.count(key)) series.push_back(key);
    Bar& b = bars[key][static_cast<std::size_t>(r.cell)];
    if (r.seed == "mean") {
      b.mean = r.top1;
    } else if (r.seed == "stderr") {
      b.err = r.top1;
    } else {
      b.seed_sum += r.top1;
      ++b.seed_count;
    }
  }

  const double bar_w = 18.0, group_gap = 30.0, left = 60.0, top = 30.0, plot_h = 240.0;
  const double group_w = bar_w * static_cast<double>(series.size()) + group_gap;
  const double width = left + 4.0 * group_w + 20.0;
  const double legend_y = top + plot_h + 50.0;
  const double height = legend_y + 18.0 * static_cast<double>(series.size()) + 10.0;
  static const char* palette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7"};

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\"" << fmt(height)
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double y = top + plot_h * (1.0 - k / 4.0);
    os << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(y) << "\" x2=\"" << fmt(width - 20.0) << "\" y2=\"" << fmt(y)
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << fmt(left - 6.0) << "\" y=\"" << fmt(y + 4.0) << "\" text-anchor=\"end\">" << fmt(k / 4.0)
       << "</text>\n";
  }
  os << "<text x=\"14\" y=\"" << fmt(top + plot_h / 2) << "\" transform=\"rotate(-90 14 " << fmt(top + plot_h / 2)
     << ")\" text-anchor=\"middle\">top-1 accuracy</text>\n";

  for (std::size_t c = 0; c < 4; ++c) {
    const double gx = left + group_gap / 2 + static_cast<double>(c) * group_w;
    for (std::size_t s = 0; s < series.size(); ++s) {
      const Bar& b = bars[series[s]][c];
      std::optional<double> value = b.mean;
      if (!value && b.seed_count > 0) value = b.seed_sum / b.seed_count;
      if (!value) continue;
      const double x = gx + bar_w * static_cast<double>(s);
      const double h = plot_h * std::clamp(*value, 0.0, 1.0);
      os << "<rect class=\"bar\" x=\"" << fmt(x) << "\" y=\"" << fmt(top + plot_h - h) << "\" width=\""
         << fmt(bar_w - 2.0) << "\" height=\"" << fmt(h) << "\" fill=\"" << palette[s % 8] << "\"/>\n";
      if (b.err) {
        const double cx = x + (bar_w - 2.0) / 2;
        const double y_hi = top + plot_h * (1.0 - (*value + *b.err)), y_lo = top + plot_h * (1.0 - (*value - *b.err));
        os << "<path class=\"whisker\" d=\"M" << fmt(cx - 4) << " " << fmt(y_hi) << "H" << fmt(cx + 4) << "M" << fmt(cx)
           << " " << fmt(y_hi) << "V" << fmt(y_lo) << "M" << fmt(cx - 4) << " " << fmt(y_lo) << "H" << fmt(cx + 4)
           << "\" stroke=\"black\" fill=\"none\"/>\n";
      }
    }
    os << "<text x=\"" << fmt(gx + bar_w * static_cast<double>(series.size()) / 2) << "\" y=\""
       << fmt(top + plot_h + 16.0) << "\" text-anchor=\"middle\">" << to_string(static_cast<Cell>(c)) << "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const double y = legend_y + 18.0 * static_cast<double>(s);
    os << "<rect x=\"" << fmt(left) << "\" y=\"" << fmt(y - 10.0) << "\" width=\"12\" height=\"12\" fill=\""
       << palette[s % 8] << "\"/>\n";
    os << "<text x=\"" << fmt(left + 18.0) << "\" y=\"" << fmt(y) << "\">" << escape(series[s]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace lieop

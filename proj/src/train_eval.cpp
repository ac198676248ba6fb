#include "lieop/train_eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <sstream>
#include <thread>

#include "lieop/errors.hpp"

namespace lieop {

namespace {

constexpr std::uint64_t kInitStream = 0x1417ULL << 32;
constexpr std::uint64_t kClassifierStream = 0xC1A55ULL << 32;

void require(bool ok, const char* field, const std::string& what) {
  if (!ok) throw ConfigError(what, field);
}

std::string describe(const LossLogRow& r) {
  std::ostringstream os;
  os << "total=" << r.total << " ssl=" << r.ssl << " lie=" << r.lie << " euc=" << r.euc << " norm=" << r.norm;
  return os.str();
}

double value_or_zero(const ag::Var& v) { return v.valid() ? v.scalar() : 0.0; }

}  // namespace

void TrainConfig::validate() const {
  require(model.embed_dim >= 1, "embed_dim", "embed_dim must be positive");
  require(model.algebra_dim >= 1, "algebra_dim", "algebra_dim must be positive");
  require(model.coord_hidden >= 0, "coord_hidden", "coord_hidden must be non-negative");
  require(model.decoder_hidden >= 1, "decoder_hidden", "decoder_hidden must be positive");
  for (Eigen::Index w : model.encoder_hidden) require(w >= 1, "encoder_hidden", "encoder widths must be positive");
  require(model.leaky_slope >= 0.0 && model.leaky_slope < 1.0, "leaky_slope", "leaky_slope must lie in [0, 1)");
  require(model.delta_scale > 0.0, "delta_scale", "delta_scale must be positive");
  require(weights.lambda_ssl >= 0.0, "lambda_ssl", "lambda_ssl must be non-negative");
  require(weights.lambda_lie >= 0.0, "lambda_lie", "lambda_lie must be non-negative");
  require(weights.lambda_euc >= 0.0, "lambda_euc", "lambda_euc must be non-negative");
  require(weights.temperature > 0.0, "temperature", "temperature must be positive");
  require(lambda_frames >= 0.0, "lambda_frames", "lambda_frames must be non-negative");
  require(mask_ratio > 0.0 && mask_ratio < 1.0, "mask_ratio", "mask_ratio must lie strictly between 0 and 1");
  require(learning_rate > 0.0, "learning_rate", "learning_rate must be positive");
  require(batch_size >= 2, "batch_size", "batch_size must be at least 2");
  require(steps >= 0, "steps", "steps must be non-negative");
  require(log_every >= 1, "log_every", "log_every must be positive");
  require(classifier_option == 1 || classifier_option == 2, "classifier_option", "classifier_option must be 1 or 2");
  require(neighbors >= 1, "neighbors", "neighbors must be at least 1");
  require(neighbor_sigma > 0.0, "neighbor_sigma", "neighbor_sigma must be positive");
  require(linear_steps >= 0, "linear_steps", "linear_steps must be non-negative");
  require(finetune_steps >= 0, "finetune_steps", "finetune_steps must be non-negative");
  require(linear_lr > 0.0, "linear_lr", "linear_lr must be positive");
  require(finetune_lr > 0.0, "finetune_lr", "finetune_lr must be positive");
  require(classifier_batch >= 2, "classifier_batch", "classifier_batch must be at least 2");
  if (lambda_frames > 0.0 && !model.pair_head && model.ssl != SslKind::PairInvariance)
    throw ConfigError("lambda_frames needs pair_head = true or ssl = pair_invariance", "pair_head");
}

Checkpoint capture_checkpoint(const TrainConfig& config, LieModel& model, ag::Optimizer* optimizer,
                              std::uint64_t step) {
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.step = step;
  const auto params = model.parameters();
  for (const Parameter* p : params) ckpt.parameters.push_back({p->name(), p->value()});
  if (optimizer != nullptr) {
    auto& opt = *optimizer;
    for (std::size_t i = 0; i < params.size(); ++i)
      ckpt.optimizer_state.push_back({"adam.m/" + params[i]->name(), opt.first_moments()[i]});
    for (std::size_t i = 0; i < params.size(); ++i)
      ckpt.optimizer_state.push_back({"adam.v/" + params[i]->name(), opt.second_moments()[i]});
  }
  return ckpt;
}

LieModel restore_model(const Checkpoint& ckpt) {
  Rng rng(mix_seed(ckpt.config.seed, kInitStream));
  LieModel model = LieModel::create(ckpt.config.model, rng);
  const auto params = model.parameters();
  if (params.size() != ckpt.parameters.size())
    throw ConfigError("checkpoint holds " + std::to_string(ckpt.parameters.size()) + " tensors, configuration needs " +
                          std::to_string(params.size()),
                      "model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedTensor& t = ckpt.parameters[i];
    Parameter& p = *params[i];
    if (t.name != p.name())
      throw ConfigError("checkpoint tensor '" + t.name + "' where '" + p.name() + "' was expected", "model");
    if (t.value.rows() != p.value().rows() || t.value.cols() != p.value().cols())
      throw DimensionError("checkpoint tensor '" + t.name + "' is " + std::to_string(t.value.rows()) + "x" +
                           std::to_string(t.value.cols()) + ", model expects " + std::to_string(p.value().rows()) +
                           "x" + std::to_string(p.value().cols()));
    p.value() = t.value;
  }
  return model;
}

SplitPlan ssl_plan(const PoseDataset& dataset) { return make_splits(dataset, 0.5); }

SplitPlan held_out_plan(const PoseDataset& dataset) {
  SplitPlan plan = ssl_plan(dataset);
  plan.proportion = 0.0;
  for (std::size_t i = 0; i < plan.varying.size(); ++i) plan.varying[i] = !plan.varying[i];
  return plan;
}

PairBatch make_pair_batch(const std::vector<FramePair>& pairs) {
  if (pairs.empty()) throw UsageError("make_pair_batch: no pairs");
  const Eigen::Index f = pairs.front().x.features.size();
  const auto b = static_cast<Eigen::Index>(pairs.size());
  PairBatch batch;
  batch.x.resize(f, b);
  batch.x_prime.resize(f, b);
  batch.delta.resize(1, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const FramePair& p = pairs[static_cast<std::size_t>(j)];
    batch.x.col(j) = p.x.features;
    batch.x_prime.col(j) = p.x_prime.features;
    batch.delta(0, j) = p.delta;
    batch.instances.push_back(p.x.instance);
  }
  return batch;
}

SslResult ssl_phase(const PoseDataset& dataset, const TrainConfig& config_in, const SslOptions& options) {
  TrainConfig config = config_in;
  config.model.input_dim = dataset.feature_dim();
  config.validate();

  LieModel model;
  std::uint64_t start = 0;
  if (options.resume != nullptr) {
    if (!(options.resume->config.model == config.model))
      throw ConfigError("resume checkpoint was trained with a different model configuration", "model");
    model = restore_model(*options.resume);
    start = options.resume->step;
  } else {
    Rng init(mix_seed(config.seed, kInitStream));
    model = LieModel::create(config.model, init);
  }

  const auto params = model.parameters();
  ag::Optimizer opt(params, {ag::OptimizerConfig::Kind::Adam, config.learning_rate});
  if (options.resume != nullptr) {
    const auto& state = options.resume->optimizer_state;
    if (!state.empty()) {
      if (state.size() != 2 * params.size()) throw ConfigError("checkpoint optimizer state is incomplete", "model");
      for (std::size_t i = 0; i < params.size(); ++i) {
        opt.first_moments()[i] = state[i].value;
        opt.second_moments()[i] = state[params.size() + i].value;
      }
    }
    opt.set_steps_taken(start);
  }

  const SplitPlan plan = ssl_plan(dataset);
  const LossOptions loss_options{config.weights, config.collapse_guard, config.lambda_frames};
  const auto t0 = std::chrono::steady_clock::now();

  SslResult result;
  for (std::uint64_t step = start; step < static_cast<std::uint64_t>(config.steps); ++step) {
    Rng rng(mix_seed(config.seed, step));
    const PairBatch batch = make_pair_batch(sample_pair_batch(dataset, plan, config.batch_size, rng));
    const SslInputs ssl = prepare_ssl_inputs(batch, config.model.ssl, config.mask_ratio, false, rng);

    opt.zero_grad();
    ag::Tape tape;
    const LossTerms terms = total_loss(tape, model, batch, ssl, loss_options);
    LossLogRow row{step,
                   terms.total.scalar(),
                   value_or_zero(terms.ssl),
                   value_or_zero(terms.lie),
                   value_or_zero(terms.euc),
                   value_or_zero(terms.norm),
                   0.0};
    if (!std::isfinite(row.total))
      throw NumericalError("non-finite loss at step " + std::to_string(step) + ": " + describe(row));
    tape.backward(terms.total);
    try {
      opt.step();
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " at step " + std::to_string(step) + ": " + describe(row));
    }
    if (step % static_cast<std::uint64_t>(config.log_every) == 0 || step + 1 == static_cast<std::uint64_t>(config.steps)) {
      if (options.record_wall_time)
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      result.log.push_back(row);
      if (options.on_log) options.on_log(row);
    }
  }
  const std::uint64_t final_step = std::max<std::uint64_t>(start, static_cast<std::uint64_t>(config.steps));
  result.checkpoint = capture_checkpoint(config, model, &opt, final_step);
  return result;
}

// ---------------------------------------------------------------------------

const char* to_string(Cell cell) {
  switch (cell) {
    case Cell::KnownTypical: return "known_typical";
    case Cell::KnownNewPose: return "known_newpose";
    case Cell::UnknownTypical: return "unknown_typical";
    case Cell::UnknownNewPose: return "unknown_newpose";
  }
  return "unknown";
}

Cell cell_from_string(const std::string& s) {
  for (Cell c : kCells)
    if (s == to_string(c)) return c;
  throw ConfigError("unknown cell '" + s + "'", "cell");
}

CellValues EvalReport::gaps() const {
  CellValues out;
  const auto& base = mean[static_cast<std::size_t>(Cell::KnownTypical)];
  for (std::size_t c = 0; c < 4; ++c)
    if (base && mean[c]) out[c] = *mean[c] - *base;
  return out;
}

std::optional<double> EvalReport::unknown_accuracy() const {
  const auto ut = static_cast<std::size_t>(Cell::UnknownTypical), un = static_cast<std::size_t>(Cell::UnknownNewPose);
  double sum = 0.0, weight = 0.0;
  for (std::size_t c : {ut, un})
    if (mean[c]) {
      const double w = cell_sizes[c] > 0 ? static_cast<double>(cell_sizes[c]) : 1.0;
      sum += w * *mean[c];
      weight += w;
    }
  if (weight == 0.0) return std::nullopt;
  return sum / weight;
}

EvalReport aggregate_seeds(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw UsageError("aggregate_seeds: no reports");
  EvalReport out;
  out.cell_sizes = reports.front().cell_sizes;
  for (const EvalReport& r : reports) {
    if (r.seeds.size() != r.per_seed.size()) throw UsageError("aggregate_seeds: report has mismatched seed rows");
    for (std::size_t k = 0; k < r.per_seed.size(); ++k) {
      out.seeds.push_back(r.seeds[k]);
      out.per_seed.push_back(r.per_seed[k]);
    }
  }
  if (out.per_seed.empty()) throw UsageError("aggregate_seeds: reports hold no seeds");
  const CellValues& first = out.per_seed.front();
  for (const CellValues& row : out.per_seed)
    for (std::size_t c = 0; c < 4; ++c)
      if (row[c].has_value() != first[c].has_value())
        throw UsageError(std::string("aggregate_seeds: cell ") + to_string(static_cast<Cell>(c)) +
                         " is present in some reports only");

  const double n = static_cast<double>(out.per_seed.size());
  for (std::size_t c = 0; c < 4; ++c) {
    if (!first[c]) continue;
    double sum = 0.0;
    for (const CellValues& row : out.per_seed) sum += *row[c];
    const double mean = sum / n;
    out.mean[c] = mean;
    if (out.per_seed.size() >= 2) {
      double ss = 0.0;
      for (const CellValues& row : out.per_seed) ss += (*row[c] - mean) * (*row[c] - mean);
      out.stderr_[c] = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
  }
  return out;
}

const char* to_string(EvalMode mode) { return mode == EvalMode::Linear ? "linear" : "finetune"; }

EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "linear") return EvalMode::Linear;
  if (s == "finetune") return EvalMode::Finetune;
  throw ConfigError("unknown evaluation mode '" + s + "' (expected linear or finetune)", "mode");
}

ClassifierSettings classifier_settings(const TrainConfig& config, EvalMode mode, double proportion) {
  ClassifierSettings s;
  s.mode = mode;
  s.proportion = proportion;
  s.option = config.classifier_option;
  // An operator that never received a training signal has no neighbours to offer.
  if (config.weights.lambda_lie == 0.0 && config.weights.lambda_euc == 0.0) s.option = 1;
  s.neighbors = config.neighbors;
  s.sigma = config.neighbor_sigma;
  s.steps = mode == EvalMode::Linear ? config.linear_steps : config.finetune_steps;
  s.learning_rate = config.linear_lr;
  s.encoder_learning_rate = config.finetune_lr;
  s.batch_size = config.classifier_batch;
  s.seed = config.seed;
  return s;
}

int argmax_lowest(const Eigen::Ref<const Vector>& logits) {
  int best = 0;
  for (Eigen::Index c = 1; c < logits.size(); ++c)
    if (logits(c) > logits(best)) best = static_cast<int>(c);
  return best;
}

TrainedClassifier train_classifier(const Checkpoint& ckpt, const PoseDataset& dataset,
                                   const ClassifierSettings& settings) {
  if (ckpt.config.model.input_dim != dataset.feature_dim())
    throw DimensionError("checkpoint expects inputs of size " + std::to_string(ckpt.config.model.input_dim) +
                         ", dataset has " + std::to_string(dataset.feature_dim()));
  if (settings.option == 2 && (settings.neighbors < 1 || !(settings.sigma > 0.0)))
    throw UsageError("train_classifier: option 2 needs neighbors >= 1 and sigma > 0");

  TrainedClassifier clf{restore_model(ckpt), {}, make_splits(dataset, settings.proportion), settings.seed};
  Rng rng(mix_seed(settings.seed, kClassifierStream));
  const Eigen::Index m = ckpt.config.model.embed_dim;
  const int classes = dataset.config().classes;
  clf.head = nn::Linear("classifier", m, classes, rng);

  std::vector<Parameter*> head_params;
  clf.head.collect(head_params);
  ag::Optimizer head_opt(head_params, {ag::OptimizerConfig::Kind::Adam, settings.learning_rate});
  const bool tune = settings.mode == EvalMode::Finetune;
  ag::Optimizer enc_opt(tune ? clf.model.encoder_parameters() : std::vector<Parameter*>{},
                        {ag::OptimizerConfig::Kind::Adam, settings.encoder_learning_rate});

  Matrix frozen;
  if (!tune) frozen = clf.model.encoder.forward(dataset.features());

  const auto n_extra = settings.option == 2 ? settings.neighbors : 0;
  for (int step = 0; step < settings.steps; ++step) {
    const std::vector<FrameRef> refs = balanced_batch_sampler(dataset, clf.plan, settings.batch_size, rng);
    const auto b = static_cast<Eigen::Index>(refs.size());

    ag::Tape tape;
    ag::Var z;
    if (tune) {
      Matrix x(dataset.feature_dim(), b);
      for (Eigen::Index j = 0; j < b; ++j)
        x.col(j) = dataset.frame_features(refs[static_cast<std::size_t>(j)].instance, refs[static_cast<std::size_t>(j)].pose);
      z = clf.model.encoder.forward(tape, tape.constant(x));
    } else {
      Matrix zc(m, b);
      for (Eigen::Index j = 0; j < b; ++j)
        zc.col(j) = frozen.col(dataset.frame_index(refs[static_cast<std::size_t>(j)].instance,
                                                   refs[static_cast<std::size_t>(j)].pose));
      z = tape.constant(zc);
    }

    std::vector<ag::Var> blocks{z};
    for (int k = 0; k < n_extra; ++k) {
      std::vector<Matrix> gs;
      gs.reserve(static_cast<std::size_t>(b));
      for (Eigen::Index j = 0; j < b; ++j)
        gs.push_back(std::move(sample_group_elements(clf.model.basis, 1, settings.sigma, rng).front()));
      if (tune) {
        std::vector<ag::Var> cols;
        for (Eigen::Index j = 0; j < b; ++j)
          cols.push_back(ag::matmul(tape.constant(gs[static_cast<std::size_t>(j)]), ag::column(z, j)));
        blocks.push_back(ag::hstack(cols));
      } else {
        Matrix nb(m, b);
        for (Eigen::Index j = 0; j < b; ++j) nb.col(j) = gs[static_cast<std::size_t>(j)] * z.value().col(j);
        blocks.push_back(tape.constant(nb));
      }
    }
    const ag::Var all = blocks.size() == 1 ? z : ag::hstack(blocks);

    std::vector<Eigen::Index> labels;
    labels.reserve(static_cast<std::size_t>(all.cols()));
    for (std::size_t rep = 0; rep < blocks.size(); ++rep)
      for (const FrameRef& r : refs) labels.push_back(dataset.class_of(r.instance));

    const ag::Var logits = clf.head.forward(tape, all);
    const ag::Var loss = ag::mean(ag::sub(ag::logsumexp(logits), ag::gather(logits, labels)));
    head_opt.zero_grad();
    enc_opt.zero_grad();
    tape.backward(loss);
    head_opt.step();
    if (tune) enc_opt.step();
  }
  return clf;
}

std::vector<int> predict(const TrainedClassifier& clf, const Matrix& features) {
  const Matrix logits = clf.head.forward(clf.model.encoder.forward(features));
  std::vector<int> out(static_cast<std::size_t>(logits.cols()));
  for (Eigen::Index j = 0; j < logits.cols(); ++j) out[static_cast<std::size_t>(j)] = argmax_lowest(logits.col(j));
  return out;
}

std::vector<FrameRef> cell_frames(const PoseDataset& dataset, const SplitPlan& plan, Cell cell) {
  std::vector<FrameRef> out;
  for (int i = 0; i < dataset.num_instances(); ++i) {
    const InstanceSplit split = dataset.split(i);
    bool include = false;
    bool typical = false;
    switch (cell) {
      case Cell::KnownTypical: include = split == InstanceSplit::Train, typical = true; break;
      case Cell::KnownNewPose:
        include = split == InstanceSplit::Train && !plan.varying[static_cast<std::size_t>(i)];
        break;
      case Cell::UnknownTypical: include = split == InstanceSplit::Test, typical = true; break;
      case Cell::UnknownNewPose: include = split == InstanceSplit::Test; break;
    }
    if (!include) continue;
    for (int p = 0; p < dataset.num_poses(); ++p)
      if (dataset.is_typical_pose(p) == typical) out.push_back({i, p});
  }
  return out;
}

EvalReport evaluate(const TrainedClassifier& clf, const PoseDataset& dataset) {
  const std::vector<int> pred = predict(clf, dataset.features());
  EvalReport report;
  CellValues row;
  for (Cell cell : kCells) {
    const auto frames = cell_frames(dataset, clf.plan, cell);
    report.cell_sizes[static_cast<std::size_t>(cell)] = frames.size();
    if (frames.empty()) continue;
    std::size_t correct = 0;
    for (const FrameRef& r : frames)
      if (pred[static_cast<std::size_t>(dataset.frame_index(r.instance, r.pose))] == dataset.class_of(r.instance))
        ++correct;
    row[static_cast<std::size_t>(cell)] = static_cast<double>(correct) / static_cast<double>(frames.size());
  }
  report.seeds = {clf.seed};
  report.per_seed = {row};
  report.mean = row;
  return report;
}

EvalReport linear_eval(const Checkpoint& ckpt, const PoseDataset& dataset, double proportion) {
  return evaluate(train_classifier(ckpt, dataset, classifier_settings(ckpt.config, EvalMode::Linear, proportion)),
                  dataset);
}

EvalReport finetune(const Checkpoint& ckpt, const PoseDataset& dataset, double proportion) {
  return evaluate(train_classifier(ckpt, dataset, classifier_settings(ckpt.config, EvalMode::Finetune, proportion)),
                  dataset);
}

EvalReport classify_with_neighbors(const Checkpoint& ckpt, const PoseDataset& dataset, int k, double sigma,
                                   double proportion, EvalMode mode) {
  if (k < 1) throw UsageError("classify_with_neighbors: k must be at least 1");
  ClassifierSettings s = classifier_settings(ckpt.config, mode, proportion);
  s.option = 2;
  s.neighbors = k;
  s.sigma = sigma;
  return evaluate(train_classifier(ckpt, dataset, s), dataset);
}

// ---------------------------------------------------------------------------

AblationVariant ablation_variant(const std::string& name, const LossWeights& base) {
  AblationVariant v{name, base};
  if (name == "full") return v;
  if (name == "no_euc") {
    v.weights.lambda_euc = 0.0;
  } else if (name == "lie_only") {
    v.weights.lambda_euc = 0.0;
    v.weights.lambda_ssl = 0.0;
  } else if (name == "baseline") {
    v.weights.lambda_lie = 0.0;
    v.weights.lambda_euc = 0.0;
  } else {
    throw ConfigError("unknown ablation '" + name + "' (expected full, no_euc, lie_only or baseline)", "ablation");
  }
  return v;
}

std::vector<AblationVariant> default_ablation(const LossWeights& base) {
  std::vector<AblationVariant> out;
  for (const char* name : {"full", "no_euc", "lie_only", "baseline"}) out.push_back(ablation_variant(name, base));
  return out;
}

std::vector<RunOutcome> run_many(const PoseDataset& dataset, const std::vector<RunSpec>& specs,
                                 const std::vector<std::uint64_t>& seeds, EvalMode mode, double proportion, int jobs) {
  const std::size_t n_tasks = specs.size() * seeds.size();
  std::vector<RunOutcome> out(n_tasks);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t t = next++; t < n_tasks; t = next++) {
      RunOutcome& o = out[t];
      o.run_id = specs[t / seeds.size()].run_id;
      o.seed = seeds[t % seeds.size()];
      try {
        TrainConfig config = specs[t / seeds.size()].config;
        config.seed = o.seed;
        const Checkpoint ckpt = ssl_phase(dataset, config).checkpoint;
        o.report = mode == EvalMode::Linear ? linear_eval(ckpt, dataset, proportion) : finetune(ckpt, dataset, proportion);
      } catch (const std::exception& e) {
        o.error = e.what();
        o.exception = std::current_exception();
      }
    }
  };
  const int n_threads = std::clamp(jobs, 1, std::max(1, static_cast<int>(n_tasks)));
  std::vector<std::thread> pool;
  for (int k = 1; k < n_threads; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return out;
}

std::vector<AblationRow> run_ablation(const PoseDataset& dataset, const TrainConfig& base,
                                      const std::vector<AblationVariant>& variants,
                                      const std::vector<std::uint64_t>& seeds, EvalMode mode, double proportion,
                                      int jobs) {
  if (variants.empty() || seeds.empty()) throw UsageError("run_ablation: need at least one variant and one seed");
  std::vector<RunSpec> specs;
  for (const AblationVariant& v : variants) {
    specs.push_back({v.name, base});
    specs.back().config.weights = v.weights;
  }
  const auto outcomes = run_many(dataset, specs, seeds, mode, proportion, jobs);
  for (const RunOutcome& o : outcomes)
    if (o.exception) std::rethrow_exception(o.exception);

  std::vector<AblationRow> rows;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    std::vector<EvalReport> per_seed;
    for (std::size_t s = 0; s < seeds.size(); ++s) per_seed.push_back(*outcomes[v * seeds.size() + s].report);
    rows.push_back({variants[v], aggregate_seeds(per_seed)});
  }
  return rows;
}

// ---------------------------------------------------------------------------

PairCodes encode_pairs(const LieModel& model, const std::vector<FramePair>& pairs) {
  const PairBatch batch = make_pair_batch(pairs);
  PairCodes codes;
  codes.z = model.encoder.forward(batch.x);
  codes.z_g = model.encoder.forward(batch.x_prime);
  codes.z_hat.resize(codes.z.rows(), codes.z.cols());
  codes.t_hat.resize(model.basis.dim(), codes.z.cols());
  codes.delta = batch.delta.row(0).transpose();
  for (Eigen::Index j = 0; j < codes.z.cols(); ++j) {
    const CoordVector t = infer_coordinates(model.head, codes.z.col(j), codes.z_g.col(j), batch.delta(0, j));
    codes.t_hat.col(j) = t.values;
    codes.z_hat.col(j) = apply_operator(t, model.basis, codes.z.col(j));
  }
  for (const FramePair& p : pairs) codes.instances.push_back(p.x.instance);
  return codes;
}

namespace {

Matrix unit_columns(const Matrix& x) {
  Matrix out = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) /= std::max(x.col(j).norm(), 1e-12);
  return out;
}

std::vector<FramePair> held_out_pairs(const PoseDataset& dataset, int count, Rng& rng) {
  const SplitPlan plan = held_out_plan(dataset);
  const int available = plan.varying_count();
  std::vector<FramePair> out;
  while (static_cast<int>(out.size()) < count) {
    const int b = std::min(available, count - static_cast<int>(out.size()));
    if (b < 2) {
      out.push_back(sample_pair_batch(dataset, plan, 2, rng).front());
      continue;
    }
    for (auto& p : sample_pair_batch(dataset, plan, b, rng)) out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

double retrieval_top1(const LieModel& model, const PoseDataset& dataset, int batch_size, int batches, Rng& rng) {
  const SplitPlan plan = held_out_plan(dataset);
  std::size_t hits = 0, total = 0;
  for (int k = 0; k < batches; ++k) {
    const PairCodes codes = encode_pairs(model, sample_pair_batch(dataset, plan, batch_size, rng));
    const Matrix sims = unit_columns(codes.z_hat).transpose() * unit_columns(codes.z_g);
    for (Eigen::Index i = 0; i < sims.rows(); ++i, ++total)
      if (argmax_lowest(sims.row(i).transpose()) == i) ++hits;
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

double mean_transfer_cosine(const LieModel& model, const PoseDataset& dataset, int pairs, Rng& rng) {
  const PairCodes codes = encode_pairs(model, held_out_pairs(dataset, pairs, rng));
  return (unit_columns(codes.z_hat).array() * unit_columns(codes.z_g).array()).colwise().sum().mean();
}

namespace {

Vector average_ranks(const Vector& v) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(v.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&v](Eigen::Index a, Eigen::Index b) { return v(a) < v(b); });
  Vector ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v(order[j + 1]) == v(order[i])) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks(order[k]) = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const Vector& a, const Vector& b) {
  if (a.size() != b.size() || a.size() < 2) throw DimensionError("spearman: need two equal-length samples");
  const Vector ra = average_ranks(a), rb = average_ranks(b);
  const Vector ca = ra.array() - ra.mean(), cb = rb.array() - rb.mean();
  const double denom = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
  return denom == 0.0 ? 0.0 : ca.dot(cb) / denom;
}

double norm_distance_spearman(const LieModel& model, const PoseDataset& dataset, int pairs, Rng& rng) {
  const PairCodes codes = encode_pairs(model, held_out_pairs(dataset, pairs, rng));
  return spearman(codes.delta.cwiseAbs(), codes.t_hat.colwise().norm().transpose());
}

double spread_ratio(const LieModel& model, const PoseDataset& dataset, int poses_per_instance) {
  const SplitPlan plan = held_out_plan(dataset);
  std::vector<int> instances;
  for (int i = 0; i < dataset.num_instances(); ++i)
    if (plan.varying[static_cast<std::size_t>(i)]) instances.push_back(i);
  const int n_poses = dataset.num_poses();
  const int per = std::clamp(poses_per_instance, 2, n_poses);
  const auto n = static_cast<Eigen::Index>(instances.size()) * per;
  Matrix x(dataset.feature_dim(), n);
  std::vector<int> owner(static_cast<std::size_t>(n));
  Eigen::Index col = 0;
  for (int inst : instances)
    for (int k = 0; k < per; ++k, ++col) {
      x.col(col) = dataset.frame_features(inst, k * n_poses / per);
      owner[static_cast<std::size_t>(col)] = inst;
    }
  const Matrix z = model.encoder.forward(x);
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = a + 1; b < n; ++b) {
      const double d = (z.col(a) - z.col(b)).norm();
      if (owner[static_cast<std::size_t>(a)] == owner[static_cast<std::size_t>(b)]) {
        intra += d;
        ++n_intra;
      } else {
        inter += d;
        ++n_inter;
      }
    }
  if (n_intra == 0 || n_inter == 0 || inter == 0.0) return 0.0;
  return (intra / static_cast<double>(n_intra)) / (inter / static_cast<double>(n_inter));
}

}  // namespace lieop

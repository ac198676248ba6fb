#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <map>
#include <ostream>

#include "lieop/config.hpp"
#include "lieop/errors.hpp"
#include "lieop/io.hpp"

namespace lieop::cli {

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "Configuration file");
  cmd->add_option("--set", c.sets, "Override a key: key=value or section.key=value");
}

RunConfig resolve(const Common& c) {
  RunConfig config = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
  for (const std::string& s : c.sets) apply_override(config, s);
  return config;
}

std::string dataset_path(const RunConfig& config, const std::string& flag) {
  const std::string path = flag.empty() ? config.train.dataset : flag;
  if (path.empty()) throw ConfigError("missing required field 'dataset' (set train.dataset or pass --dataset)", "dataset");
  return path;
}

void print_report(std::ostream& out, const std::string& title, const EvalReport& r) {
  out << title << "\n";
  const CellValues gaps = r.gaps();
  for (Cell cell : kCells) {
    const auto c = static_cast<std::size_t>(cell);
    out << "  " << std::left << std::setw(16) << to_string(cell) << std::right;
    if (!r.mean[c]) {
      out << "  absent\n";
      continue;
    }
    out << std::fixed << std::setprecision(3) << "  top1 " << *r.mean[c];
    if (r.stderr_[c]) out << " +- " << *r.stderr_[c];
    if (gaps[c]) out << "  gap " << std::showpos << *gaps[c] << std::noshowpos;
    out << std::defaultfloat << "\n";
  }
}

std::string stem(const std::string& path) { return std::filesystem::path(path).stem().string(); }

int exit_code_of(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const NumericalError&) {
    return kNumerical;
  } catch (const IoError&) {
    return kIo;
  } catch (...) {
    return kUsage;
  }
}

/// Runs specs x seeds, writes the consolidated CSV of successful runs and
/// reports failures per run.
int run_grid(const PoseDataset& ds, const std::vector<RunSpec>& specs, const RunConfig& config, int jobs,
             const std::string& out_path, std::ostream& out, std::ostream& err) {
  const auto outcomes = run_many(ds, specs, config.eval.seeds, config.eval.mode, config.eval.proportion, jobs);
  std::vector<MetricsRow> rows;
  int status = kOk;
  std::map<std::string, std::vector<EvalReport>> ok;
  for (const RunOutcome& o : outcomes) {
    if (o.exception) {
      err << "run " << o.run_id << " seed " << o.seed << " failed: " << o.error << "\n";
      if (status == kOk) status = exit_code_of(o.exception);
      continue;
    }
    ok[o.run_id].push_back(*o.report);
  }
  for (const RunSpec& spec : specs) {
    auto it = ok.find(spec.run_id);
    if (it == ok.end()) continue;
    const EvalReport agg = aggregate_seeds(it->second);
    const int steps = config.eval.mode == EvalMode::Linear ? spec.config.linear_steps : spec.config.finetune_steps;
    auto r = report_rows(spec.run_id, config.eval.mode, config.eval.proportion, agg, static_cast<std::uint64_t>(steps));
    rows.insert(rows.end(), r.begin(), r.end());
    print_report(out, spec.run_id, agg);
  }
  sort_metrics(rows);
  write_file(out_path, render_metrics_csv(rows));
  out << "wrote " << rows.size() << " rows to " << out_path << "\n";
  return status;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lie operator experiments on synthetic pose data", "lieop_cli"};
  app.require_subcommand(1);

  Common common;
  std::string out_path, dataset_flag, resume_path, loss_csv, checkpoint_path, mode_flag, run_id, metrics_path;
  double proportion = -1.0;
  std::vector<std::uint64_t> seeds;
  int jobs = 0;
  bool wall_time = false, verbose = false;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic pose dataset");
  add_common(gen, common);
  gen->add_option("-o,--out", out_path, "Dataset file")->required();

  auto* train = app.add_subcommand("train", "Self-supervised training phase");
  add_common(train, common);
  train->add_option("--dataset", dataset_flag, "Dataset file (overrides train.dataset)");
  train->add_option("-o,--out", out_path, "Checkpoint file")->required();
  train->add_option("--loss-csv", loss_csv, "Loss log (default: <out>.loss.csv)");
  train->add_option("--resume", resume_path, "Continue from this checkpoint");
  train->add_flag("--wall-time", wall_time, "Record elapsed time in the loss log");
  train->add_flag("-v,--verbose", verbose, "Print every logged step");

  auto* eval = app.add_subcommand("eval", "Linear evaluation or finetuning of a checkpoint");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  eval->add_option("--dataset", dataset_flag, "Dataset file (default: the checkpoint's)");
  eval->add_option("--mode", mode_flag, "linear or finetune");
  eval->add_option("--proportion", proportion, "Diversity proportion: 0.05, 0.25 or 0.5");
  eval->add_option("--seeds", seeds, "Classifier seeds")->delimiter(',');
  eval->add_option("--run-id", run_id, "Run id in the CSV (default: checkpoint name)");
  eval->add_option("-o,--out", out_path, "Metrics CSV")->required();

  auto* ablate = app.add_subcommand("ablate", "Loss-term ablations over seeds");
  add_common(ablate, common);
  ablate->add_option("--dataset", dataset_flag, "Dataset file (overrides train.dataset)");
  ablate->add_option("-j,--jobs", jobs, "Parallel runs");
  ablate->add_option("-o,--out", out_path, "Metrics CSV")->required();

  auto* sweep = app.add_subcommand("sweep", "Grid over (lambda_ssl, lambda_lie, lambda_euc)");
  add_common(sweep, common);
  sweep->add_option("--dataset", dataset_flag, "Dataset file (overrides train.dataset)");
  sweep->add_option("-j,--jobs", jobs, "Parallel runs");
  sweep->add_option("-o,--out", out_path, "Metrics CSV")->required();

  auto* plot = app.add_subcommand("plot", "Bar chart of a metrics CSV");
  plot->add_option("--metrics", metrics_path, "Metrics CSV")->required();
  plot->add_option("-o,--out", out_path, "SVG file")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) {
      const RunConfig config = resolve(common);
      const PoseDataset ds = generate_dataset(config.data);
      const std::string bytes = encode_dataset(ds);
      write_file(out_path, bytes);
      write_file(out_path + ".manifest", dataset_manifest(ds, bytes.size()));
      out << "classes " << ds.config().classes << ", instances " << ds.num_instances() << ", poses "
          << ds.num_poses() << ", feature_dim " << ds.feature_dim() << ", bytes " << bytes.size() << "\n";
      return kOk;
    }

    if (train->parsed()) {
      RunConfig config = resolve(common);
      config.train.dataset = dataset_path(config, dataset_flag);
      const PoseDataset ds = load_dataset(config.train.dataset);
      Checkpoint resume;
      SslOptions options;
      if (!resume_path.empty()) {
        resume = load_checkpoint(resume_path);
        options.resume = &resume;
      }
      options.record_wall_time = wall_time;
      if (verbose)
        options.on_log = [&out](const LossLogRow& r) {
          out << "step " << r.step << " total " << r.total << " ssl " << r.ssl << " lie " << r.lie << " euc " << r.euc
              << " norm " << r.norm << "\n";
        };
      const SslResult result = ssl_phase(ds, config.train, options);
      save_checkpoint(out_path, result.checkpoint);
      const std::string loss_path = loss_csv.empty() ? out_path + ".loss.csv" : loss_csv;
      write_file(loss_path, render_loss_csv(result.log));
      if (!result.log.empty()) {
        const LossLogRow& last = result.log.back();
        out << "step " << last.step << " total " << last.total << "\n";
      }
      out << "wrote " << out_path << " and " << loss_path << "\n";
      return kOk;
    }

    if (eval->parsed()) {
      RunConfig config = resolve(common);
      if (!mode_flag.empty()) config.eval.mode = eval_mode_from_string(mode_flag);
      if (proportion >= 0.0) config.eval.proportion = proportion;
      if (!is_valid_proportion(config.eval.proportion))
        throw ConfigError("proportion must be one of 0.05, 0.25, 0.5", "proportion");
      if (!seeds.empty()) config.eval.seeds = seeds;
      const Checkpoint ckpt = load_checkpoint(checkpoint_path);
      const std::string ds_path = dataset_flag.empty() ? ckpt.config.dataset : dataset_flag;
      if (ds_path.empty()) throw ConfigError("missing required field 'dataset' (pass --dataset)", "dataset");
      const PoseDataset ds = load_dataset(ds_path);
      std::vector<EvalReport> reports;
      for (std::uint64_t s : config.eval.seeds) {
        ClassifierSettings settings = classifier_settings(ckpt.config, config.eval.mode, config.eval.proportion);
        settings.seed = s;
        reports.push_back(evaluate(train_classifier(ckpt, ds, settings), ds));
      }
      const EvalReport agg = aggregate_seeds(reports);
      const std::string id = run_id.empty() ? stem(checkpoint_path) : run_id;
      const int steps =
          config.eval.mode == EvalMode::Linear ? ckpt.config.linear_steps : ckpt.config.finetune_steps;
      auto rows = report_rows(id, config.eval.mode, config.eval.proportion, agg, static_cast<std::uint64_t>(steps));
      sort_metrics(rows);
      write_file(out_path, render_metrics_csv(rows));
      print_report(out, id + " (" + to_string(config.eval.mode) + ", p=" + format_double(config.eval.proportion) + ")",
                   agg);
      return kOk;
    }

    if (ablate->parsed() || sweep->parsed()) {
      RunConfig config = resolve(common);
      config.train.dataset = dataset_path(config, dataset_flag);
      const PoseDataset ds = load_dataset(config.train.dataset);
      std::vector<RunSpec> specs;
      if (ablate->parsed()) {
        for (const std::string& name : config.sweep.ablations) {
          RunSpec spec{name, config.train};
          spec.config.weights = ablation_variant(name, config.train.weights).weights;
          specs.push_back(spec);
        }
      } else {
        for (double a : config.sweep.lambda_grid)
          for (double b : config.sweep.lambda_grid)
            for (double c : config.sweep.lambda_grid) {
              RunSpec spec{"ssl" + format_double(a) + "_lie" + format_double(b) + "_euc" + format_double(c),
                           config.train};
              spec.config.weights.lambda_ssl = a;
              spec.config.weights.lambda_lie = b;
              spec.config.weights.lambda_euc = c;
              specs.push_back(spec);
            }
      }
      if (specs.empty()) throw ConfigError("nothing to run", ablate->parsed() ? "ablations" : "lambda_grid");
      return run_grid(ds, specs, config, jobs > 0 ? jobs : config.sweep.jobs, out_path, out, err);
    }

    if (plot->parsed()) {
      const auto rows = parse_metrics_csv(read_file(metrics_path));
      write_file(out_path, render_bar_chart_svg(rows));
      out << "wrote " << out_path << "\n";
      return kOk;
    }
  } catch (const ConfigError& e) {
    err << "config error";
    if (!e.field().empty()) err << " in field '" << e.field() << "'";
    err << ": " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const DimensionError& e) {
    err << "dimension error: " << e.what() << "\n";
    return kUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace lieop::cli

#include "protofuse_cli/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "protofuse/data_model.hpp"
#include "protofuse/errors.hpp"
#include "protofuse/gradcheck.hpp"
#include "protofuse/pipeline.hpp"

namespace protofuse::cli {

namespace {

std::string dashed(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  return key;
}

// Every TrainConfig field as a --flag; values are applied over the config
// file after parsing.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "key = value configuration file; flags override it");
    TrainConfig defaults;
    defaults.missingness = MissingnessSpec{};
    for (const auto& [key, value] : defaults.to_map()) {
      values[key] = value;
      const std::string names = "--" + key + (dashed(key) != key ? ",--" + dashed(key) : "");
      options[key] = app.add_option(names, values[key], "TrainConfig field " + key);
    }
  }

  TrainConfig resolve() const {
    TrainConfig cfg;
    if (!config_file.empty()) apply_config_file(config_file, cfg);
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) cfg.set(key, values.at(key));
    }
    cfg.validate();
    return cfg;
  }
};

struct EvalSpecFlags {
  std::string mode;
  double rate = -1.0;
  std::uint64_t seed = 0;
  std::string strategy;

  void attach(CLI::App& app) {
    app.add_option("--missingness-mode,--missingness_mode", mode, "patient_wise or feature_wise");
    app.add_option("--missingness-rate,--missingness_rate", rate, "fraction of patients or genes to mask");
    app.add_option("--missingness-seed,--missingness_seed", seed, "seed for the masking draw");
    app.add_option("--fill-strategy,--fill_strategy", strategy, "sgi or mean_fill");
  }

  EvalOptions resolve() const {
    EvalOptions opt;
    if (rate >= 0.0 || !mode.empty()) {
      MissingnessSpec spec;
      spec.mode = mode.empty() ? MissingnessMode::patient_wise : parse_missingness_mode(mode);
      spec.rate = rate < 0.0 ? 0.0 : rate;
      if (spec.rate > 1.0) throw ConfigError("missingness rate must lie in [0, 1]");
      spec.seed = seed;
      opt.spec = spec;
    }
    if (!strategy.empty()) opt.strategy = parse_fill_strategy(strategy);
    return opt;
  }
};

std::vector<std::pair<int, double>> read_alignment_trace(const std::filesystem::path& log_path) {
  std::vector<std::pair<int, double>> trace;
  std::ifstream in(log_path);
  if (!in) return trace;
  std::string line;
  std::getline(in, line);
  const auto header = split_delimited(line);
  int col = -1;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == "paired_cosine") col = static_cast<int>(i);
  if (col < 0) throw SchemaError(log_path.string() + " has no paired_cosine column");
  while (std::getline(in, line)) {
    const auto cells = split_delimited(line);
    if (static_cast<int>(cells.size()) <= col) continue;
    trace.emplace_back(std::stoi(cells[0]), std::stod(cells[static_cast<std::size_t>(col)]));
  }
  return trace;
}

void print_rows(std::ostream& out, const std::vector<MetricsReport>& rows) {
  out << MetricsReport::header() << '\n';
  for (const auto& r : rows) out << r.row() << '\n';
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"protofuse: prototype-based histology/genomics fusion with missing-modality support"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic cohort on disk");
  int n_patients = 100, dim = 64, n_genes = 120;
  std::uint64_t synth_seed = 7;
  std::string synth_out;
  synth->add_option("--patients", n_patients, "number of patients")->check(CLI::PositiveNumber);
  synth->add_option("--dim", dim, "patch embedding width")->check(CLI::PositiveNumber);
  synth->add_option("--genes", n_genes, "number of genes")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "two-phase training; writes a checkpoint and metrics log");
  ConfigFlags train_flags;
  train_flags.attach(*train_cmd);
  std::string train_cohort, train_out, train_validation;
  train_cmd->add_option("--cohort", train_cohort, "cohort manifest")->required();
  train_cmd->add_option("--validation", train_validation, "validation cohort manifest for early stopping");
  train_cmd->add_option("--out", train_out, "checkpoint directory")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint, optionally under simulated missingness");
  std::string eval_ckpt, eval_cohort, eval_out, eval_predictions, eval_fold = "all";
  EvalSpecFlags eval_spec;
  eval_spec.attach(*eval_cmd);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
  eval_cmd->add_option("--cohort", eval_cohort, "cohort manifest")->required();
  eval_cmd->add_option("--out", eval_out, "results table (stdout when omitted)");
  eval_cmd->add_option("--predictions", eval_predictions, "per-patient prediction table");
  eval_cmd->add_option("--fold", eval_fold, "fold tag written to the results table");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "missingness sweep: modes x rates x strategies");
  ConfigFlags sweep_flags;
  sweep_flags.attach(*sweep_cmd);
  std::string sweep_cohort, sweep_out, sweep_ckpt, sweep_logs;
  int folds = 5;
  std::vector<double> rates = default_sweep_rates();
  std::vector<std::string> modes{"patient_wise", "feature_wise"};
  std::vector<std::string> strategies{"sgi", "mean_fill"};
  sweep_cmd->add_option("--cohort", sweep_cohort, "cohort manifest")->required();
  sweep_cmd->add_option("--checkpoint", sweep_ckpt, "evaluate this checkpoint instead of cross-validating");
  sweep_cmd->add_option("--folds", folds, "cross-validation folds");
  sweep_cmd->add_option("--rates", rates, "missing rates")->delimiter(',');
  sweep_cmd->add_option("--modes", modes, "missingness modes")->delimiter(',');
  sweep_cmd->add_option("--strategies", strategies, "fill strategies")->delimiter(',');
  sweep_cmd->add_option("--out", sweep_out, "results table (stdout when omitted)");
  sweep_cmd->add_option("--logs", sweep_logs, "directory for per-fold metrics logs");

  // explain
  auto* explain_cmd = app.add_subcommand("explain", "export importance, affinity and attention tables");
  std::string explain_ckpt, explain_cohort, explain_out;
  explain_cmd->add_option("--checkpoint", explain_ckpt, "checkpoint directory")->required();
  explain_cmd->add_option("--cohort", explain_cohort, "cohort manifest")->required();
  explain_cmd->add_option("--out", explain_out, "output directory")->required();

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference checks of every analytic gradient");
  std::uint64_t grad_seed = 7;
  double tolerance = 1e-4;
  grad_cmd->add_option("--seed", grad_seed, "instance seed");
  grad_cmd->add_option("--tolerance", tolerance, "maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      const Cohort cohort = generate_synthetic(n_patients, dim, n_genes, synth_seed);
      const auto manifest = save_cohort(cohort, synth_out);
      out << "wrote " << cohort.size() << " patients to " << manifest.string() << '\n';
    } else if (*train_cmd) {
      const TrainConfig cfg = train_flags.resolve();
      const Cohort cohort = load_cohort(train_cohort);
      std::optional<Cohort> validation;
      if (!train_validation.empty()) validation = load_cohort(train_validation);
      const TrainResult result = train(cohort, cfg, validation ? &*validation : nullptr);
      save_checkpoint(result.state, train_out);
      result.log.write_tsv(std::filesystem::path(train_out) / "metrics_log.tsv");
      const EpochLog& last = result.log.epochs.back();
      char line[160];
      std::snprintf(line, sizeof line, "trained %d epochs, final task loss %.6f, alignment frozen at epoch %d\n",
                    last.epoch, last.task_loss, result.log.freeze_epoch);
      out << line;
    } else if (*eval_cmd) {
      const ModelState state = load_checkpoint(eval_ckpt);
      const Cohort cohort = load_cohort(eval_cohort);
      EvalOptions opt = eval_spec.resolve();
      opt.fold = eval_fold;
      const EvalResult result = evaluate(state, cohort, opt);
      if (eval_out.empty()) {
        print_rows(out, {result.report});
      } else {
        write_results_table(eval_out, {result.report});
      }
      if (!eval_predictions.empty()) {
        std::ofstream pred(eval_predictions);
        if (!pred) throw LoadError("cannot write " + eval_predictions);
        pred << "patient_id\tn_slides\tscores\n";
        for (const auto& p : result.predictions) {
          pred << p.patient_id << '\t' << p.per_slide.size() << '\t';
          for (Eigen::Index k = 0; k < p.scores.size(); ++k) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.9g", p.scores(k));
            pred << (k ? "," : "") << buf;
          }
          pred << '\n';
        }
      }
    } else if (*sweep_cmd) {
      std::vector<MissingnessMode> mode_list;
      for (const auto& m : modes) mode_list.push_back(parse_missingness_mode(m));
      std::vector<FillStrategy> strategy_list;
      for (const auto& s : strategies) strategy_list.push_back(parse_fill_strategy(s));
      for (double r : rates)
        if (r < 0.0 || r > 1.0) throw ConfigError("sweep rates must lie in [0, 1]");
      const Cohort cohort = load_cohort(sweep_cohort);
      std::vector<MetricsReport> rows;
      if (!sweep_ckpt.empty()) {
        const ModelState state = load_checkpoint(sweep_ckpt);
        rows = sweep_units({{&state, cohort, "all"}}, mode_list, rates, strategy_list, state.config.seed);
      } else {
        const TrainConfig cfg = sweep_flags.resolve();
        const SweepResult result = missingness_sweep(cohort, cfg, folds, mode_list, rates, strategy_list);
        rows = result.rows;
        if (!sweep_logs.empty()) {
          std::filesystem::create_directories(sweep_logs);
          for (std::size_t f = 0; f < result.logs.size(); ++f) {
            result.logs[f].write_tsv(std::filesystem::path(sweep_logs) / ("fold" + std::to_string(f) + ".tsv"));
          }
        }
      }
      if (sweep_out.empty()) {
        print_rows(out, rows);
      } else {
        write_results_table(sweep_out, rows);
      }
    } else if (*explain_cmd) {
      const ModelState state = load_checkpoint(explain_ckpt);
      const Cohort cohort = load_cohort(explain_cohort);
      ExplainBundle bundle = explain(state, cohort);
      bundle.alignment_trace = read_alignment_trace(std::filesystem::path(explain_ckpt) / "metrics_log.tsv");
      write_explain(bundle, explain_out);
      out << "wrote explain tables for " << bundle.patient_ids.size() << " patients to " << explain_out << '\n';
    } else if (*grad_cmd) {
      bool all = true;
      for (const auto& r : run_gradient_suite(grad_seed, tolerance)) {
        char line[160];
        std::snprintf(line, sizeof line, "%-28s %s  max_rel_error=%.3e  entries=%ld\n", r.name.c_str(),
                      r.passed ? "PASS" : "FAIL", r.max_relative_error, r.n_checked);
        out << line;
        all = all && r.passed;
      }
      return all ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace protofuse::cli

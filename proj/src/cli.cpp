#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "drgcn/experiments.hpp"

namespace drgcn {

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> repeats;
  std::optional<std::size_t> jobs;
  std::string dataset;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool config_required) {
  auto* opt = cmd->add_option("--config", f.config, "experiment config file");
  if (config_required) opt->required();
  cmd->add_option("--out", f.out, "output directory (overrides the 'out' key)");
  cmd->add_option("--seed", f.seed, "base seed (overrides the 'seed' key)");
  cmd->add_option("--dataset", f.dataset, "container directory (overrides the 'dataset' key)");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig cfg = load_config(f.config);
  if (!f.out.empty()) cfg.out = f.out;
  if (!f.dataset.empty()) cfg.dataset = f.dataset;
  if (f.seed) cfg.train.seed = *f.seed;
  if (f.repeats) cfg.repeats = *f.repeats;
  if (f.jobs) cfg.jobs = *f.jobs;
  validate_config(cfg);
  if (cfg.out.empty()) throw ConfigError("no output directory given (use --out or the 'out' key)");
  return cfg;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"DRGCN training and experiment driver"};
  app.require_subcommand(1);

  CommonFlags train_f;
  auto* train = app.add_subcommand("train", "train one model");
  add_common(train, train_f, true);

  std::string eval_params;
  std::string eval_dataset;
  std::string eval_out;
  auto* eval = app.add_subcommand("eval", "evaluate a parameter file on a container");
  eval->add_option("--params", eval_params, "params.bin from a train run")->required();
  eval->add_option("--dataset", eval_dataset, "container directory")->required();
  eval->add_option("--out", eval_out, "directory for eval.json");

  CommonFlags sweep_f;
  std::string sweep_axis;
  std::vector<std::string> sweep_values;
  auto* sweep = app.add_subcommand("sweep", "grid over one axis with repeats");
  add_common(sweep, sweep_f, true);
  sweep->add_option("--axis", sweep_axis, "layers, train_size or fixed_alpha");
  sweep->add_option("--values", sweep_values, "axis values (overrides the 'values' key)")->delimiter(',');
  sweep->add_option("--repeats", sweep_f.repeats, "repeats per cell");
  sweep->add_option("--jobs", sweep_f.jobs, "worker threads");

  CommonFlags ablate_f;
  auto* ablate = app.add_subcommand("ablate", "base / +dyn / +dyn_evo / +dyn_evo_aug comparison");
  add_common(ablate, ablate_f, true);
  ablate->add_option("--repeats", ablate_f.repeats, "repeats per mode");
  ablate->add_option("--jobs", ablate_f.jobs, "worker threads");

  CommonFlags export_f;
  std::vector<std::string> export_runs;
  auto* export_alpha = app.add_subcommand("export-alpha", "plot-ready alpha statistics");
  add_common(export_alpha, export_f, false);
  export_alpha->add_option("--params", export_runs, "train output directories to read traces from");
  export_alpha->add_option("--repeats", export_f.repeats, "fresh runs when no --params are given");
  export_alpha->add_option("--jobs", export_f.jobs, "worker threads");

  SyntheticSpec syn;
  std::string syn_out;
  auto* gen = app.add_subcommand("gen-synthetic", "write a stochastic block model container");
  gen->add_option("--out", syn_out, "container directory")->required();
  gen->add_option("--nodes", syn.num_nodes, "node count");
  gen->add_option("--features", syn.num_features, "feature dimension");
  gen->add_option("--classes", syn.num_classes, "class count");
  gen->add_option("--edge-prob", syn.edge_prob, "overall edge density");
  gen->add_option("--homophily", syn.homophily, "intra-class edge fraction");
  gen->add_option("--noise", syn.feature_noise, "feature noise half-width");
  gen->add_option("--seed", syn.seed, "generator seed");
  gen->add_option("--name", syn.name, "dataset name");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) {
      const RunConfig cfg = resolve(train_f);
      const TrainResult res = cmd_train(cfg, cfg.out);
      out << "test_acc " << res.history.test_acc << " (best epoch " << res.history.best_epoch << ")\n";
    } else if (*eval) {
      out << cmd_eval(eval_params, eval_dataset, eval_out);
    } else if (*sweep) {
      RunConfig cfg = load_config(sweep_f.config);
      if (!sweep_axis.empty()) cfg.sweep_axis = sweep_axis;
      if (sweep->count("--values") > 0) cfg.sweep_values = sweep_values;
      sweep_f.config.clear();
      const RunConfig merged = [&] {
        RunConfig c = cfg;
        if (!sweep_f.out.empty()) c.out = sweep_f.out;
        if (!sweep_f.dataset.empty()) c.dataset = sweep_f.dataset;
        if (sweep_f.seed) c.train.seed = *sweep_f.seed;
        if (sweep_f.repeats) c.repeats = *sweep_f.repeats;
        if (sweep_f.jobs) c.jobs = *sweep_f.jobs;
        validate_config(c);
        if (c.out.empty()) throw ConfigError("no output directory given (use --out or the 'out' key)");
        return c;
      }();
      const SweepReport rep = cmd_sweep(merged, merged.out);
      for (const auto& c : rep.cells) {
        out << rep.axis << "=" << c.value << " mean " << c.mean << " std " << c.std << " runs " << c.runs
            << " failed " << c.failed << "\n";
      }
    } else if (*ablate) {
      const RunConfig cfg = resolve(ablate_f);
      const SweepReport rep = cmd_ablate(cfg, cfg.out);
      for (const auto& c : rep.cells) {
        out << c.value << " mean " << c.mean << " std " << c.std << " runs " << c.runs << " failed " << c.failed
            << "\n";
      }
    } else if (*export_alpha) {
      std::vector<std::filesystem::path> runs(export_runs.begin(), export_runs.end());
      RunConfig cfg;
      if (!export_f.config.empty()) {
        cfg = resolve(export_f);
      } else {
        if (runs.empty()) throw ConfigError("export-alpha needs --config or --params");
        cfg.out = export_f.out;
      }
      cmd_export_alpha(cfg, runs, cfg.out.empty() ? std::filesystem::path(export_f.out) : cfg.out);
    } else if (*gen) {
      cmd_gen_synthetic(syn, syn_out);
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ModelError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const TrainingDiverged& e) {
    err << "diverged: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitOther;
  }
}

}  // namespace drgcn

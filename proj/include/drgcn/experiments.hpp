#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "drgcn/config.hpp"
#include "drgcn/dataset.hpp"
#include "drgcn/training.hpp"

namespace drgcn {

/// Stable exit codes of the command-line front end.
enum ExitCode : int { kExitOk = 0, kExitOther = 1, kExitConfig = 2, kExitData = 3, kExitDiverged = 4 };

/// Seed of one sweep cell; depends only on its coordinates, so any cell can be
/// rerun in isolation.
std::uint64_t cell_seed(std::uint64_t base_seed, std::string_view axis, std::string_view value, std::size_t repeat);

/// Reads the container and applies the configured split sizes.
Dataset load_run_dataset(const RunConfig& cfg);

/// One training run (full-batch or mini-batch per config).
TrainResult run_experiment(const RunConfig& cfg, const Dataset& ds);

/// Writes history.csv, metrics.json, params.bin, alpha_trace.json,
/// config.txt and manifest.json under out.
TrainResult cmd_train(const RunConfig& cfg, const std::filesystem::path& out);

/// Accuracy per split and smoothness per layer; writes eval.json.
std::string cmd_eval(const std::filesystem::path& params_path, const std::filesystem::path& dataset,
                     const std::filesystem::path& out);

struct RunRecord {
  std::string value;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double test_acc = 0.0;
  double valid_acc = 0.0;
  std::size_t best_epoch = 0;
};

struct CellSummary {
  std::string value;
  double mean = 0.0;
  double std = 0.0;
  std::size_t runs = 0;
  std::size_t failed = 0;
};

struct SweepReport {
  std::string axis;
  std::vector<CellSummary> cells;
  std::vector<RunRecord> runs;
};

/// Failed runs are listed but excluded from the cell statistics.
CellSummary summarize_cell(std::string value, const std::vector<RunRecord>& runs);

/// Axis is one of layers, train_size, fixed_alpha; writes sweep.csv and
/// sweep.json.
SweepReport cmd_sweep(const RunConfig& cfg, const std::filesystem::path& out);

/// Rows base_fixed_alpha, +dyn, +dyn_evo, +dyn_evo_aug sharing per-repeat
/// seeds; writes ablation.csv and ablation.json.
SweepReport cmd_ablate(const RunConfig& cfg, const std::filesystem::path& out);

/// Traces come from previous train output directories when given, otherwise
/// from cfg.repeats fresh runs. Writes alpha_mean.csv, alpha_quartiles.csv and
/// alpha_epochs.csv.
void cmd_export_alpha(const RunConfig& cfg, const std::vector<std::filesystem::path>& runs,
                      const std::filesystem::path& out);

void cmd_gen_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out);

/// alpha_trace.json round trip.
std::string alpha_trace_to_json(const AlphaTrace& trace);
AlphaTrace alpha_trace_from_json(std::string_view text);

/// Full command-line entry point; maps exceptions to ExitCode values.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace drgcn

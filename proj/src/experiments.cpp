#include "drgcn/experiments.hpp"

#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "format.hpp"

namespace drgcn {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.filename().string(), "missing or unreadable in " + path.parent_path().string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

std::string crc32_hex(const std::string& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  std::ostringstream ss;
  ss << std::hex << std::setw(8) << std::setfill('0') << static_cast<std::uint32_t>(crc);
  return ss.str();
}

void ensure_dir(const fs::path& dir) {
  if (dir.empty()) throw ConfigError("no output directory given (use --out or the 'out' key)");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
}

void write_manifest(const fs::path& out, std::string_view command, const RunConfig& cfg,
                    const std::vector<std::string>& artifacts, double wall_seconds) {
  json j = {{"command", command},
            {"config_hash", "crc32:" + crc32_hex(canonical_config(cfg))},
            {"rng", std::string(Rng::kAlgorithm) + "/v" + std::to_string(Rng::kVersion)},
            {"artifacts", artifacts},
            {"wall_seconds", wall_seconds}};
  write_text(out / "manifest.json", j.dump(2) + "\n");
}

Dataset apply_split(const Dataset& base, const RunConfig& cfg) {
  if (!cfg.train_size && !cfg.valid_size && !cfg.test_size) return base;
  SplitSpec spec;
  spec.train_size = cfg.train_size.value_or(base.splits.train.size());
  spec.valid_size = cfg.valid_size.value_or(base.splits.valid.size());
  spec.test_size = cfg.test_size.value_or(base.splits.test.size());
  spec.mode = cfg.split_mode;
  spec.seed = mix64(cfg.train.seed ^ stable_hash("split"));
  return make_split(base, spec);
}

MiniBatchConfig resolved_mini(const RunConfig& cfg) {
  MiniBatchConfig mb = cfg.mini;
  if (mb.fanouts.size() == 1) mb.fanouts.assign(cfg.model.layers, mb.fanouts.front());
  return mb;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

struct Task {
  std::string value;
  std::size_t repeat = 0;
  RunConfig cfg;
  const Dataset* ds = nullptr;
};

/// Runs tasks on `jobs` worker threads; record order follows task order.
std::vector<RunRecord> run_pool(const std::vector<Task>& tasks, std::size_t jobs) {
  std::vector<RunRecord> records(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      const Task& t = tasks[i];
      RunRecord& r = records[i];
      r.value = t.value;
      r.repeat = t.repeat;
      r.seed = t.cfg.train.seed;
      try {
        const TrainResult res = run_experiment(t.cfg, *t.ds);
        r.ok = true;
        r.test_acc = res.history.test_acc;
        r.valid_acc = res.history.best_valid_acc;
        r.best_epoch = res.history.best_epoch;
      } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, tasks.size()));
  std::vector<std::thread> threads;
  for (std::size_t k = 1; k < n; ++k) threads.emplace_back(worker);
  worker();
  for (auto& th : threads) th.join();
  return records;
}

std::string report_csv(const SweepReport& rep, std::string_view first_column) {
  std::string csv = std::string(first_column) + ",mean_test_acc,std_test_acc,n_runs,n_failed\n";
  for (const auto& c : rep.cells) {
    csv += c.value + "," + format_double(c.mean) + "," + format_double(c.std) + "," + std::to_string(c.runs) + "," +
           std::to_string(c.failed) + "\n";
  }
  return csv;
}

std::string report_json(const SweepReport& rep) {
  json cells = json::array();
  for (const auto& c : rep.cells) {
    cells.push_back({{"value", c.value}, {"mean_test_acc", c.mean}, {"std_test_acc", c.std}, {"n_runs", c.runs},
                     {"n_failed", c.failed}});
  }
  json runs = json::array();
  for (const auto& r : rep.runs) {
    json j = {{"value", r.value}, {"repeat", r.repeat}, {"seed", r.seed}, {"ok", r.ok}};
    if (r.ok) {
      j["test_acc"] = r.test_acc;
      j["valid_acc"] = r.valid_acc;
      j["best_epoch"] = r.best_epoch;
    } else {
      j["error"] = r.error;
    }
    runs.push_back(std::move(j));
  }
  return json{{"axis", rep.axis}, {"cells", cells}, {"runs", runs}}.dump(2) + "\n";
}

SweepReport assemble(std::string axis, const std::vector<std::string>& values, std::vector<RunRecord> records) {
  SweepReport rep;
  rep.axis = std::move(axis);
  for (const auto& v : values) {
    std::vector<RunRecord> cell;
    for (const auto& r : records) {
      if (r.value == v) cell.push_back(r);
    }
    rep.cells.push_back(summarize_cell(v, cell));
  }
  rep.runs = std::move(records);
  return rep;
}

json stats_column(const std::vector<AlphaLayerStats>& layers, double AlphaLayerStats::*field) {
  json arr = json::array();
  for (const auto& s : layers) arr.push_back(s.*field);
  return arr;
}

}  // namespace

std::uint64_t cell_seed(std::uint64_t base_seed, std::string_view axis, std::string_view value, std::size_t repeat) {
  std::uint64_t h = mix64(base_seed ^ stable_hash(axis));
  h = mix64(h ^ stable_hash(value));
  return mix64(h ^ static_cast<std::uint64_t>(repeat));
}

Dataset load_run_dataset(const RunConfig& cfg) {
  if (cfg.dataset.empty()) throw ConfigError("missing required config key 'dataset'");
  return apply_split(read_container(cfg.dataset), cfg);
}

TrainResult run_experiment(const RunConfig& cfg, const Dataset& ds) {
  if (cfg.mini_batch) return train_mini_batch(ds, cfg.model, cfg.train, resolved_mini(cfg));
  return train_full_batch(ds, cfg.model, cfg.train);
}

std::string alpha_trace_to_json(const AlphaTrace& trace) {
  json snaps = json::array();
  for (const auto& s : trace.snapshots) {
    snaps.push_back({{"epoch", s.epoch},
                     {"mean", stats_column(s.layers, &AlphaLayerStats::mean)},
                     {"min", stats_column(s.layers, &AlphaLayerStats::min)},
                     {"q1", stats_column(s.layers, &AlphaLayerStats::q1)},
                     {"median", stats_column(s.layers, &AlphaLayerStats::median)},
                     {"q3", stats_column(s.layers, &AlphaLayerStats::q3)},
                     {"max", stats_column(s.layers, &AlphaLayerStats::max)}});
  }
  json final_alpha = json::array();
  for (std::size_t l = 0; l < trace.final_alpha.rows(); ++l) {
    const auto r = trace.final_alpha.row(l);
    final_alpha.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return json{{"layers", trace.final_alpha.rows()}, {"snapshots", snaps}, {"final_alpha", final_alpha}}.dump() + "\n";
}

AlphaTrace alpha_trace_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    AlphaTrace t;
    for (const auto& s : j.at("snapshots")) {
      AlphaSnapshot snap;
      snap.epoch = s.at("epoch").get<std::size_t>();
      const auto mean = s.at("mean").get<std::vector<double>>();
      const auto mn = s.at("min").get<std::vector<double>>();
      const auto q1 = s.at("q1").get<std::vector<double>>();
      const auto med = s.at("median").get<std::vector<double>>();
      const auto q3 = s.at("q3").get<std::vector<double>>();
      const auto mx = s.at("max").get<std::vector<double>>();
      for (std::size_t l = 0; l < mean.size(); ++l) {
        snap.layers.push_back({mean.at(l), mn.at(l), q1.at(l), med.at(l), q3.at(l), mx.at(l)});
      }
      t.snapshots.push_back(std::move(snap));
    }
    const auto rows = j.at("final_alpha").get<std::vector<std::vector<double>>>();
    if (!rows.empty()) {
      t.final_alpha = Tensor(rows.size(), rows.front().size());
      for (std::size_t l = 0; l < rows.size(); ++l) {
        if (rows[l].size() != rows.front().size()) throw DataError("alpha_trace.json", "ragged final_alpha");
        for (std::size_t i = 0; i < rows[l].size(); ++i) t.final_alpha(l, i) = rows[l][i];
      }
    }
    return t;
  } catch (const json::exception& e) {
    throw DataError("alpha_trace.json", e.what());
  }
}

TrainResult cmd_train(const RunConfig& cfg, const fs::path& out) {
  const auto start = std::chrono::steady_clock::now();
  validate_config(cfg);
  const Dataset ds = load_run_dataset(cfg);
  ensure_dir(out);
  TrainResult res = run_experiment(cfg, ds);
  const TrainHistory& h = res.history;

  std::string csv = "epoch,train_loss,train_acc,valid_acc\n";
  for (const auto& e : h.epochs) {
    csv += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," + format_double(e.train_acc) + "," +
           format_double(e.valid_acc) + "\n";
  }
  write_text(out / "history.csv", csv);

  double train_acc_at_best = 0.0;
  for (const auto& e : h.epochs) {
    if (e.epoch == h.best_epoch) train_acc_at_best = e.train_acc;
  }
  const json metrics = {{"dataset", ds.meta.name},
                        {"variant", to_string(res.params.config.variant)},
                        {"alpha_mode", to_string(res.params.config.alpha_mode)},
                        {"layers", res.params.config.layers},
                        {"hidden", res.params.config.hidden},
                        {"seed", cfg.train.seed},
                        {"mini_batch", cfg.mini_batch},
                        {"epochs_run", h.epochs.size()},
                        {"best_epoch", h.best_epoch},
                        {"train_acc", train_acc_at_best},
                        {"valid_acc", h.best_valid_acc},
                        {"test_acc", h.test_acc},
                        {"num_train", ds.splits.train.size()},
                        {"num_valid", ds.splits.valid.size()},
                        {"num_test", ds.splits.test.size()}};
  write_text(out / "metrics.json", metrics.dump(2) + "\n");
  save_params(res.params, out / "params.bin");
  write_text(out / "alpha_trace.json", alpha_trace_to_json(h.alpha));
  write_text(out / "config.txt", canonical_config(cfg));
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out, "train", cfg,
                 {"history.csv", "metrics.json", "params.bin", "alpha_trace.json", "config.txt"}, wall);
  return res;
}

std::string cmd_eval(const fs::path& params_path, const fs::path& dataset, const fs::path& out) {
  const ModelParams params = load_params(params_path);
  const Dataset ds = read_container(dataset);
  const ModelConfig cfg = resolve_model_config(params.config, ds);
  if (params.h_init.rows() != ds.meta.num_nodes) {
    throw ModelError("parameter file was trained on " + std::to_string(params.h_init.rows()) +
                     " nodes, dataset has " + std::to_string(ds.meta.num_nodes));
  }
  const SparseAdj p = build_normalized(ds.graph);
  const EvalResult ev = evaluate(params, ds, prepare_features(ds.x, cfg), p, true);
  json alpha_mean = json::array();
  for (const Tensor& a : ev.alpha) alpha_mean.push_back(summarize_alpha(a.values()).mean);
  const json j = {{"dataset", ds.meta.name},     {"layers", cfg.layers},         {"train_acc", ev.train_acc},
                  {"valid_acc", ev.valid_acc},   {"test_acc", ev.test_acc},      {"valid_loss", ev.valid_loss},
                  {"smoothness", ev.smoothness}, {"alpha_mean", alpha_mean}};
  const std::string text = j.dump(2) + "\n";
  if (!out.empty()) {
    ensure_dir(out);
    write_text(out / "eval.json", text);
  }
  return text;
}

CellSummary summarize_cell(std::string value, const std::vector<RunRecord>& runs) {
  CellSummary c;
  c.value = std::move(value);
  std::vector<double> acc;
  for (const auto& r : runs) {
    if (r.ok) {
      acc.push_back(r.test_acc);
    } else {
      ++c.failed;
    }
  }
  c.runs = acc.size();
  c.mean = mean_of(acc);
  c.std = sample_std(acc);
  return c;
}

SweepReport cmd_sweep(const RunConfig& cfg, const fs::path& out) {
  const auto start = std::chrono::steady_clock::now();
  validate_config(cfg);
  static const std::vector<std::string> axes = {"layers", "train_size", "fixed_alpha"};
  if (std::find(axes.begin(), axes.end(), cfg.sweep_axis) == axes.end()) {
    throw ConfigError("sweep axis must be one of layers, train_size, fixed_alpha (got '" + cfg.sweep_axis + "')");
  }
  if (cfg.sweep_values.empty()) throw ConfigError("sweep axis '" + cfg.sweep_axis + "' has an empty value list");

  const Dataset base = read_container(cfg.dataset);
  std::vector<RunConfig> cell_cfgs;
  for (const auto& v : cfg.sweep_values) {
    RunConfig c = cfg;
    apply_setting(c, cfg.sweep_axis, v);
    validate_config(c);
    cell_cfgs.push_back(std::move(c));
  }
  ensure_dir(out);
  std::vector<Dataset> datasets;
  datasets.reserve(cell_cfgs.size());
  for (const auto& c : cell_cfgs) datasets.push_back(apply_split(base, c));

  std::vector<Task> tasks;
  for (std::size_t k = 0; k < cell_cfgs.size(); ++k) {
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
      Task t{cfg.sweep_values[k], r, cell_cfgs[k], &datasets[k]};
      t.cfg.train.seed = cell_seed(cfg.train.seed, cfg.sweep_axis, cfg.sweep_values[k], r);
      tasks.push_back(std::move(t));
    }
  }
  SweepReport rep = assemble(cfg.sweep_axis, cfg.sweep_values, run_pool(tasks, cfg.jobs));
  write_text(out / "sweep.csv", report_csv(rep, cfg.sweep_axis));
  write_text(out / "sweep.json", report_json(rep));
  write_text(out / "config.txt", canonical_config(cfg));
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out, "sweep", cfg, {"sweep.csv", "sweep.json", "config.txt"}, wall);
  return rep;
}

SweepReport cmd_ablate(const RunConfig& cfg, const fs::path& out) {
  const auto start = std::chrono::steady_clock::now();
  validate_config(cfg);
  const Dataset ds = load_run_dataset(cfg);
  ensure_dir(out);

  const std::vector<std::string> modes = {"base_fixed_alpha", "+dyn", "+dyn_evo", "+dyn_evo_aug"};
  std::vector<RunConfig> mode_cfgs(4, cfg);
  mode_cfgs[0].model.variant = Variant::fixed_initial_residual;
  for (std::size_t m = 1; m < 4; ++m) {
    mode_cfgs[m].model.variant = Variant::drgcn;
    mode_cfgs[m].model.alpha_mode = m == 1 ? AlphaMode::dynamic_only : AlphaMode::evolving;
    mode_cfgs[m].train.augmentations = 1;
    mode_cfgs[m].train.drop_rate = 0.0;
  }
  mode_cfgs[0].train.augmentations = 1;
  mode_cfgs[0].train.drop_rate = 0.0;
  mode_cfgs[3].train.augmentations = cfg.ablate_augmentations;
  mode_cfgs[3].train.drop_rate = cfg.ablate_drop_rate;

  std::vector<Task> tasks;
  for (std::size_t m = 0; m < modes.size(); ++m) {
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
      Task t{modes[m], r, mode_cfgs[m], &ds};
      t.cfg.train.seed = cell_seed(cfg.train.seed, "ablate", "", r);
      tasks.push_back(std::move(t));
    }
  }
  SweepReport rep = assemble("mode", modes, run_pool(tasks, cfg.jobs));
  write_text(out / "ablation.csv", report_csv(rep, "mode"));
  write_text(out / "ablation.json", report_json(rep));
  write_text(out / "config.txt", canonical_config(cfg));
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out, "ablate", cfg, {"ablation.csv", "ablation.json", "config.txt"}, wall);
  return rep;
}

void cmd_export_alpha(const RunConfig& cfg, const std::vector<fs::path>& runs, const fs::path& out) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<AlphaTrace> traces;
  if (!runs.empty()) {
    for (const auto& dir : runs) traces.push_back(alpha_trace_from_json(read_text(dir / "alpha_trace.json")));
  } else {
    validate_config(cfg);
    if (cfg.model.variant != Variant::drgcn) throw ConfigError("export-alpha needs variant = drgcn");
    const Dataset ds = load_run_dataset(cfg);
    std::vector<TrainResult> results(cfg.repeats);
    std::vector<std::string> errors(cfg.repeats);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t r = next++; r < cfg.repeats; r = next++) {
        RunConfig c = cfg;
        c.train.seed = cell_seed(cfg.train.seed, "export-alpha", "", r);
        try {
          results[r] = run_experiment(c, ds);
        } catch (const std::exception& e) {
          errors[r] = e.what();
        }
      }
    };
    std::vector<std::thread> threads;
    for (std::size_t k = 1; k < std::min(cfg.jobs, cfg.repeats); ++k) threads.emplace_back(worker);
    worker();
    for (auto& th : threads) th.join();
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
      if (!errors[r].empty()) throw std::runtime_error("export-alpha repeat " + std::to_string(r) + ": " + errors[r]);
      traces.push_back(std::move(results[r].history.alpha));
    }
  }
  for (const auto& t : traces) {
    if (t.final_alpha.empty() || t.snapshots.empty()) throw DataError("alpha_trace.json", "missing alpha trace");
    if (t.final_alpha.rows() != traces.front().final_alpha.rows()) {
      throw DataError("alpha_trace.json", "traces disagree on the layer count");
    }
  }
  ensure_dir(out);
  const std::size_t L = traces.front().final_alpha.rows();
  const double R = static_cast<double>(traces.size());

  std::string mean_csv = "layer,mean_alpha,ci_low,ci_high,n_repeats\n";
  std::string quart_csv = "layer,min,q1,median,q3,max\n";
  for (std::size_t l = 0; l < L; ++l) {
    std::vector<double> per_repeat;
    std::vector<double> pooled;
    for (const auto& t : traces) {
      const auto row = t.final_alpha.row(l);
      per_repeat.push_back(summarize_alpha(row).mean);
      pooled.insert(pooled.end(), row.begin(), row.end());
    }
    const double m = mean_of(per_repeat);
    const double half = 1.96 * sample_std(per_repeat) / std::sqrt(R);
    mean_csv += std::to_string(l + 1) + "," + format_double(m) + "," + format_double(m - half) + "," +
                format_double(m + half) + "," + std::to_string(traces.size()) + "\n";
    const AlphaLayerStats q = summarize_alpha(pooled);
    quart_csv += std::to_string(l + 1) + "," + format_double(q.min) + "," + format_double(q.q1) + "," +
                 format_double(q.median) + "," + format_double(q.q3) + "," + format_double(q.max) + "\n";
  }

  // Epochs recorded by every trace (early stopping can end runs at different
  // epochs) averaged across repeats.
  std::map<std::size_t, std::vector<const AlphaSnapshot*>> by_epoch;
  for (const auto& t : traces) {
    for (const auto& s : t.snapshots) by_epoch[s.epoch].push_back(&s);
  }
  std::string epochs_csv = "epoch,layer,mean_alpha,n_repeats\n";
  for (const auto& [epoch, snaps] : by_epoch) {
    for (std::size_t l = 0; l < L; ++l) {
      std::vector<double> vals;
      for (const auto* s : snaps) vals.push_back(s->layers.at(l).mean);
      epochs_csv += std::to_string(epoch) + "," + std::to_string(l + 1) + "," + format_double(mean_of(vals)) + "," +
                    std::to_string(vals.size()) + "\n";
    }
  }
  write_text(out / "alpha_mean.csv", mean_csv);
  write_text(out / "alpha_quartiles.csv", quart_csv);
  write_text(out / "alpha_epochs.csv", epochs_csv);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out, "export-alpha", cfg, {"alpha_mean.csv", "alpha_quartiles.csv", "alpha_epochs.csv"}, wall);
}

void cmd_gen_synthetic(const SyntheticSpec& spec, const fs::path& out) {
  if (out.empty()) throw ConfigError("gen-synthetic needs --out");
  write_container(gen_synthetic(spec), out);
}

}  // namespace drgcn

#include <doctest.h>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "drgcn/experiments.hpp"

using namespace drgcn;
namespace fs = std::filesystem;

namespace {

fs::path tmp_root() { return fs::path(DRGCN_TEST_TMP) / "experiments"; }

fs::path fresh_dir(const std::string& name) {
  const fs::path p = tmp_root() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

const fs::path& dataset_dir() {
  static const fs::path dir = [] {
    const fs::path d = fresh_dir("dataset");
    SyntheticSpec s;
    s.num_nodes = 80;
    s.num_features = 10;
    s.num_classes = 3;
    s.edge_prob = 0.06;
    s.seed = 17;
    cmd_gen_synthetic(s, d);
    return d;
  }();
  return dir;
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "drgcn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path write_config(const std::string& name, const std::string& body) {
  const fs::path dir = tmp_root() / "configs";
  fs::create_directories(dir);
  const fs::path p = dir / (name + ".cfg");
  spit(p, "[data]\ndataset = " + dataset_dir().generic_string() + "\n" + body);
  return p;
}

const std::string kSmallModel =
    "[model]\nlayers = 3\nhidden = 8\n[train]\nmax_epochs = 12\npatience = 50\nseed = 5\ntrace_stride = 4\n";

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("config parsing errors are reported with the key") {
  CHECK_THROWS_WITH_AS(parse_config("dataset = x\n"), doctest::Contains("'layers'"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("dataset = x\nlayers = 2\nlayer = 3\n"), doctest::Contains("'layer'"), ConfigError);
  CHECK_THROWS_AS(parse_config("dataset = x\nlayers = 2\nlayers = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[model]\ndataset = x\nlayers = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("dataset = x\nlayers = two\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("dataset = x\nlayers = 2\ncombine = product\n"), ConfigError);
  const RunConfig ok = parse_config("# comment\ndataset = d  # trailing\n[model]\nlayers = 4\ncombine = concat\n", "/base");
  CHECK(ok.model.layers == 4);
  CHECK(ok.model.combine == Combine::concat);
  CHECK(ok.dataset == fs::path("/base/d"));
}

TEST_CASE("canonical config is stable and excludes run-local keys") {
  RunConfig a = parse_config("dataset = d\nlayers = 2\njobs = 3\nout = o1\n");
  RunConfig b = parse_config("layers = 2\ndataset = d\nout = o2\n");
  CHECK(canonical_config(a) == canonical_config(b));
  b.model.hidden = 32;
  CHECK(canonical_config(a) != canonical_config(b));
}

TEST_CASE("cli exit codes") {
  const fs::path missing = write_config("missing_layers", "[train]\nseed = 1\n");
  CliResult r = cli({"train", "--config", missing.string(), "--out", (tmp_root() / "x").string()});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("layers") != std::string::npos);

  const fs::path unknown = write_config("unknown_key", "[model]\nlayers = 2\nhiden = 3\n");
  r = cli({"train", "--config", unknown.string(), "--out", (tmp_root() / "x").string()});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("hiden") != std::string::npos);

  CHECK(cli({"train"}).code == kExitConfig);
  CHECK(cli({"frobnicate"}).code == kExitConfig);

  const fs::path no_data = tmp_root() / "configs" / "no_data.cfg";
  spit(no_data, "dataset = /nonexistent/container\nlayers = 2\n");
  r = cli({"train", "--config", no_data.string(), "--out", (tmp_root() / "x").string()});
  CHECK(r.code == kExitData);

  const fs::path bad_split = write_config("bad_split", "train_size = 5000\n[model]\nlayers = 2\n");
  CHECK(cli({"train", "--config", bad_split.string(), "--out", (tmp_root() / "x").string()}).code == kExitData);

  const fs::path diverge = write_config("diverge", "[model]\nlayers = 2\nhidden = 4\n[train]\nlr = 1e300\nmax_epochs = 5\n");
  CHECK(cli({"train", "--config", diverge.string(), "--out", (tmp_root() / "x").string()}).code == kExitDiverged);
}

TEST_CASE("train writes its artifacts and reruns are byte-identical") {
  const fs::path cfg = write_config("train", kSmallModel);
  const fs::path a = fresh_dir("train_a");
  const fs::path b = fresh_dir("train_b");
  REQUIRE(cli({"train", "--config", cfg.string(), "--out", a.string()}).code == kExitOk);
  REQUIRE(cli({"train", "--config", cfg.string(), "--out", b.string()}).code == kExitOk);
  for (const char* f : {"history.csv", "metrics.json", "params.bin", "alpha_trace.json", "config.txt", "manifest.json"}) {
    CAPTURE(f);
    CHECK(fs::exists(a / f));
  }
  CHECK(slurp(a / "metrics.json") == slurp(b / "metrics.json"));
  CHECK(slurp(a / "history.csv") == slurp(b / "history.csv"));

  const auto hist = lines(slurp(a / "history.csv"));
  CHECK(hist.front() == "epoch,train_loss,train_acc,valid_acc");
  CHECK(hist.size() == 13);

  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  CHECK(manifest["command"] == "train");
  CHECK(manifest["config_hash"].get<std::string>().rfind("crc32:", 0) == 0);
  CHECK(manifest["artifacts"].size() >= 5);

  // A different seed changes the result files.
  const fs::path c = fresh_dir("train_c");
  REQUIRE(cli({"train", "--config", cfg.string(), "--out", c.string(), "--seed", "6"}).code == kExitOk);
  CHECK(slurp(a / "params.bin") != slurp(c / "params.bin"));
}

TEST_CASE("eval is deterministic and reports smoothness per layer") {
  const fs::path cfg = write_config("eval", kSmallModel);
  const fs::path run = fresh_dir("eval_run");
  REQUIRE(cli({"train", "--config", cfg.string(), "--out", run.string()}).code == kExitOk);
  const fs::path e1 = fresh_dir("eval_1");
  const fs::path e2 = fresh_dir("eval_2");
  const std::string params = (run / "params.bin").string();
  REQUIRE(cli({"eval", "--params", params, "--dataset", dataset_dir().string(), "--out", e1.string()}).code == kExitOk);
  REQUIRE(cli({"eval", "--params", params, "--dataset", dataset_dir().string(), "--out", e2.string()}).code == kExitOk);
  CHECK(slurp(e1 / "eval.json") == slurp(e2 / "eval.json"));
  const auto j = nlohmann::json::parse(slurp(e1 / "eval.json"));
  CHECK(j["smoothness"].size() == 3);

  const fs::path other = fresh_dir("eval_other_data");
  SyntheticSpec s;
  s.num_nodes = 30;
  s.num_features = 4;
  cmd_gen_synthetic(s, other);
  CHECK(cli({"eval", "--params", params, "--dataset", other.string()}).code == kExitConfig);
}

TEST_CASE("cell seeds depend only on their coordinates") {
  CHECK(cell_seed(1, "layers", "4", 0) == cell_seed(1, "layers", "4", 0));
  std::set<std::uint64_t> seen;
  for (const char* v : {"2", "4", "8"}) {
    for (std::size_t r = 0; r < 3; ++r) seen.insert(cell_seed(1, "layers", v, r));
  }
  CHECK(seen.size() == 9);
  CHECK(cell_seed(1, "layers", "4", 0) != cell_seed(2, "layers", "4", 0));
  CHECK(cell_seed(1, "layers", "4", 0) != cell_seed(1, "train_size", "4", 0));
}

TEST_CASE("sweep writes per-cell statistics") {
  const fs::path cfg = write_config("sweep", kSmallModel + "[sweep]\naxis = layers\nvalues = 1, 2\nrepeats = 2\n");
  const fs::path out = fresh_dir("sweep");
  REQUIRE(cli({"sweep", "--config", cfg.string(), "--out", out.string(), "--jobs", "2"}).code == kExitOk);
  const auto csv = lines(slurp(out / "sweep.csv"));
  REQUIRE(csv.size() == 3);
  CHECK(csv[0] == "layers,mean_test_acc,std_test_acc,n_runs,n_failed");
  CHECK(csv[1].rfind("1,", 0) == 0);
  CHECK(csv[1].substr(csv[1].size() - 4) == ",2,0");
  const auto j = nlohmann::json::parse(slurp(out / "sweep.json"));
  CHECK(j["runs"].size() == 4);

  // Thread count does not change results.
  const fs::path serial = fresh_dir("sweep_serial");
  REQUIRE(cli({"sweep", "--config", cfg.string(), "--out", serial.string(), "--jobs", "1"}).code == kExitOk);
  CHECK(slurp(serial / "sweep.csv") == slurp(out / "sweep.csv"));

  const fs::path empty = write_config("sweep_empty", kSmallModel + "[sweep]\naxis = layers\n");
  CHECK(cli({"sweep", "--config", empty.string(), "--out", fresh_dir("sweep_empty").string()}).code == kExitConfig);
  CHECK(cli({"sweep", "--config", cfg.string(), "--out", out.string(), "--axis", "hidden"}).code == kExitConfig);
}

TEST_CASE("failed runs are excluded from cell statistics") {
  std::vector<RunRecord> runs(3);
  runs[0] = {"2", 0, 1, true, "", 0.5, 0.5, 3};
  runs[1] = {"2", 1, 2, false, "diverged", 0.0, 0.0, 0};
  runs[2] = {"2", 2, 3, true, "", 0.7, 0.7, 4};
  const CellSummary s = summarize_cell("2", runs);
  CHECK(s.runs == 2);
  CHECK(s.failed == 1);
  CHECK(s.mean == doctest::Approx(0.6));
  CHECK(s.std == doctest::Approx(0.1414213562).epsilon(1e-8));
}

TEST_CASE("ablation runs all four modes from one config") {
  const fs::path cfg = write_config("ablate", kSmallModel + "[sweep]\nrepeats = 1\n");
  const fs::path out = fresh_dir("ablate");
  REQUIRE(cli({"ablate", "--config", cfg.string(), "--out", out.string()}).code == kExitOk);
  const auto csv = lines(slurp(out / "ablation.csv"));
  REQUIRE(csv.size() == 5);
  CHECK(csv[1].rfind("base_fixed_alpha,", 0) == 0);
  CHECK(csv[2].rfind("+dyn,", 0) == 0);
  CHECK(csv[3].rfind("+dyn_evo,", 0) == 0);
  CHECK(csv[4].rfind("+dyn_evo_aug,", 0) == 0);
}

TEST_CASE("export-alpha emits ordered quartiles and an epoch-zero curve near one half") {
  const fs::path cfg = write_config("export", kSmallModel);
  const fs::path r1 = fresh_dir("export_r1");
  const fs::path r2 = fresh_dir("export_r2");
  REQUIRE(cli({"train", "--config", cfg.string(), "--out", r1.string()}).code == kExitOk);
  REQUIRE(cli({"train", "--config", cfg.string(), "--out", r2.string(), "--seed", "9"}).code == kExitOk);
  const fs::path out = fresh_dir("export");
  REQUIRE(cli({"export-alpha", "--params", r1.string(), "--params", r2.string(), "--out", out.string()}).code == kExitOk);

  const auto mean = lines(slurp(out / "alpha_mean.csv"));
  REQUIRE(mean.size() == 4);
  CHECK(mean[0] == "layer,mean_alpha,ci_low,ci_high,n_repeats");
  CHECK(mean[1].substr(mean[1].size() - 2) == ",2");

  const auto quart = lines(slurp(out / "alpha_quartiles.csv"));
  REQUIRE(quart.size() == 4);
  for (std::size_t i = 1; i < quart.size(); ++i) {
    std::istringstream row(quart[i]);
    std::vector<double> v;
    for (std::string cell; std::getline(row, cell, ',');) v.push_back(std::stod(cell));
    REQUIRE(v.size() == 6);
    CHECK(v[1] <= v[2]);
    CHECK(v[2] <= v[3]);
    CHECK(v[3] <= v[4]);
    CHECK(v[4] <= v[5]);
    CHECK(v[1] > 0.0);
    CHECK(v[5] < 1.0);
  }

  // At initialization alpha = sigmoid(tanh(.)) with small weights, so it sits
  // inside sigmoid([-1, 1]) and close to one half.
  const auto epochs = lines(slurp(out / "alpha_epochs.csv"));
  CHECK(epochs[0] == "epoch,layer,mean_alpha,n_repeats");
  std::size_t zero_rows = 0;
  for (std::size_t i = 1; i < epochs.size(); ++i) {
    if (epochs[i].rfind("0,", 0) != 0) continue;
    ++zero_rows;
    std::istringstream row(epochs[i]);
    std::vector<std::string> cells;
    for (std::string cell; std::getline(row, cell, ',');) cells.push_back(cell);
    const double m = std::stod(cells[2]);
    CHECK(m > 0.2689);
    CHECK(m < 0.7311);
    CHECK(std::abs(m - 0.5) < 0.1);
  }
  CHECK(zero_rows == 3);

  CHECK(cli({"export-alpha", "--params", fresh_dir("export_empty").string(), "--out", out.string()}).code != kExitOk);
}

TEST_CASE("alpha trace json round trip") {
  AlphaTrace t;
  t.snapshots.push_back({0, {{0.5, 0.4, 0.45, 0.5, 0.55, 0.6}}});
  t.snapshots.push_back({10, {{0.3, 0.1, 0.2, 0.3, 0.4, 0.5}}});
  t.final_alpha = Tensor::from_rows({{0.1, 0.2, 0.30000000000000004}});
  const AlphaTrace back = alpha_trace_from_json(alpha_trace_to_json(t));
  CHECK(back.final_alpha == t.final_alpha);
  REQUIRE(back.snapshots.size() == 2);
  CHECK(back.snapshots[1].epoch == 10);
  CHECK(back.snapshots[1].layers[0].q3 == 0.4);
}

TEST_CASE("gen-synthetic via the cli writes a readable container") {
  const fs::path out = fresh_dir("gen");
  REQUIRE(cli({"gen-synthetic", "--out", out.string(), "--nodes", "50", "--features", "7", "--classes", "4", "--seed",
               "3"}).code == kExitOk);
  const Dataset ds = read_container(out);
  CHECK(ds.meta.num_nodes == 50);
  CHECK(ds.meta.num_features == 7);
  CHECK(ds.meta.num_classes == 4);
}

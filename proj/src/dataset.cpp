#include "drgcn/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "drgcn/rng.hpp"

namespace drgcn {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::array<char, 4> kFeatureMagic{'G', 'C', 'F', '1'};
constexpr std::array<char, 4> kEdgeMagic{'G', 'C', 'E', '1'};
constexpr std::array<char, 4> kLabelMagic{'G', 'C', 'L', '1'};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.filename().string(), "missing or unreadable");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(path.filename().string(), "cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(path.filename().string(), "write failed");
}

std::string crc32_hex(const std::string& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  std::ostringstream ss;
  ss << std::hex << std::setw(8) << std::setfill('0') << static_cast<std::uint32_t>(crc);
  return ss.str();
}

using Writer = detail::ByteWriter;
using Reader = detail::ByteReader<DataError>;

std::vector<std::uint32_t> read_index_list(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array()) throw DataError("splits.json", std::string("missing array \"") + key + "\"");
  std::vector<std::uint32_t> out;
  out.reserve(j[key].size());
  for (const auto& v : j[key]) {
    if (!v.is_number_unsigned()) throw DataError("splits.json", std::string("non-index entry in \"") + key + "\"");
    const auto idx = v.get<std::uint64_t>();
    if (idx > 0xFFFFFFFFull) throw DataError("splits.json", "index overflow");
    out.push_back(static_cast<std::uint32_t>(idx));
  }
  return out;
}

std::size_t meta_count(const json& meta, const char* key) {
  if (!meta.contains(key) || !meta[key].is_number_unsigned()) {
    throw DataError("meta.json", std::string("missing count \"") + key + "\"");
  }
  return meta[key].get<std::size_t>();
}

}  // namespace

void Dataset::validate() const {
  const std::size_t n = meta.num_nodes;
  if (x.rows() != n) throw DataError("features.bin", "row count " + std::to_string(x.rows()) + " != n " + std::to_string(n));
  if (x.cols() != meta.num_features) throw DataError("features.bin", "column count does not match d");
  if (y.size() != n) throw DataError("labels.bin", "label count does not match n");
  if (raw_edges.size() != meta.num_raw_edges) throw DataError("edges.bin", "edge count does not match e");
  if (graph.num_nodes() != n) throw DataError("edges.bin", "graph size does not match n");
  for (std::uint32_t label : y) {
    if (label != kUnlabeled && label >= meta.num_classes) {
      throw DataError("labels.bin", "class id " + std::to_string(label) + " >= c");
    }
  }
  std::vector<char> owner(n, 0);
  auto check_mask = [&](const std::vector<std::uint32_t>& mask, char tag, const char* name) {
    for (std::uint32_t i : mask) {
      if (i >= n) throw DataError("splits.json", std::string(name) + " index " + std::to_string(i) + " >= n");
      if (owner[i] != 0) {
        throw DataError("splits.json", std::string("mask overlap at node ") + std::to_string(i) + " (" + name + ")");
      }
      owner[i] = tag;
      if (y[i] == kUnlabeled) throw DataError("splits.json", std::string(name) + " node " + std::to_string(i) + " is unlabeled");
    }
  };
  check_mask(splits.train, 1, "train");
  check_mask(splits.valid, 2, "valid");
  check_mask(splits.test, 3, "test");
}

Dataset read_container(const fs::path& dir) {
  for (const char* f : {"meta.json", "features.bin", "edges.bin", "labels.bin", "splits.json"}) {
    if (!fs::exists(dir / f)) throw DataError(f, "missing from container " + dir.string());
  }

  json meta;
  try {
    meta = json::parse(read_file(dir / "meta.json"));
  } catch (const json::exception& e) {
    throw DataError("meta.json", e.what());
  }
  if (meta.value("format_version", -1) != kContainerFormatVersion) throw DataError("meta.json", "unsupported format_version");

  Dataset ds;
  ds.meta.name = meta.value("name", std::string{});
  ds.meta.num_nodes = meta_count(meta, "n");
  ds.meta.num_raw_edges = meta_count(meta, "e");
  ds.meta.num_features = meta_count(meta, "d");
  ds.meta.num_classes = meta_count(meta, "c");

  std::map<std::string, std::string> files;
  for (const char* f : {"features.bin", "edges.bin", "labels.bin", "splits.json"}) files[f] = read_file(dir / f);
  if (meta.contains("checksums")) {
    for (const auto& [name, bytes] : files) {
      if (!meta["checksums"].contains(name)) continue;
      if (meta["checksums"][name].get<std::string>() != crc32_hex(bytes)) throw DataError(name, "checksum mismatch");
    }
  }

  {
    Reader r(files["features.bin"], "features.bin");
    r.magic(kFeatureMagic);
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (rows != ds.meta.num_nodes || cols != ds.meta.num_features) {
      throw DataError("features.bin", "shape does not match meta.json");
    }
    if (cols != 0 && rows > std::numeric_limits<std::uint64_t>::max() / cols) throw DataError("features.bin", "size overflow");
    r.expect_records(rows * cols, 4);
    ds.x = Tensor(rows, cols);
    for (double& v : ds.x.values()) v = static_cast<double>(r.f32());
    r.finish();
  }
  {
    Reader r(files["edges.bin"], "edges.bin");
    r.magic(kEdgeMagic);
    const std::uint64_t count = r.u64();
    if (count != ds.meta.num_raw_edges) throw DataError("edges.bin", "edge count does not match meta.json");
    r.expect_records(count, 8);
    ds.raw_edges.resize(count);
    for (auto& e : ds.raw_edges) {
      e.u = r.u32();
      e.v = r.u32();
      if (e.u >= ds.meta.num_nodes || e.v >= ds.meta.num_nodes) throw DataError("edges.bin", "node index overflow");
    }
    r.finish();
  }
  {
    Reader r(files["labels.bin"], "labels.bin");
    r.magic(kLabelMagic);
    const std::uint64_t n = r.u64();
    if (n != ds.meta.num_nodes) throw DataError("labels.bin", "label count does not match meta.json");
    r.expect_records(n, 4);
    ds.y.resize(n);
    for (auto& label : ds.y) label = r.u32();
    r.finish();
  }
  try {
    const json sj = json::parse(files["splits.json"]);
    ds.splits.train = read_index_list(sj, "train");
    ds.splits.valid = read_index_list(sj, "valid");
    ds.splits.test = read_index_list(sj, "test");
  } catch (const json::exception& e) {
    throw DataError("splits.json", e.what());
  }

  try {
    ds.graph = Graph::from_edges(ds.meta.num_nodes, ds.raw_edges);
  } catch (const GraphError& e) {
    throw DataError("edges.bin", e.what());
  }
  ds.validate();
  return ds;
}

void write_container(const Dataset& ds, const fs::path& dir) {
  ds.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("", "cannot create " + dir.string() + ": " + ec.message());

  std::map<std::string, std::string> files;
  {
    Writer w;
    w.magic(kFeatureMagic);
    w.u64(ds.x.rows());
    w.u64(ds.x.cols());
    for (double v : ds.x.values()) w.f32(static_cast<float>(v));
    files["features.bin"] = w.take();
  }
  {
    Writer w;
    w.magic(kEdgeMagic);
    w.u64(ds.raw_edges.size());
    for (const auto& e : ds.raw_edges) {
      w.u32(e.u);
      w.u32(e.v);
    }
    files["edges.bin"] = w.take();
  }
  {
    Writer w;
    w.magic(kLabelMagic);
    w.u64(ds.y.size());
    for (auto label : ds.y) w.u32(label);
    files["labels.bin"] = w.take();
  }
  files["splits.json"] = json{{"train", ds.splits.train}, {"valid", ds.splits.valid}, {"test", ds.splits.test}}.dump() + "\n";

  json meta = {{"name", ds.meta.name},
               {"n", ds.meta.num_nodes},
               {"e", ds.meta.num_raw_edges},
               {"d", ds.meta.num_features},
               {"c", ds.meta.num_classes},
               {"format_version", kContainerFormatVersion}};
  for (const auto& [name, bytes] : files) meta["checksums"][name] = crc32_hex(bytes);
  files["meta.json"] = meta.dump(2) + "\n";

  for (const auto& [name, bytes] : files) write_file(dir / name, bytes);
}

Dataset make_split(const Dataset& ds, const SplitSpec& spec) {
  const std::size_t n = ds.meta.num_nodes;
  if (spec.train_size == 0 || spec.valid_size == 0 || spec.test_size == 0) {
    throw DataError("", "split sizes must be positive");
  }
  if (spec.train_size + spec.valid_size + spec.test_size > n) {
    throw DataError("", "split sizes exceed node count " + std::to_string(n));
  }
  if (spec.valid_size > ds.splits.valid.size() || spec.test_size > ds.splits.test.size()) {
    throw DataError("", "requested valid/test sizes exceed the shipped split (" + std::to_string(ds.splits.valid.size()) +
                            "/" + std::to_string(ds.splits.test.size()) + ")");
  }

  Dataset out = ds;
  out.splits.valid.assign(ds.splits.valid.begin(), ds.splits.valid.begin() + static_cast<std::ptrdiff_t>(spec.valid_size));
  out.splits.test.assign(ds.splits.test.begin(), ds.splits.test.begin() + static_cast<std::ptrdiff_t>(spec.test_size));

  std::vector<char> held_out(n, 0);
  for (auto i : out.splits.valid) held_out[i] = 1;
  for (auto i : out.splits.test) held_out[i] = 1;

  if (spec.mode == SplitMode::fixed_public) {
    std::vector<std::uint32_t> pool;
    std::vector<char> taken(n, 0);
    for (auto i : ds.splits.train) {
      if (!held_out[i] && !taken[i]) {
        pool.push_back(i);
        taken[i] = 1;
      }
    }
    for (std::uint32_t i = 0; i < n; ++i) {
      if (!held_out[i] && !taken[i] && ds.y[i] != kUnlabeled) pool.push_back(i);
    }
    if (pool.size() < spec.train_size) {
      throw DataError("", "training pool has only " + std::to_string(pool.size()) + " labeled nodes");
    }
    out.splits.train.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(spec.train_size));
    return out;
  }

  // Class-stratified draw: largest-remainder quotas proportional to the class
  // frequencies in the pool, then a seeded shuffle within each class.
  std::map<std::uint32_t, std::vector<std::uint32_t>> by_class;
  std::size_t pool_size = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!held_out[i] && ds.y[i] != kUnlabeled) {
      by_class[ds.y[i]].push_back(i);
      ++pool_size;
    }
  }
  if (pool_size < spec.train_size) {
    throw DataError("", "training pool has only " + std::to_string(pool_size) + " labeled nodes");
  }
  std::vector<std::pair<std::uint32_t, std::size_t>> quota;
  std::vector<std::pair<double, std::uint32_t>> remainder;
  std::size_t assigned = 0;
  for (const auto& [cls, members] : by_class) {
    const double exact = static_cast<double>(spec.train_size) * static_cast<double>(members.size()) /
                         static_cast<double>(pool_size);
    const auto base = static_cast<std::size_t>(std::floor(exact));
    quota.emplace_back(cls, base);
    remainder.emplace_back(exact - static_cast<double>(base), cls);
    assigned += base;
  }
  std::stable_sort(remainder.begin(), remainder.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < spec.train_size; ++k) {
    const auto cls = remainder[k % remainder.size()].second;
    for (auto& [c, q] : quota) {
      if (c == cls && q < by_class[c].size()) {
        ++q;
        ++assigned;
        break;
      }
    }
  }

  Rng root(spec.seed);
  out.splits.train.clear();
  for (auto& [cls, q] : quota) {
    auto members = by_class[cls];
    Rng rng = root.split(static_cast<std::uint64_t>(cls));
    rng.shuffle(std::span<std::uint32_t>(members));
    out.splits.train.insert(out.splits.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(q));
  }
  std::sort(out.splits.train.begin(), out.splits.train.end());
  return out;
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
  if (spec.num_nodes < 2) throw DataError("", "synthetic graph needs at least 2 nodes");
  if (spec.num_features == 0 || spec.num_classes == 0) throw DataError("", "synthetic graph needs d >= 1 and c >= 1");
  if (!(spec.edge_prob >= 0.0 && spec.edge_prob <= 1.0)) throw DataError("", "edge_prob must be in [0, 1]");
  if (!(spec.homophily >= 0.0 && spec.homophily <= 1.0)) throw DataError("", "homophily must be in [0, 1]");
  if (spec.num_nodes > 0xFFFFFFFEull) throw DataError("", "too many nodes");

  const std::size_t n = spec.num_nodes;
  const std::size_t c = spec.num_classes;
  Rng root(spec.seed);

  Dataset ds;
  ds.meta = {spec.name, n, 0, spec.num_features, c};

  // Balanced labels in shuffled order.
  ds.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.y[i] = static_cast<std::uint32_t>(i % c);
  {
    Rng rng = root.split("labels");
    rng.shuffle(std::span<std::uint32_t>(ds.y));
  }

  // Intra/inter-class probabilities chosen so the overall density is edge_prob
  // and the intra-class edge fraction is homophily (balanced classes).
  const double cd = static_cast<double>(c);
  const double p_same = c == 1 ? spec.edge_prob : std::min(1.0, spec.edge_prob * spec.homophily * cd);
  const double p_diff = c == 1 ? spec.edge_prob : std::min(1.0, spec.edge_prob * (1.0 - spec.homophily) * cd / (cd - 1.0));
  {
    Rng rng = root.split("edges");
    for (std::uint32_t i = 0; i < n; ++i) {
      for (std::uint32_t j = i + 1; j < n; ++j) {
        const double p = ds.y[i] == ds.y[j] ? p_same : p_diff;
        if (p > 0.0 && rng.uniform() < p) ds.raw_edges.push_back({i, j});
      }
    }
  }
  ds.meta.num_raw_edges = ds.raw_edges.size();
  ds.graph = Graph::from_edges(n, ds.raw_edges);

  // Features are rounded through float so the dataset round-trips exactly.
  Tensor prototypes(c, spec.num_features);
  {
    Rng rng = root.split("prototypes");
    for (double& v : prototypes.values()) v = rng.uniform(-1.0, 1.0);
  }
  ds.x = Tensor(n, spec.num_features);
  {
    Rng rng = root.split("features");
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < spec.num_features; ++j) {
        const double v = prototypes(ds.y[i], j) + rng.uniform(-spec.feature_noise, spec.feature_noise);
        ds.x(i, j) = static_cast<double>(static_cast<float>(v));
      }
    }
  }

  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  {
    Rng rng = root.split("split");
    rng.shuffle(std::span<std::uint32_t>(order));
  }
  const std::size_t n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.3 * static_cast<double>(n))));
  const std::size_t n_valid =
      std::min(n - n_train, std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(n)))));
  ds.splits.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.splits.valid.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                         order.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  ds.splits.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), order.end());
  for (auto* mask : {&ds.splits.train, &ds.splits.valid, &ds.splits.test}) std::sort(mask->begin(), mask->end());
  ds.validate();
  return ds;
}

Tensor row_normalized(const Tensor& x) {
  Tensor out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    const double s = std::accumulate(r.begin(), r.end(), 0.0);
    if (s != 0.0) {
      for (double& v : r) v /= s;
    }
  }
  return out;
}

}  // namespace drgcn

#include <doctest.h>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "drgcn/dataset.hpp"

using namespace drgcn;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::path(DRGCN_TEST_TMP) / "dataset" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SyntheticSpec small_spec(std::uint64_t seed = 1) {
  SyntheticSpec s;
  s.num_nodes = 60;
  s.num_features = 8;
  s.num_classes = 3;
  s.edge_prob = 0.1;
  s.seed = seed;
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

// Strips checksums so that structural checks are reached.
void drop_checksums(const fs::path& dir) {
  auto meta = nlohmann::json::parse(slurp(dir / "meta.json"));
  meta.erase("checksums");
  spit(dir / "meta.json", meta.dump());
}

std::string error_file(const fs::path& dir) {
  try {
    read_container(dir);
  } catch (const DataError& e) {
    return e.file();
  }
  return "<no error>";
}

bool disjoint(const Splits& s) {
  std::set<std::uint32_t> seen;
  for (const auto* m : {&s.train, &s.valid, &s.test}) {
    for (auto i : *m) {
      if (!seen.insert(i).second) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("container round trip is bit-exact and keeps mask order") {
  Dataset ds = gen_synthetic(small_spec());
  std::reverse(ds.splits.train.begin(), ds.splits.train.end());
  const fs::path dir = fresh_dir("roundtrip");
  write_container(ds, dir);
  const Dataset back = read_container(dir);
  CHECK(back == ds);
  CHECK(back.splits.train == ds.splits.train);
  CHECK(back.graph.num_edges() == ds.graph.num_edges());
  CHECK(read_container(dir).graph.num_edges() == back.graph.num_edges());
}

TEST_CASE("truncated features are rejected") {
  const fs::path dir = fresh_dir("truncated");
  write_container(gen_synthetic(small_spec()), dir);
  drop_checksums(dir);
  const std::string bytes = slurp(dir / "features.bin");
  spit(dir / "features.bin", bytes.substr(0, bytes.size() - 3));
  CHECK(error_file(dir) == "features.bin");
}

TEST_CASE("checksum mismatch names the file") {
  const fs::path dir = fresh_dir("checksum");
  write_container(gen_synthetic(small_spec()), dir);
  std::string bytes = slurp(dir / "labels.bin");
  bytes[bytes.size() - 8] ^= 1;
  spit(dir / "labels.bin", bytes);
  CHECK(error_file(dir) == "labels.bin");
}

TEST_CASE("magic mismatch is rejected") {
  const fs::path dir = fresh_dir("magic");
  write_container(gen_synthetic(small_spec()), dir);
  drop_checksums(dir);
  std::string bytes = slurp(dir / "edges.bin");
  bytes[3] = 'X';
  spit(dir / "edges.bin", bytes);
  CHECK(error_file(dir) == "edges.bin");
}

TEST_CASE("empty directory names a missing file") {
  const fs::path dir = fresh_dir("empty");
  const std::string f = error_file(dir);
  CHECK((f == "meta.json" || f == "features.bin" || f == "edges.bin" || f == "labels.bin" || f == "splits.json"));
}

TEST_CASE("mask overlap and out-of-range indices are rejected") {
  const fs::path dir = fresh_dir("overlap");
  const Dataset ds = gen_synthetic(small_spec());
  write_container(ds, dir);
  drop_checksums(dir);
  auto splits = nlohmann::json::parse(slurp(dir / "splits.json"));
  splits["valid"].push_back(ds.splits.train.front());
  spit(dir / "splits.json", splits.dump());
  CHECK(error_file(dir) == "splits.json");

  Dataset bad = ds;
  bad.splits.test.push_back(static_cast<std::uint32_t>(ds.meta.num_nodes));
  CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("fixed_public split takes prefixes of the training pool") {
  const Dataset ds = gen_synthetic(small_spec());
  SplitSpec spec{5, 4, 10, SplitMode::fixed_public, 0};
  const Dataset s = make_split(ds, spec);
  CHECK(s.splits.train == std::vector<std::uint32_t>(ds.splits.train.begin(), ds.splits.train.begin() + 5));
  CHECK(s.splits.valid == std::vector<std::uint32_t>(ds.splits.valid.begin(), ds.splits.valid.begin() + 4));
  CHECK(s.splits.test == std::vector<std::uint32_t>(ds.splits.test.begin(), ds.splits.test.begin() + 10));

  // Growing past the shipped list appends unused labeled nodes in id order.
  const std::size_t extra = 3;
  spec.train_size = ds.splits.train.size() + extra;
  const Dataset g = make_split(ds, spec);
  CHECK(disjoint(g.splits));
  CHECK(std::equal(ds.splits.train.begin(), ds.splits.train.end(), g.splits.train.begin()));
  CHECK(std::is_sorted(g.splits.train.end() - extra, g.splits.train.end()));
}

TEST_CASE("seeded_random split is stratified, disjoint and deterministic") {
  const Dataset ds = gen_synthetic(small_spec());
  const SplitSpec spec{12, 10, 20, SplitMode::seeded_random, 77};
  const Dataset a = make_split(ds, spec);
  const Dataset b = make_split(ds, spec);
  CHECK(a.splits == b.splits);
  CHECK(a.splits.train.size() == 12);
  CHECK(disjoint(a.splits));
  // Each class gets floor or ceil of its proportional share of the pool.
  std::set<std::uint32_t> held(a.splits.valid.begin(), a.splits.valid.end());
  held.insert(a.splits.test.begin(), a.splits.test.end());
  std::vector<double> pool(3, 0.0);
  for (std::uint32_t i = 0; i < ds.meta.num_nodes; ++i) {
    if (!held.count(i)) pool[ds.y[i]] += 1.0;
  }
  const double total = pool[0] + pool[1] + pool[2];
  std::vector<int> per_class(3, 0);
  for (auto i : a.splits.train) ++per_class[a.y[i]];
  for (int c = 0; c < 3; ++c) {
    const double share = 12.0 * pool[c] / total;
    CHECK(per_class[c] >= std::floor(share));
    CHECK(per_class[c] <= std::ceil(share));
  }
  const Dataset other = make_split(ds, SplitSpec{12, 10, 20, SplitMode::seeded_random, 78});
  CHECK(other.splits.train != a.splits.train);
}

TEST_CASE("infeasible split sizes are rejected") {
  const Dataset ds = gen_synthetic(small_spec());
  CHECK_THROWS_AS(make_split(ds, SplitSpec{0, 5, 5, SplitMode::fixed_public, 0}), DataError);
  CHECK_THROWS_AS(make_split(ds, SplitSpec{50, 12, 30, SplitMode::fixed_public, 0}), DataError);
  CHECK_THROWS_AS(make_split(ds, SplitSpec{5, 5, 31, SplitMode::fixed_public, 0}), DataError);
}

TEST_CASE("synthetic generator is deterministic and respects edge_prob zero") {
  CHECK(gen_synthetic(small_spec(4)) == gen_synthetic(small_spec(4)));
  CHECK_FALSE(gen_synthetic(small_spec(4)) == gen_synthetic(small_spec(5)));
  SyntheticSpec s = small_spec();
  s.edge_prob = 0.0;
  const Dataset ds = gen_synthetic(s);
  CHECK(ds.graph.num_edges() == 0);
  const SparseAdj p = build_normalized(ds.graph);
  CHECK(p.nnz() == ds.meta.num_nodes);
  for (std::size_t i = 0; i < ds.meta.num_nodes; ++i) CHECK(p.at(i, i) == 1.0);
  s.num_nodes = 1;
  CHECK_THROWS_AS(gen_synthetic(s), DataError);
}

TEST_CASE("row_normalized rows sum to one") {
  const Tensor x = row_normalized(Tensor::from_rows({{1, 3}, {0, 0}, {2, 2}}));
  CHECK(x(0, 0) == 0.25);
  CHECK(x(0, 1) == 0.75);
  CHECK(x(1, 0) == 0.0);
  CHECK(x(2, 1) == 0.5);
}

TEST_CASE("checked-in miniature container loads") {
  const Dataset ds = read_container(fs::path(DRGCN_TEST_DATA) / "mini");
  CHECK(ds.meta.num_nodes == 40);
  CHECK(ds.meta.num_classes == 2);
  CHECK(ds.x.cols() == 6);
  CHECK(disjoint(ds.splits));
}

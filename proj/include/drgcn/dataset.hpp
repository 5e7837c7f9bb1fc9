#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "drgcn/graph.hpp"
#include "drgcn/tensor.hpp"

namespace drgcn {

inline constexpr std::uint32_t kUnlabeled = 0xFFFFFFFFu;
inline constexpr int kContainerFormatVersion = 1;

/// Malformed or unreadable dataset. file() names the offending container
/// member when one is known.
class DataError : public std::runtime_error {
 public:
  DataError(std::string file, const std::string& what)
      : std::runtime_error(file.empty() ? what : file + ": " + what), file_(std::move(file)) {}
  const std::string& file() const { return file_; }

 private:
  std::string file_;
};

struct DatasetMeta {
  std::string name;
  std::size_t num_nodes = 0;
  std::size_t num_raw_edges = 0;  // edge records as stored, before symmetrization
  std::size_t num_features = 0;
  std::size_t num_classes = 0;
  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct Splits {
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> valid;
  std::vector<std::uint32_t> test;
  friend bool operator==(const Splits&, const Splits&) = default;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<Edge> raw_edges;  // as stored on disk
  Graph graph;                  // symmetrized, deduplicated view of raw_edges
  Tensor x;                     // num_nodes x num_features
  std::vector<std::uint32_t> y; // class id or kUnlabeled
  Splits splits;

  /// Throws DataError on any violated invariant.
  void validate() const;

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.meta == b.meta && a.raw_edges == b.raw_edges && a.x == b.x && a.y == b.y && a.splits == b.splits;
  }
};

/// Reads the portable container directory:
///   meta.json    {name, n, e, d, c, format_version, checksums?}
///   features.bin "GCF1" u64 rows, u64 cols, rows*cols f32 (LE, row-major)
///   edges.bin    "GCE1" u64 count, count * (u32 u, u32 v)
///   labels.bin   "GCL1" u64 n, n * u32 (0xFFFFFFFF = unlabeled)
///   splits.json  {"train": [...], "valid": [...], "test": [...]}
/// Per-file CRC-32 checksums in meta.json are verified when present.
Dataset read_container(const std::filesystem::path& dir);

/// Writes the container; features are narrowed to f32, so only datasets whose
/// features are f32-representable round-trip bit-exactly.
void write_container(const Dataset& ds, const std::filesystem::path& dir);

enum class SplitMode { fixed_public, seeded_random };

struct SplitSpec {
  std::size_t train_size = 0;
  std::size_t valid_size = 0;
  std::size_t test_size = 0;
  SplitMode mode = SplitMode::fixed_public;
  std::uint64_t seed = 0;
};

/// Both modes take valid/test as prefixes of the shipped lists.
/// fixed_public: train is the first train_size entries of the training pool,
/// i.e. the shipped train list followed by the remaining labeled nodes outside
/// valid and test in ascending id order.
/// seeded_random: train is a class-stratified draw from the labeled nodes
/// outside valid and test (quotas proportional to class frequency).
Dataset make_split(const Dataset& ds, const SplitSpec& spec);

struct SyntheticSpec {
  std::size_t num_nodes = 100;
  std::size_t num_features = 16;
  std::size_t num_classes = 2;
  double edge_prob = 0.05;
  /// Expected fraction of intra-class edges (for balanced classes).
  double homophily = 0.8;
  std::uint64_t seed = 0;
  /// Half-width of the uniform noise added to the class prototype.
  double feature_noise = 1.0;
  std::string name = "synthetic";
};

/// Stochastic-block-model graph with class-prototype features; ships a
/// 30/20/50 train/valid/test split.
Dataset gen_synthetic(const SyntheticSpec& spec);

/// Row-stochastic copy of the features (rows with zero sum are left as is).
Tensor row_normalized(const Tensor& x);

}  // namespace drgcn

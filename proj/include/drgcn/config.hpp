#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "drgcn/dataset.hpp"
#include "drgcn/model.hpp"
#include "drgcn/training.hpp"

namespace drgcn {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything one experiment needs. Parsed from `key = value` lines; optional
/// [data] / [model] / [train] / [sweep] / [output] headers restrict the keys
/// that may follow them. Unknown keys are errors.
struct RunConfig {
  std::filesystem::path dataset;
  std::optional<std::size_t> train_size;
  std::optional<std::size_t> valid_size;
  std::optional<std::size_t> test_size;
  SplitMode split_mode = SplitMode::fixed_public;

  ModelConfig model;
  TrainConfig train;
  bool mini_batch = false;
  MiniBatchConfig mini;

  std::string sweep_axis;
  std::vector<std::string> sweep_values;
  std::size_t repeats = 5;
  std::size_t jobs = 1;
  /// Augmentation settings of the +dyn_evo_aug ablation row.
  std::size_t ablate_augmentations = 2;
  double ablate_drop_rate = 0.5;

  std::filesystem::path out;
};

/// Relative dataset paths resolve against base_dir. Requires `layers` and
/// `dataset`.
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// Sets one key as if it appeared in the file (without section checks).
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);

/// Effective configuration as `key = value` lines in a fixed order.
std::string canonical_config(const RunConfig& cfg);

/// Checks cross-field constraints; throws ConfigError.
void validate_config(const RunConfig& cfg);

}  // namespace drgcn

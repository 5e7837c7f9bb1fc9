#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "drgcn/autodiff.hpp"
#include "drgcn/graph.hpp"
#include "drgcn/rng.hpp"
#include "drgcn/tensor.hpp"

namespace drgcn {

enum class Combine { hadamard, sub, concat };
enum class CellKind { vanilla_recurrent, gated_recurrent };
enum class Variant { drgcn, vanilla_deep, dense_residual, fixed_initial_residual };

/// How DRGCN obtains the pre-sigmoid residual weight of each layer.
///   evolving      dynamic block feeds the recurrent cell (full model)
///   dynamic_only  alpha_raw = z, cell bypassed
///   constant      alpha_raw = logit(fixed_alpha) for every node and layer
enum class AlphaMode { evolving, dynamic_only, constant };

enum class ParamGroup { convolutional, fully_connected, evolving };

std::string_view to_string(Combine v);
std::string_view to_string(CellKind v);
std::string_view to_string(Variant v);
std::string_view to_string(AlphaMode v);
std::string_view to_string(ParamGroup v);
Combine parse_combine(std::string_view s);
CellKind parse_cell(std::string_view s);
Variant parse_variant(std::string_view s);
AlphaMode parse_alpha_mode(std::string_view s);

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t hidden = 64;
  std::size_t in_features = 0;
  std::size_t classes = 0;
  Combine combine = Combine::hadamard;
  CellKind cell = CellKind::vanilla_recurrent;
  Variant variant = Variant::drgcn;
  AlphaMode alpha_mode = AlphaMode::evolving;
  /// Residual weight of the dense/fixed-initial baselines and of the
  /// constant-injection switch.
  double fixed_alpha = 0.1;
  /// Inverted dropout on the input feature entries, train mode only.
  double input_dropout = 0.0;
  /// One dynamic-block MLP for all layers; false gives one per layer.
  bool shared_dynamic_mlp = true;
  /// Features are divided by their row sum before the first layer.
  bool row_normalize = true;

  /// Throws ModelError.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(std::string_view text);

struct Parameter {
  std::string name;
  ParamGroup group = ParamGroup::fully_connected;
  Tensor value;
};

struct ModelParams {
  ModelConfig config;
  std::vector<Parameter> params;
  /// Initial evolving-cell state, one entry per node; fixed, not trained.
  Tensor h_init;

  const Parameter& at(std::string_view name) const;
  Parameter& at(std::string_view name);
  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;
};

/// Deterministic initialization. Shared components (input transform, head)
/// draw from named substreams, so two variants initialized from the same seed
/// share those weights exactly. num_nodes sizes the per-node h_init buffer.
ModelParams init_params(const ModelConfig& cfg, std::size_t num_nodes, std::uint64_t seed);

/// Binary parameter file: "DRGP", u32 version, u64 length + model config
/// JSON, u64 count, then per tensor: u64 name length, name, u8 group,
/// u64 rows, u64 cols, f64 LE values; finally h_init in the same tensor form.
void save_params(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_params(const std::filesystem::path& path);

/// Parameter handles on one tape, indexed like ModelParams::params.
struct BoundParams {
  const ModelParams* source = nullptr;
  std::vector<Var> vars;
  Var h_init;

  Var operator[](std::string_view name) const;
};

BoundParams bind(Tape& tape, const ModelParams& params, bool requires_grad = true);

/// Node sets S_0 ⊇ S_1 ⊇ ... ⊇ S_L where S_l is the first sizes[l] entries of
/// nodes. ops[l] maps layer-l rows (S_l) to layer-(l+1) rows (S_{l+1}), so it
/// is sizes[l+1] x sizes[l]. Full-batch training uses S_l = all nodes and
/// ops[l] = P̃ for every layer.
struct PropagationPlan {
  std::vector<std::uint32_t> nodes;
  std::vector<std::size_t> sizes;
  std::vector<const CsrMatrix*> ops;
  bool identity_nodes = false;

  static PropagationPlan full(const SparseAdj& p, std::size_t layers);
  std::size_t layers() const { return ops.size(); }
  void validate(std::size_t num_layers) const;
};

struct ForwardOptions {
  bool train = false;
  /// Keep the values of H^(1..L) (before the head) for smoothness diagnostics.
  bool capture_hidden = false;
};

struct ForwardResult {
  Var logits;
  Var log_probs;
  Var probs;
  /// alpha[l] is the post-sigmoid residual weight of layer l for the rows of
  /// S_{l+1}; empty for baselines without a per-node weight.
  std::vector<Tensor> alpha;
  std::vector<Tensor> hidden;
};

/// x holds the feature rows of S_0 (in plan order), already preprocessed.
/// rng is used only when options.train and input_dropout > 0.
ForwardResult forward(const BoundParams& bound, std::shared_ptr<const CsrMatrix> x, const PropagationPlan& plan,
                      const ForwardOptions& options, Rng* rng = nullptr);

/// Feature preprocessing implied by the config (row normalization).
std::shared_ptr<const CsrMatrix> prepare_features(const Tensor& x, const ModelConfig& cfg);

// Building blocks, exposed for testing.

Var initial_transform(const BoundParams& bound, std::shared_ptr<const CsrMatrix> x);

/// z = MLP(Φ(h0n, hln)) for already row-normalized inputs; layer selects the
/// MLP instance when the dynamic MLP is not shared.
Var dynamic_block(const BoundParams& bound, Var h0n, Var hln, std::size_t layer);
Var combine(Combine kind, Var h0n, Var hln);

struct CellOutput {
  Var alpha_raw;
  Var h;
};
CellOutput evolving_step(const BoundParams& bound, Var z, Var h_prev);

/// (1 - σ(alpha_raw)) ⊙ ph + σ(alpha_raw) ⊙ h0, returned together with σ.
struct SguOutput {
  Var alpha;
  Var pre_activation;
  Var out;
};
SguOutput sgu(Var h0, Var ph, Var alpha_raw);

/// Input width of the dynamic-block MLP for a given combine kind.
std::size_t dynamic_input_width(Combine kind, std::size_t hidden);

}  // namespace drgcn

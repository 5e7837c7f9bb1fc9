#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "drgcn/autodiff.hpp"
#include "drgcn/dataset.hpp"
#include "drgcn/graph.hpp"
#include "drgcn/model.hpp"
#include "drgcn/optim.hpp"
#include "drgcn/rng.hpp"

namespace drgcn {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t patience = 500;
  std::size_t max_epochs = 2000;
  double l2_conv = 0.01;
  double l2_fc = 0.0005;
  double l2_evolving = 0.005;
  /// S augmented forwards per step. The consistency term needs S >= 2; with
  /// S = 1 and drop_rate = 0 training is plain supervised DRGCN.
  std::size_t augmentations = 1;
  double drop_rate = 0.0;
  double temperature = 0.5;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  /// Alpha statistics are recorded at epoch 0 and every trace_stride epochs.
  std::size_t trace_stride = 10;

  /// Throws std::invalid_argument.
  void validate() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, const std::string& detail)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ": " + detail), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

// Augmentation and losses.

/// Each row zeroed with probability rate, survivors scaled by 1 / (1 - rate).
Tensor drop_node_augment(const Tensor& x, double rate, Rng& rng);
/// Same row draws as the dense overload, applied to a sparse feature matrix.
std::shared_ptr<const CsrMatrix> drop_node_augment(const CsrMatrix& x, double rate, Rng& rng);

/// Mean over the S predictions of the node-averaged cross-entropy
/// -log p(target) over rows; targets[k] is the class of rows[k].
Var supervised_loss(std::span<const Var> log_probs, std::span<const std::size_t> rows,
                    std::span<const std::uint32_t> targets);
/// Reference form on row-stochastic predictions with 0 * log 0 = 0.
double cross_entropy(std::span<const Tensor> yhats, std::span<const std::size_t> rows,
                     std::span<const std::uint32_t> targets);

/// Row-wise ybar^(1/T) / sum_j ybar^(1/T). Not differentiable by design.
Tensor sharpen(const Tensor& ybar, double temperature);

/// (1/S) sum_s mean_i ||target_i - probs_s,i||^2; target is a constant.
Var consistency_loss(std::span<const Var> probs, const Tensor& target);
double consistency_value(std::span<const Tensor> yhats, const Tensor& target);

Var total_loss(Var sup, Var con, double lambda);

/// Row-wise mean of the S prediction tensors.
Tensor mean_prediction(std::span<const Var> probs);

// Neighbor sampling.

/// Node sets and per-layer operators for one mini-batch; see PropagationPlan.
/// ops[l] has one row per node of S_{l+1}; its entries are the P̃ values of
/// the self-loop and of the sampled neighbors, the latter scaled by
/// degree / sampled count.
struct SampledBlock {
  std::vector<std::uint32_t> nodes;
  std::vector<std::size_t> sizes;
  std::vector<CsrMatrix> ops;
  std::vector<std::size_t> fanouts;

  std::size_t num_seeds() const { return sizes.back(); }
  /// The plan points into this block; keep the block alive while it is used.
  PropagationPlan plan() const;
};

/// Layer-wise uniform sampling without replacement; fanouts[l] caps the
/// neighbors drawn for each target of layer l. Duplicate seeds are dropped.
SampledBlock sample_block(const Graph& graph, const SparseAdj& p, std::span<const std::uint32_t> seeds,
                          std::span<const std::size_t> fanouts, Rng& rng);

// Training.

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double valid_loss = 0.0;
  double valid_acc = 0.0;
  double test_acc = 0.0;
};

struct AlphaLayerStats {
  double mean = 0.0;
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
};

AlphaLayerStats summarize_alpha(std::span<const double> values);

struct AlphaSnapshot {
  std::size_t epoch = 0;
  std::vector<AlphaLayerStats> layers;
};

/// Per-layer alpha statistics at the recorded epochs, plus the per-node
/// values (L x n) of the returned parameters.
struct AlphaTrace {
  std::vector<AlphaSnapshot> snapshots;
  Tensor final_alpha;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_valid_acc = 0.0;
  double test_acc = 0.0;
  AlphaTrace alpha;
  double wall_seconds = 0.0;
};

struct EvalResult {
  double train_acc = 0.0;
  double valid_acc = 0.0;
  double test_acc = 0.0;
  double valid_loss = 0.0;
  /// alpha[l] holds one value per node; empty for baselines.
  std::vector<Tensor> alpha;
  /// Mean cosine distance of H^(l+1), filled on request.
  std::vector<double> smoothness;
};

double accuracy(const Tensor& logits, std::span<const std::uint32_t> nodes, std::span<const std::uint32_t> labels);

/// Deterministic full-graph evaluation without augmentation or dropout.
EvalResult evaluate(const ModelParams& params, const Dataset& ds, std::shared_ptr<const CsrMatrix> features,
                    const SparseAdj& p, bool with_smoothness = false);

/// Owns the parameters and optimizer of one run. Exposed so single steps can
/// be driven and measured directly.
class Trainer {
 public:
  Trainer(const Dataset& ds, ModelConfig cfg, TrainConfig tcfg);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  /// One optimization step on the whole graph; returns the loss.
  double step_full();
  /// One optimization step on a sampled block whose seeds are training nodes.
  double step_block(const SampledBlock& block);
  EvalResult evaluate(bool with_smoothness = false) const;

  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }
  const SparseAdj& adjacency() const { return p_; }
  const std::shared_ptr<const CsrMatrix>& features() const { return features_; }
  std::uint64_t steps() const { return step_; }

 private:
  double step(const PropagationPlan& plan, std::shared_ptr<const CsrMatrix> x, std::span<const std::size_t> loss_rows,
              std::span<const std::uint32_t> targets);

  const Dataset& ds_;
  TrainConfig tcfg_;
  ModelParams params_;
  SparseAdj p_;
  std::shared_ptr<const CsrMatrix> features_;
  PropagationPlan full_plan_;
  std::vector<std::size_t> train_rows_;
  std::vector<std::uint32_t> train_targets_;
  Adam adam_;
  Rng rng_;
  std::uint64_t step_ = 0;
};

/// Fills in_features and classes from the dataset; throws on a mismatch.
ModelConfig resolve_model_config(ModelConfig cfg, const Dataset& ds);

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

/// Trains with early stopping on validation accuracy (ties broken by lower
/// validation loss) and returns the best-validation parameters.
TrainResult train_full_batch(const Dataset& ds, const ModelConfig& cfg, const TrainConfig& tcfg);

struct MiniBatchConfig {
  std::vector<std::size_t> fanouts;
  std::size_t batch_size = 256;
};

/// Each epoch is one pass over the shuffled training nodes in seed batches;
/// evaluation stays full-batch.
TrainResult train_mini_batch(const Dataset& ds, const ModelConfig& cfg, const TrainConfig& tcfg,
                             const MiniBatchConfig& mb);

}  // namespace drgcn

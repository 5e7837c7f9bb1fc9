#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "drgcn/training.hpp"

namespace drgcn {

namespace {

std::vector<double> group_decay(const ModelParams& params, const TrainConfig& tcfg) {
  std::vector<double> out;
  out.reserve(params.params.size());
  for (const auto& p : params.params) {
    switch (p.group) {
      case ParamGroup::convolutional: out.push_back(tcfg.l2_conv); break;
      case ParamGroup::fully_connected: out.push_back(tcfg.l2_fc); break;
      case ParamGroup::evolving: out.push_back(tcfg.l2_evolving); break;
    }
  }
  return out;
}

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double mean_log_loss(const Tensor& log_probs, std::span<const std::uint32_t> nodes,
                     std::span<const std::uint32_t> labels) {
  if (nodes.empty()) return 0.0;
  double acc = 0.0;
  for (std::uint32_t i : nodes) acc -= log_probs(i, labels[i]);
  return acc / static_cast<double>(nodes.size());
}

AlphaSnapshot snapshot(std::size_t epoch, const EvalResult& ev) {
  AlphaSnapshot s;
  s.epoch = epoch;
  for (const Tensor& a : ev.alpha) s.layers.push_back(summarize_alpha(a.values()));
  return s;
}

Tensor stack_alpha(const std::vector<Tensor>& alpha) {
  if (alpha.empty()) return {};
  Tensor out(alpha.size(), alpha.front().rows());
  for (std::size_t l = 0; l < alpha.size(); ++l) {
    for (std::size_t i = 0; i < alpha[l].rows(); ++i) out(l, i) = alpha[l][i];
  }
  return out;
}

bool improved(const EvalResult& ev, double best_acc, double best_loss) {
  return ev.valid_acc > best_acc || (ev.valid_acc == best_acc && ev.valid_loss < best_loss);
}

/// Shared epoch loop: run_epoch performs the optimization steps and returns
/// the mean training loss.
template <class RunEpoch>
TrainResult run_training(Trainer& trainer, const TrainConfig& tcfg, RunEpoch run_epoch) {
  const auto start = std::chrono::steady_clock::now();
  TrainResult result;
  TrainHistory& hist = result.history;

  EvalResult ev = trainer.evaluate();
  if (!ev.alpha.empty()) hist.alpha.snapshots.push_back(snapshot(0, ev));

  double best_acc = -1.0;
  double best_loss = std::numeric_limits<double>::infinity();
  ModelParams best = trainer.params();
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
    double loss = 0.0;
    try {
      loss = run_epoch();
      ev = trainer.evaluate();
    } catch (const NonFiniteError& e) {
      throw TrainingDiverged(epoch, e.what());
    }
    if (!std::isfinite(ev.valid_loss)) throw TrainingDiverged(epoch, "non-finite validation loss");
    hist.epochs.push_back({epoch, loss, ev.train_acc, ev.valid_loss, ev.valid_acc, ev.test_acc});
    if (!ev.alpha.empty() && epoch % tcfg.trace_stride == 0) hist.alpha.snapshots.push_back(snapshot(epoch, ev));

    if (improved(ev, best_acc, best_loss)) {
      best_acc = ev.valid_acc;
      best_loss = ev.valid_loss;
      best = trainer.params();
      hist.best_epoch = epoch;
      hist.best_valid_acc = ev.valid_acc;
      hist.test_acc = ev.test_acc;
      stale = 0;
    } else {
      ++stale;
    }
    if (stale >= tcfg.patience) break;
  }

  trainer.params() = best;
  const EvalResult final_ev = trainer.evaluate();
  hist.alpha.final_alpha = stack_alpha(final_ev.alpha);
  result.params = std::move(best);
  hist.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (l2_conv < 0.0 || l2_fc < 0.0 || l2_evolving < 0.0) throw std::invalid_argument("weight decay must be >= 0");
  if (augmentations < 1) throw std::invalid_argument("augmentations (S) must be >= 1");
  if (!(drop_rate >= 0.0 && drop_rate < 1.0)) throw std::invalid_argument("drop_rate must be in [0, 1)");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (trace_stride < 1) throw std::invalid_argument("trace_stride must be >= 1");
}

AlphaLayerStats summarize_alpha(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("summarize_alpha: no values");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  double s = 0.0;
  for (double v : sorted) s += v;
  return {s / static_cast<double>(sorted.size()), sorted.front(), quantile(sorted, 0.25), quantile(sorted, 0.5),
          quantile(sorted, 0.75), sorted.back()};
}

double accuracy(const Tensor& logits, std::span<const std::uint32_t> nodes, std::span<const std::uint32_t> labels) {
  if (nodes.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::uint32_t i : nodes) {
    const auto r = logits.row(i);
    const auto pred = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    if (pred == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

EvalResult evaluate(const ModelParams& params, const Dataset& ds, std::shared_ptr<const CsrMatrix> features,
                    const SparseAdj& p, bool with_smoothness) {
  Tape tape;
  const BoundParams bound = bind(tape, params, false);
  const PropagationPlan plan = PropagationPlan::full(p, params.config.layers);
  ForwardOptions opts;
  opts.capture_hidden = with_smoothness;
  ForwardResult fr = forward(bound, std::move(features), plan, opts);

  EvalResult ev;
  const Tensor& logits = fr.logits.value();
  ev.train_acc = accuracy(logits, ds.splits.train, ds.y);
  ev.valid_acc = accuracy(logits, ds.splits.valid, ds.y);
  ev.test_acc = accuracy(logits, ds.splits.test, ds.y);
  ev.valid_loss = mean_log_loss(fr.log_probs.value(), ds.splits.valid, ds.y);
  ev.alpha = std::move(fr.alpha);
  if (with_smoothness) {
    for (const Tensor& h : fr.hidden) {
      bool any = false;
      for (double v : h.values()) any = any || v != 0.0;
      ev.smoothness.push_back(any ? smoothness_mad(h) : 0.0);
    }
  }
  return ev;
}

ModelConfig resolve_model_config(ModelConfig cfg, const Dataset& ds) {
  if (cfg.in_features == 0) cfg.in_features = ds.meta.num_features;
  if (cfg.classes == 0) cfg.classes = ds.meta.num_classes;
  if (cfg.in_features != ds.meta.num_features || cfg.classes != ds.meta.num_classes) {
    throw ModelError("model expects d=" + std::to_string(cfg.in_features) + ", c=" + std::to_string(cfg.classes) +
                     " but the dataset has d=" + std::to_string(ds.meta.num_features) +
                     ", c=" + std::to_string(ds.meta.num_classes));
  }
  cfg.validate();
  return cfg;
}

Trainer::Trainer(const Dataset& ds, ModelConfig cfg, TrainConfig tcfg)
    : ds_(ds),
      tcfg_(tcfg),
      params_(init_params(resolve_model_config(cfg, ds), ds.meta.num_nodes, Rng(tcfg.seed).split("init").next_u64())),
      p_(build_normalized(ds.graph)),
      features_(prepare_features(ds.x, params_.config)),
      full_plan_(PropagationPlan::full(p_, params_.config.layers)),
      adam_(AdamConfig{tcfg.lr}, group_decay(params_, tcfg)),
      rng_(Rng(tcfg.seed).split("train")) {
  tcfg_.validate();
  if (ds.splits.train.empty() || ds.splits.valid.empty()) {
    throw std::invalid_argument("training needs non-empty train and valid masks");
  }
  for (std::uint32_t i : ds.splits.train) {
    train_rows_.push_back(i);
    train_targets_.push_back(ds.y[i]);
  }
}

double Trainer::step_full() { return step(full_plan_, features_, train_rows_, train_targets_); }

double Trainer::step_block(const SampledBlock& block) {
  std::vector<std::size_t> src(block.nodes.begin(), block.nodes.end());
  auto x = std::make_shared<const CsrMatrix>(features_->select_rows(src));
  std::vector<std::size_t> rows(block.num_seeds());
  std::vector<std::uint32_t> targets(block.num_seeds());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    rows[k] = k;
    targets[k] = ds_.y[block.nodes[k]];
    if (targets[k] == kUnlabeled) throw std::invalid_argument("step_block: seed node is unlabeled");
  }
  return step(block.plan(), std::move(x), rows, targets);
}

double Trainer::step(const PropagationPlan& plan, std::shared_ptr<const CsrMatrix> x,
                     std::span<const std::size_t> loss_rows, std::span<const std::uint32_t> targets) {
  Rng step_rng = rng_.split(step_++);
  Tape tape;
  const BoundParams bound = bind(tape, params_);
  std::vector<Var> log_probs;
  std::vector<Var> probs;
  ForwardOptions opts;
  opts.train = true;
  for (std::size_t s = 0; s < tcfg_.augmentations; ++s) {
    Rng aug_rng = step_rng.split(s);
    auto xs = tcfg_.drop_rate > 0.0 ? drop_node_augment(*x, tcfg_.drop_rate, aug_rng) : x;
    ForwardResult fr = forward(bound, xs, plan, opts, &aug_rng);
    log_probs.push_back(fr.log_probs);
    probs.push_back(fr.probs);
  }
  Var loss = supervised_loss(log_probs, loss_rows, targets);
  if (tcfg_.augmentations >= 2 && tcfg_.lambda > 0.0) {
    const Tensor target = sharpen(mean_prediction(probs), tcfg_.temperature);
    loss = total_loss(loss, consistency_loss(probs, target), tcfg_.lambda);
  }
  tape.backward(loss);

  std::vector<Tensor*> ps;
  std::vector<const Tensor*> gs;
  for (std::size_t i = 0; i < params_.params.size(); ++i) {
    ps.push_back(&params_.params[i].value);
    gs.push_back(&tape.grad(bound.vars[i]));
  }
  adam_.step(ps, gs);
  for (Tensor* p : ps) {
    if (!p->all_finite()) throw NonFiniteError("adam_step");
  }
  return loss.value().item();
}

EvalResult Trainer::evaluate(bool with_smoothness) const {
  return drgcn::evaluate(params_, ds_, features_, p_, with_smoothness);
}

TrainResult train_full_batch(const Dataset& ds, const ModelConfig& cfg, const TrainConfig& tcfg) {
  Trainer trainer(ds, cfg, tcfg);
  return run_training(trainer, tcfg, [&] { return trainer.step_full(); });
}

TrainResult train_mini_batch(const Dataset& ds, const ModelConfig& cfg, const TrainConfig& tcfg,
                             const MiniBatchConfig& mb) {
  Trainer trainer(ds, cfg, tcfg);
  const std::size_t L = trainer.params().config.layers;
  if (mb.fanouts.size() != L) {
    throw std::invalid_argument("mini-batch: " + std::to_string(mb.fanouts.size()) + " fanouts for " +
                                std::to_string(L) + " layers");
  }
  if (mb.batch_size < 1) throw std::invalid_argument("mini-batch: batch_size must be >= 1");
  Rng rng = Rng(tcfg.seed).split("mini-batch");
  std::vector<std::uint32_t> order = ds.splits.train;
  return run_training(trainer, tcfg, [&] {
    rng.shuffle(std::span<std::uint32_t>(order));
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += mb.batch_size) {
      const std::size_t end = std::min(order.size(), start + mb.batch_size);
      const std::span<const std::uint32_t> seeds(order.data() + start, end - start);
      const SampledBlock block = sample_block(ds.graph, trainer.adjacency(), seeds, mb.fanouts, rng);
      total += trainer.step_block(block);
      ++batches;
    }
    return total / static_cast<double>(batches);
  });
}

}  // namespace drgcn

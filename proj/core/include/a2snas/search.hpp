#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "a2snas/hsidata.hpp"
#include "a2snas/metrics.hpp"
#include "a2snas/optim.hpp"
#include "a2snas/supernet.hpp"

namespace a2snas {

struct SearchConfig {
  int search_epochs = 50;
  int retrain_epochs = 100;
  std::int64_t batch_size = 16;
  double w_lr = 1e-3;  // Adam
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double w_lr_decay = 0.97;  // per epoch
  double arch_lr = 0.01;     // SGD
  double arch_momentum = 0.9;
  double lambda = 1.0;  // beta-decay weight
  std::uint64_t seed = 0;

  void validate() const;
};

/// Weight learning rate of a (0-based) epoch: w_lr * w_lr_decay^epoch.
double weight_learning_rate(const SearchConfig& cfg, int epoch);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_oa = 0.0;
  /// Softmax of every logit group in block order, beta (3) then alpha (4): 42 values.
  std::vector<double> arch_probs;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainState {
  int epoch = 0;  // completed epochs
  std::int64_t step = 0;
  Adam adam;
  SgdMomentum sgd;
  std::vector<EpochRecord> history;
  double best_val_oa = -1.0;
  int best_epoch = 0;

  static TrainState fresh(const SearchConfig& cfg);
};

/// Sum over logit groups of log-sum-exp(group).
template <class T>
Tensor<T> beta_decay_loss(Tape<T>* tape, std::span<const Tensor<T>> groups);

struct StepStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::int64_t val_correct = 0;
  std::int64_t val_count = 0;
};

/// Architecture sub-step: minimizes L_val + lambda * L_beta over the logits only,
/// with weights held constant. Returns (val cross-entropy, correct predictions).
std::pair<double, std::int64_t> arch_step(TrainState& state, Network& net, const Batch& val, const SearchConfig& cfg);

/// Weight sub-step: minimizes L_train over the weights only, logits held constant.
double weight_step(TrainState& state, Network& net, const Batch& train, const SearchConfig& cfg);

/// One bi-level iteration: arch step on `val`, then weight step on `train` (first-order).
StepStats search_step(TrainState& state, Network& net, const Batch& train, const Batch& val, const SearchConfig& cfg);

std::vector<double> arch_distributions(const Network& supernet);

/// Predicted class per pixel (eval mode, running statistics).
std::vector<std::int32_t> predict(Network& net, const HsiCube& cube, const PixelList& pixels,
                                  std::int64_t batch_size = 64);

struct Evaluation {
  ConfusionMatrix confusion;
  MetricsReport report;
};

Evaluation evaluate(Network& net, const HsiCube& cube, const PixelList& pixels, std::int64_t batch_size = 64);

/// Bi-level search over a supernet, one epoch at a time.
class SearchSession {
 public:
  SearchSession(const SupernetConfig& net_cfg, const SearchConfig& cfg, const HsiCube& cube, PixelList train,
                PixelList val);
  /// Continues from a saved network and state.
  SearchSession(Network net, TrainState state, const SearchConfig& cfg, const HsiCube& cube, PixelList train,
                PixelList val);

  void run_epoch();
  /// Runs until `epochs` epochs are complete.
  void run(int epochs);

  Genotype genotype() const;
  Network& net() { return net_; }
  const Network& net() const { return net_; }
  const TrainState& state() const { return state_; }

 private:
  SearchConfig cfg_;
  const HsiCube* cube_;
  PixelList train_, val_;
  Network net_;
  TrainState state_;
};

struct SearchResult {
  Genotype genotype;
  std::vector<EpochRecord> history;
};

SearchResult run_search(const SupernetConfig& net_cfg, const SearchConfig& cfg, const HsiCube& cube,
                        const PixelList& train, const PixelList& val);

/// Retrains a compact network from scratch and keeps the best validation snapshot.
class CompactTrainer {
 public:
  CompactTrainer(const Genotype& genotype, const SupernetConfig& net_cfg, const SearchConfig& cfg, const HsiCube& cube,
                 PixelList train, PixelList val);
  CompactTrainer(Network net, TrainState state, const SearchConfig& cfg, const HsiCube& cube, PixelList train,
                 PixelList val);

  void run_epoch();
  void run(int epochs);

  Network& net() { return net_; }
  const TrainState& state() const { return state_; }
  /// Network and state as of the epoch with the best validation OA.
  Network& best_net() { return best_net_ ? *best_net_ : net_; }
  const TrainState& best_state() const { return best_state_ ? *best_state_ : state_; }
  /// Reinstates a best snapshot saved by an earlier, interrupted run.
  void restore_best(Network net, TrainState state) {
    best_net_ = std::move(net);
    best_state_ = std::move(state);
  }

 private:
  SearchConfig cfg_;
  const HsiCube* cube_;
  PixelList train_, val_;
  Network net_;
  TrainState state_;
  std::optional<Network> best_net_;
  std::optional<TrainState> best_state_;
};

}  // namespace a2snas

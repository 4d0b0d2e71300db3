#include "a2snas/search.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "a2snas/error.hpp"

namespace a2snas {

void SearchConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ArgumentError(what);
  };
  require(search_epochs >= 0, "search_epochs must be >= 0");
  require(retrain_epochs >= 0, "retrain_epochs must be >= 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(w_lr > 0.0 && std::isfinite(w_lr), "w_lr must be positive");
  require(w_lr_decay > 0.0 && w_lr_decay <= 1.0, "w_lr_decay must be in (0, 1]");
  require(arch_lr > 0.0 && std::isfinite(arch_lr), "arch_lr must be positive");
  require(arch_momentum >= 0.0 && arch_momentum < 1.0, "arch_momentum must be in [0, 1)");
  require(lambda >= 0.0 && std::isfinite(lambda), "lambda must be >= 0");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1 must be in [0, 1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2 must be in [0, 1)");
  require(adam_eps > 0.0, "adam_eps must be positive");
}

double weight_learning_rate(const SearchConfig& cfg, int epoch) {
  return cfg.w_lr * std::pow(cfg.w_lr_decay, static_cast<double>(epoch));
}

TrainState TrainState::fresh(const SearchConfig& cfg) {
  TrainState s;
  s.adam = Adam(Adam::Options{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
  s.sgd = SgdMomentum(cfg.arch_momentum);
  return s;
}

template <class T>
Tensor<T> beta_decay_loss(Tape<T>* tape, std::span<const Tensor<T>> groups) {
  if (groups.empty()) throw ArgumentError("beta-decay loss needs at least one logit group");
  Tensor<T> total;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    auto lse = ops::softmax_smoothmax(tape, groups[i]).second;
    total = i == 0 ? lse : ops::add(tape, total, lse);
  }
  return total;
}

template Tensor<float> beta_decay_loss(Tape<float>*, std::span<const Tensor<float>>);
template Tensor<double> beta_decay_loss(Tape<double>*, std::span<const Tensor<double>>);

namespace {

std::int64_t count_correct(const Tensor<float>& logits, std::span<const std::int32_t> labels) {
  const std::int64_t n = logits.shape()[0], k = logits.shape()[1];
  const auto v = logits.values();
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < k; ++j)
      if (v[static_cast<std::size_t>(i * k + j)] > v[static_cast<std::size_t>(i * k + best)]) best = j;
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return correct;
}

std::vector<std::int32_t> argmax_rows(const Tensor<float>& logits) {
  const std::int64_t n = logits.shape()[0], k = logits.shape()[1];
  const auto v = logits.values();
  std::vector<std::int32_t> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < k; ++j)
      if (v[static_cast<std::size_t>(i * k + j)] > v[static_cast<std::size_t>(i * k + best)]) best = j;
    out.push_back(static_cast<std::int32_t>(best));
  }
  return out;
}

void require_supernet(const Network& net) {
  if (net.kind() != NetKind::kSupernet) throw ArgumentError("architecture step needs a supernet");
}

/// Mean cross-entropy and confusion counts of `pixels` in eval mode.
std::pair<double, ConfusionMatrix> eval_pass(Network& net, const HsiCube& cube, const PixelList& pixels,
                                             std::int64_t batch_size) {
  ConfusionMatrix cm(net.config().num_classes);
  double loss_sum = 0.0;
  const auto plan = plan_batches(pixels, batch_size, 0, "eval", 0, false);
  for (const auto& chunk : plan) {
    const Batch b = make_batch(cube, chunk, net.config().patch_size);
    const auto logits = net.forward(nullptr, Track::kNone, b.x, {ops::NormMode::kRunningStats, false});
    loss_sum += static_cast<double>(ops::cross_entropy<float>(nullptr, logits, b.labels).item()) *
                static_cast<double>(chunk.size());
    const auto pred = argmax_rows(logits);
    for (std::size_t i = 0; i < pred.size(); ++i) cm.add(b.labels[i], pred[i]);
  }
  const double mean = pixels.empty() ? 0.0 : loss_sum / static_cast<double>(pixels.size());
  return {mean, std::move(cm)};
}

}  // namespace

std::pair<double, std::int64_t> arch_step(TrainState& state, Network& net, const Batch& val, const SearchConfig& cfg) {
  require_supernet(net);
  Tape<float> tape;
  const auto bound = net.params().bind(&tape, Track::kArch);
  const auto logits = net.forward(&tape, bound, val.x, {ops::NormMode::kBatchStats, false});
  const auto ce = ops::cross_entropy(&tape, logits, std::span<const std::int32_t>(val.labels));
  const auto groups = Network::logit_groups(bound);
  const auto decay = beta_decay_loss(&tape, std::span<const Tensor<float>>(groups));
  const auto loss = ops::add(&tape, ce, ops::scale(&tape, decay, cfg.lambda));
  const auto grads = tape.backward(loss);
  state.sgd.step(net.params(), grads, cfg.arch_lr, ParamKind::kArch);
  return {static_cast<double>(ce.item()), count_correct(logits, val.labels)};
}

double weight_step(TrainState& state, Network& net, const Batch& train, const SearchConfig& cfg) {
  Tape<float> tape;
  const auto bound = net.params().bind(&tape, Track::kWeights);
  const auto logits = net.forward(&tape, bound, train.x, {ops::NormMode::kBatchStats, true});
  const auto ce = ops::cross_entropy(&tape, logits, std::span<const std::int32_t>(train.labels));
  const auto grads = tape.backward(ce);
  state.adam.step(net.params(), grads, weight_learning_rate(cfg, state.epoch), ParamKind::kWeight);
  ++state.step;
  return static_cast<double>(ce.item());
}

StepStats search_step(TrainState& state, Network& net, const Batch& train, const Batch& val, const SearchConfig& cfg) {
  StepStats s;
  const auto [val_loss, correct] = arch_step(state, net, val, cfg);
  s.val_loss = val_loss;
  s.val_correct = correct;
  s.val_count = static_cast<std::int64_t>(val.labels.size());
  s.train_loss = weight_step(state, net, train, cfg);
  return s;
}

std::vector<double> arch_distributions(const Network& supernet) {
  const ArchParams arch = supernet.arch_params();
  std::vector<double> out;
  auto softmax = [&out](std::span<const double> logits) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : logits) m = std::max(m, v);
    double z = 0.0;
    for (double v : logits) z += std::exp(v - m);
    for (double v : logits) out.push_back(std::exp(v - m) / z);
  };
  for (const auto& b : arch.blocks) {
    softmax(b.beta);
    softmax(b.alpha);
  }
  return out;
}

std::vector<std::int32_t> predict(Network& net, const HsiCube& cube, const PixelList& pixels,
                                  std::int64_t batch_size) {
  std::vector<std::int32_t> out;
  out.reserve(pixels.size());
  for (const auto& chunk : plan_batches(pixels, batch_size, 0, "eval", 0, false)) {
    std::vector<float> data;
    const std::int64_t p = net.config().patch_size, bands = cube.bands;
    data.reserve(static_cast<std::size_t>(chunk.size()) * static_cast<std::size_t>(bands * p * p));
    for (const auto& px : chunk) {
      // Unlabeled centres are allowed here: patches are cut directly.
      for (std::int64_t b = 0; b < bands; ++b)
        for (std::int64_t dy = 0; dy < p; ++dy)
          for (std::int64_t dx = 0; dx < p; ++dx) {
            const std::int64_t r = reflect_index(px.row + dy - p / 2, cube.height);
            const std::int64_t c = reflect_index(px.col + dx - p / 2, cube.width);
            data.push_back(cube.at(b, r, c));
          }
    }
    Tensor<float> x(Shape{static_cast<std::int64_t>(chunk.size()), 1, bands, p, p}, std::move(data));
    const auto logits = net.forward(nullptr, Track::kNone, x, {ops::NormMode::kRunningStats, false});
    const auto pred = argmax_rows(logits);
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

Evaluation evaluate(Network& net, const HsiCube& cube, const PixelList& pixels, std::int64_t batch_size) {
  if (pixels.empty()) throw ArgumentError("evaluation needs at least one pixel");
  auto [loss, cm] = eval_pass(net, cube, pixels, batch_size);
  (void)loss;
  MetricsReport report = compute_metrics(cm);
  return {std::move(cm), std::move(report)};
}

namespace {

void check_splits(const PixelList& train, const PixelList& val) {
  if (train.empty()) throw ArgumentError("training split is empty");
  if (val.empty()) throw ArgumentError("validation split is empty");
}

}  // namespace

SearchSession::SearchSession(const SupernetConfig& net_cfg, const SearchConfig& cfg, const HsiCube& cube,
                             PixelList train, PixelList val)
    : SearchSession(build_supernet(net_cfg, cfg.seed), TrainState::fresh(cfg), cfg, cube, std::move(train),
                    std::move(val)) {}

SearchSession::SearchSession(Network net, TrainState state, const SearchConfig& cfg, const HsiCube& cube,
                             PixelList train, PixelList val)
    : cfg_(cfg), cube_(&cube), train_(std::move(train)), val_(std::move(val)), net_(std::move(net)),
      state_(std::move(state)) {
  cfg_.validate();
  require_supernet(net_);
  check_splits(train_, val_);
}

void SearchSession::run_epoch() {
  const auto epoch = static_cast<std::uint64_t>(state_.epoch);
  const std::int64_t p = net_.config().patch_size;
  const auto train_plan = plan_batches(train_, cfg_.batch_size, cfg_.seed, "search/train", epoch, true);
  const auto val_plan = plan_batches(val_, cfg_.batch_size, cfg_.seed, "search/val", epoch, true);
  double train_sum = 0.0, val_sum = 0.0;
  std::int64_t train_n = 0, val_n = 0, correct = 0;
  for (std::size_t i = 0; i < train_plan.size(); ++i) {
    const Batch train = make_batch(*cube_, train_plan[i], p);
    const Batch val = make_batch(*cube_, val_plan[i % val_plan.size()], p);
    const StepStats s = search_step(state_, net_, train, val, cfg_);
    train_sum += s.train_loss * static_cast<double>(train.labels.size());
    train_n += static_cast<std::int64_t>(train.labels.size());
    val_sum += s.val_loss * static_cast<double>(s.val_count);
    val_n += s.val_count;
    correct += s.val_correct;
  }
  ++state_.epoch;
  EpochRecord rec;
  rec.epoch = state_.epoch;
  rec.train_loss = train_sum / static_cast<double>(train_n);
  rec.val_loss = val_sum / static_cast<double>(val_n);
  rec.val_oa = static_cast<double>(correct) / static_cast<double>(val_n);
  rec.arch_probs = arch_distributions(net_);
  if (rec.val_oa > state_.best_val_oa) {
    state_.best_val_oa = rec.val_oa;
    state_.best_epoch = rec.epoch;
  }
  state_.history.push_back(std::move(rec));
}

void SearchSession::run(int epochs) {
  while (state_.epoch < epochs) run_epoch();
}

Genotype SearchSession::genotype() const {
  return derive_genotype(net_.arch_params(), Fingerprint::of(net_.config()));
}

SearchResult run_search(const SupernetConfig& net_cfg, const SearchConfig& cfg, const HsiCube& cube,
                        const PixelList& train, const PixelList& val) {
  SearchSession session(net_cfg, cfg, cube, train, val);
  session.run(cfg.search_epochs);
  return {session.genotype(), session.state().history};
}

CompactTrainer::CompactTrainer(const Genotype& genotype, const SupernetConfig& net_cfg, const SearchConfig& cfg,
                               const HsiCube& cube, PixelList train, PixelList val)
    : CompactTrainer(build_compact(genotype, net_cfg, cfg.seed), TrainState::fresh(cfg), cfg, cube,
                     std::move(train), std::move(val)) {}

CompactTrainer::CompactTrainer(Network net, TrainState state, const SearchConfig& cfg, const HsiCube& cube,
                               PixelList train, PixelList val)
    : cfg_(cfg), cube_(&cube), train_(std::move(train)), val_(std::move(val)), net_(std::move(net)),
      state_(std::move(state)) {
  cfg_.validate();
  if (net_.kind() != NetKind::kCompact) throw ArgumentError("retraining needs a compact network");
  check_splits(train_, val_);
}

void CompactTrainer::run_epoch() {
  const auto epoch = static_cast<std::uint64_t>(state_.epoch);
  const std::int64_t p = net_.config().patch_size;
  double train_sum = 0.0;
  std::int64_t train_n = 0;
  for (const auto& chunk : plan_batches(train_, cfg_.batch_size, cfg_.seed, "retrain/train", epoch, true)) {
    const Batch train = make_batch(*cube_, chunk, p);
    train_sum += weight_step(state_, net_, train, cfg_) * static_cast<double>(train.labels.size());
    train_n += static_cast<std::int64_t>(train.labels.size());
  }
  ++state_.epoch;
  auto [val_loss, cm] = eval_pass(net_, *cube_, val_, 64);
  EpochRecord rec;
  rec.epoch = state_.epoch;
  rec.train_loss = train_sum / static_cast<double>(train_n);
  rec.val_loss = val_loss;
  rec.val_oa = compute_metrics(cm).oa;
  const bool improved = rec.val_oa > state_.best_val_oa;
  if (improved) {
    state_.best_val_oa = rec.val_oa;
    state_.best_epoch = rec.epoch;
  }
  state_.history.push_back(std::move(rec));
  if (improved) {
    best_net_ = net_;
    best_state_ = state_;
  }
}

void CompactTrainer::run(int epochs) {
  while (state_.epoch < epochs) run_epoch();
}

}  // namespace a2snas

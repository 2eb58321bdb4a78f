#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "marginlab/dataset.hpp"
#include "marginlab/margin.hpp"
#include "marginlab/net.hpp"

namespace marginlab {

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t eval_every = 1;  // trajectory row cadence
  double gamma = 0.1;          // truncation cutoff recorded in trajectory rows
  std::uint64_t seed = 0;      // provenance only: the loop itself draws nothing
  bool snapshot_margins = false;        // keep per-example records at each row
  bool reset_momentum_on_shrink = false;

  void validate() const;  // throws ValidationError on out-of-range fields
};

struct TrajectoryRow {
  std::size_t epoch = 0;
  double train_error = 0.0;
  double test_error = 0.0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double rho = 0.0;
  double min_margin = 0.0;
  double auc_gamma = 0.0;
  std::size_t active_n = 0;
};

// One batch-removal step of a compression run. removed holds the global
// indices dropped (the largest margins at the event; ties keep the smaller
// index active).
struct CompressionEvent {
  std::size_t epoch = 0;
  std::size_t size_before = 0;
  std::size_t size_after = 0;
  std::vector<std::size_t> removed;
  double test_error_before = 0.0;
  double test_error_after = 0.0;  // after the retrain-to-separation phase
  bool separated_after_removal = false;
  bool retrain_cap_exceeded = false;
};

struct MarginSnapshot {
  std::size_t epoch = 0;
  std::vector<MarginRecord> records;  // sorted by global_index
};

struct RunTrajectory {
  std::vector<TrajectoryRow> rows;  // strictly increasing epochs
  std::optional<std::size_t> separation_epoch;
  std::vector<CompressionEvent> events;
  std::vector<MarginSnapshot> snapshots;
  bool aborted = false;
  std::string abort_reason;
};

// Momentum buffers congruent to every parameter tensor, zeroed.
struct OptimizerState {
  std::vector<std::vector<Tensor>> buffers;
  static OptimizerState for_network(const Network& net);
};

// Numerically stable softmax cross-entropy for one example. Returns the loss
// and writes d(loss)/d(scores) = softmax - one_hot(label) into grad.
double cross_entropy(std::span<const double> scores, std::uint32_t label,
                     std::span<double> grad);

// Piecewise-linear surrogate: 1 below margin 0, linear down to 0 on
// [0, gamma], 0 beyond. gamma = 0 degenerates to the 0-1 error.
double ramp_loss(double margin_value, double gamma);

// buffer <- momentum * buffer + grad + weight_decay * weight;
// weight <- weight - learning_rate * buffer. Batchnorm running statistics
// are untouched. NaN after the update raises NumericError.
void sgd_step(Network& net, const Gradients& grads, OptimizerState& state,
              const TrainConfig& cfg);

// True iff every active example is classified correctly in eval mode. Ties
// at the argmax count as errors, so separated implies all margins > 0.
bool is_separated(const Network& net, const Dataset& ds);

// One mini-batch pass over the active set in global-index order (never
// shuffled; final partial batch processed), updating weights in place.
// Building block shared by Trainer and experiment clones.
void run_epoch(Network& net, const Dataset& ds, OptimizerState& opt,
               const TrainConfig& cfg);

// Eval-mode classification error and mean cross-entropy over the active set.
struct EvalMetrics {
  double error = 0.0;
  double loss = 0.0;
};

EvalMetrics evaluate_metrics(const Network& net, const Dataset& ds);

// Owns a working copy of the network, datasets, and optimizer state, and
// drives epochs one at a time so experiment code can interleave evaluation,
// snapshots, and active-set shrinking. Mini-batches walk the active set in
// global-index order (never shuffled); the final partial batch is processed.
class Trainer {
 public:
  Trainer(Network net, Dataset train_set, Dataset test_set, TrainConfig cfg,
          NormConvention convention);

  // One full pass over the active set. Detects first-time separation at the
  // epoch boundary and stamps trajectory.separation_epoch.
  void step_epoch();

  // Cached per weight version; cheap to call repeatedly within an epoch.
  const EvalMetrics& train_metrics();
  const EvalMetrics& test_metrics();
  const MarginDistribution& margins();
  bool separated();  // train error exactly 0
  double rho();

  // Appends a trajectory row (and a margin snapshot when configured) for the
  // current epoch; repeated calls at one epoch are no-ops.
  void record_row();
  void snapshot_margins_now();

  // Keeps only the given active examples; momentum buffers persist across
  // the shrink unless the config says otherwise.
  void retain_active(const std::vector<std::size_t>& keep);

  void set_batch_size(std::size_t batch_size);

  std::size_t epoch() const { return epoch_; }
  Network& net() { return net_; }
  const Network& net() const { return net_; }
  Dataset& train_set() { return train_; }
  const Dataset& test_set() const { return test_; }
  NormConvention convention() const { return convention_; }
  const TrainConfig& config() const { return cfg_; }
  RunTrajectory& trajectory() { return trajectory_; }
  RunTrajectory take_trajectory() { return std::move(trajectory_); }

 private:
  void invalidate();

  Network net_;
  Dataset train_;
  Dataset test_;
  TrainConfig cfg_;
  NormConvention convention_;
  OptimizerState opt_;
  RunTrajectory trajectory_;
  std::size_t epoch_ = 0;

  // evaluation caches, stamped by a version that bumps on any mutation
  std::uint64_t version_ = 0;
  std::uint64_t train_stamp_ = ~0ULL;
  std::uint64_t test_stamp_ = ~0ULL;
  std::uint64_t margin_stamp_ = ~0ULL;
  EvalMetrics train_cache_;
  EvalMetrics test_cache_;
  MarginDistribution margin_cache_;
};

// Hook runs after every epoch (post separation-detection); it may mutate the
// trainer (shrink the active set, snapshot, record).
using EpochHook = std::function<void(Trainer&)>;

// Full training run: epoch-0 row, then cfg.max_epochs epochs with rows on
// the eval_every cadence plus the separation and final epochs. The final
// weights always get a margin snapshot. A numeric failure stops the run and
// returns the partial trajectory flagged aborted. final_net, when given,
// receives the end-of-run weights (aborted runs included).
RunTrajectory train_run(const Network& net, const Dataset& train_set,
                        const Dataset& test_set, const TrainConfig& cfg,
                        NormConvention convention,
                        const EpochHook& hook = nullptr,
                        Network* final_net = nullptr);

}  // namespace marginlab

#include "marginlab/train.hpp"

#include <algorithm>
#include <cmath>

#include "marginlab/errors.hpp"

namespace marginlab {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw ValidationError("learning_rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ValidationError("momentum must be in [0,1)");
  }
  if (weight_decay < 0.0) throw ValidationError("weight_decay must be >= 0");
  if (batch_size == 0) throw ValidationError("batch_size must be >= 1");
  if (eval_every == 0) throw ValidationError("eval_every must be >= 1");
  if (gamma <= 0.0) throw ValidationError("gamma must be > 0");
}

OptimizerState OptimizerState::for_network(const Network& net) {
  OptimizerState state;
  state.buffers.resize(net.num_layers());
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    for (const Tensor* p : net.layer(i).params()) {
      Tensor zero(p->shape());
      state.buffers[i].push_back(std::move(zero));
    }
  }
  return state;
}

double cross_entropy(std::span<const double> scores, std::uint32_t label,
                     std::span<double> grad) {
  if (scores.size() < 2) throw ValidationError("need at least two classes");
  if (label >= scores.size()) throw ValidationError("label out of range");
  if (grad.size() != scores.size()) {
    throw ValidationError("gradient span size mismatch");
  }
  const double max_score = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    sum += std::exp(scores[j] - max_score);
  }
  const double log_sum = std::log(sum);
  for (std::size_t j = 0; j < scores.size(); ++j) {
    grad[j] = std::exp(scores[j] - max_score) / sum;
  }
  grad[label] -= 1.0;
  return log_sum - (scores[label] - max_score);
}

double ramp_loss(double margin_value, double gamma) {
  if (gamma < 0.0) throw ValidationError("gamma must be >= 0");
  if (margin_value <= 0.0) return 1.0;
  if (gamma == 0.0) return 0.0;
  if (margin_value >= gamma) return 0.0;
  return 1.0 - margin_value / gamma;
}

void sgd_step(Network& net, const Gradients& grads, OptimizerState& state,
              const TrainConfig& cfg) {
  if (grads.per_layer.size() != net.num_layers() ||
      state.buffers.size() != net.num_layers()) {
    throw ValidationError("gradient/optimizer layer count mismatch");
  }
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    std::vector<Tensor*> params = net.layer(i).params();
    const std::vector<Tensor>& layer_grads = grads.per_layer[i];
    std::vector<Tensor>& buffers = state.buffers[i];
    if (layer_grads.size() != params.size() ||
        buffers.size() != params.size()) {
      throw ValidationError("parameter tensor count mismatch at layer " +
                            std::to_string(i));
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor& w = *params[p];
      const Tensor& g = layer_grads[p];
      Tensor& buf = buffers[p];
      if (!w.same_shape(g) || !w.same_shape(buf)) {
        throw ValidationError("parameter shape mismatch at layer " +
                              std::to_string(i));
      }
      for (std::size_t k = 0; k < w.size(); ++k) {
        buf[k] = cfg.momentum * buf[k] + g[k] + cfg.weight_decay * w[k];
        w[k] -= cfg.learning_rate * buf[k];
      }
      if (!w.all_finite()) {
        throw NumericError("non-finite weight after update in layer " +
                               std::to_string(i),
                           static_cast<int>(i));
      }
    }
  }
}

namespace {

constexpr std::size_t kEvalBatch = 256;

}  // namespace

bool is_separated(const Network& net, const Dataset& ds) {
  const std::vector<std::size_t> active = ds.active_indices();
  const std::size_t c = net.num_classes();
  for (std::size_t start = 0; start < active.size(); start += kEvalBatch) {
    const std::size_t stop = std::min(start + kEvalBatch, active.size());
    const std::vector<std::size_t> chunk(active.begin() + start,
                                         active.begin() + stop);
    const Tensor scores = net.eval(make_batch(ds, chunk));
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const double m = multiclass_margin(
          std::span<const double>(scores.data() + b * c, c),
          ds.example(chunk[b]).label);
      if (m <= 0.0) return false;
    }
  }
  return true;
}

EvalMetrics evaluate_metrics(const Network& net, const Dataset& ds) {
  const std::vector<std::size_t> active = ds.active_indices();
  if (active.empty()) throw ValidationError("no active examples");
  const std::size_t c = net.num_classes();
  std::vector<double> grad_scratch(c);
  double loss_sum = 0.0;
  std::size_t errors = 0;
  for (std::size_t start = 0; start < active.size(); start += kEvalBatch) {
    const std::size_t stop = std::min(start + kEvalBatch, active.size());
    const std::vector<std::size_t> chunk(active.begin() + start,
                                         active.begin() + stop);
    const Tensor scores = net.eval(make_batch(ds, chunk));
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const std::uint32_t label = ds.example(chunk[b]).label;
      const std::span<const double> row(scores.data() + b * c, c);
      loss_sum += cross_entropy(row, label, grad_scratch);
      if (multiclass_margin(row, label) <= 0.0) ++errors;
    }
  }
  const auto n = static_cast<double>(active.size());
  return {static_cast<double>(errors) / n, loss_sum / n};
}

Trainer::Trainer(Network net, Dataset train_set, Dataset test_set,
                 TrainConfig cfg, NormConvention convention)
    : net_(std::move(net)),
      train_(std::move(train_set)),
      test_(std::move(test_set)),
      cfg_(cfg),
      convention_(convention),
      opt_(OptimizerState::for_network(net_)) {
  cfg_.validate();
  if (train_.active_count() == 0) {
    throw ValidationError("training set has no active examples");
  }
  check_convention(net_, convention_);
  if (separated()) trajectory_.separation_epoch = 0;
}

void run_epoch(Network& net, const Dataset& ds, OptimizerState& opt,
               const TrainConfig& cfg) {
  const std::vector<std::size_t> active = ds.active_indices();
  if (active.empty()) throw ValidationError("no active examples");
  const std::size_t c = net.num_classes();
  for (std::size_t start = 0; start < active.size(); start += cfg.batch_size) {
    const std::size_t stop = std::min(start + cfg.batch_size, active.size());
    const std::vector<std::size_t> chunk(active.begin() + start,
                                         active.begin() + stop);
    const Tensor scores = net.forward(make_batch(ds, chunk), Mode::train);
    Tensor loss_grad(scores.shape());
    const auto batch_n = static_cast<double>(chunk.size());
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      std::span<double> grad_row(loss_grad.data() + b * c, c);
      cross_entropy(std::span<const double>(scores.data() + b * c, c),
                    ds.example(chunk[b]).label, grad_row);
      for (double& g : grad_row) g /= batch_n;  // gradient of the batch mean
    }
    const Gradients grads = net.backward(loss_grad);
    sgd_step(net, grads, opt, cfg);
  }
}

void Trainer::invalidate() { ++version_; }

void Trainer::step_epoch() {
  run_epoch(net_, train_, opt_, cfg_);
  ++epoch_;
  invalidate();
  if (!trajectory_.separation_epoch && separated()) {
    trajectory_.separation_epoch = epoch_;
  }
}

const EvalMetrics& Trainer::train_metrics() {
  if (train_stamp_ != version_) {
    train_cache_ = evaluate_metrics(net_, train_);
    train_stamp_ = version_;
  }
  return train_cache_;
}

const EvalMetrics& Trainer::test_metrics() {
  if (test_stamp_ != version_) {
    test_cache_ = evaluate_metrics(net_, test_);
    test_stamp_ = version_;
  }
  return test_cache_;
}

const MarginDistribution& Trainer::margins() {
  if (margin_stamp_ != version_) {
    margin_cache_ = dataset_margins(net_, train_, convention_);
    margin_cache_.epoch = epoch_;
    margin_stamp_ = version_;
  }
  return margin_cache_;
}

bool Trainer::separated() { return train_metrics().error == 0.0; }

double Trainer::rho() { return layer_norms(net_, convention_).product; }

void Trainer::record_row() {
  if (!trajectory_.rows.empty() && trajectory_.rows.back().epoch == epoch_) {
    return;
  }
  const EvalMetrics& train = train_metrics();
  const EvalMetrics& test = test_metrics();
  const MarginDistribution& dist = margins();
  TrajectoryRow row;
  row.epoch = epoch_;
  row.train_error = train.error;
  row.test_error = test.error;
  row.train_loss = train.loss;
  row.test_loss = test.loss;
  row.rho = rho();
  row.min_margin = dist.min();
  row.auc_gamma = auc(dist, cfg_.gamma);
  row.active_n = train_.active_count();
  trajectory_.rows.push_back(row);
  if (cfg_.snapshot_margins) snapshot_margins_now();
}

void Trainer::snapshot_margins_now() {
  if (!trajectory_.snapshots.empty() &&
      trajectory_.snapshots.back().epoch == epoch_) {
    return;
  }
  MarginSnapshot snap;
  snap.epoch = epoch_;
  snap.records = margins().records;
  std::sort(snap.records.begin(), snap.records.end(),
            [](const MarginRecord& a, const MarginRecord& b) {
              return a.global_index < b.global_index;
            });
  trajectory_.snapshots.push_back(std::move(snap));
}

void Trainer::retain_active(const std::vector<std::size_t>& keep) {
  train_ = retain(train_, keep);
  if (cfg_.reset_momentum_on_shrink) {
    opt_ = OptimizerState::for_network(net_);
  }
  invalidate();
}

void Trainer::set_batch_size(std::size_t batch_size) {
  if (batch_size == 0) throw ValidationError("batch_size must be >= 1");
  cfg_.batch_size = batch_size;
}

RunTrajectory train_run(const Network& net, const Dataset& train_set,
                        const Dataset& test_set, const TrainConfig& cfg,
                        NormConvention convention, const EpochHook& hook,
                        Network* final_net) {
  Trainer trainer(net, train_set, test_set, cfg, convention);
  try {
    trainer.record_row();  // epoch 0, before any update
    for (std::size_t e = 1; e <= cfg.max_epochs; ++e) {
      trainer.step_epoch();
      const bool newly_separated =
          trainer.trajectory().separation_epoch == e;
      if (newly_separated || e % cfg.eval_every == 0 || e == cfg.max_epochs) {
        trainer.record_row();
      }
      if (hook) hook(trainer);
    }
    trainer.snapshot_margins_now();
  } catch (const NumericError& err) {
    if (final_net) *final_net = trainer.net();
    RunTrajectory traj = trainer.take_trajectory();
    traj.aborted = true;
    traj.abort_reason = err.what();
    return traj;
  }
  if (final_net) *final_net = trainer.net();
  return trainer.take_trajectory();
}

}  // namespace marginlab

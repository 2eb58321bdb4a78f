#include "marginlab/experiments.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iterator>

#include "marginlab/errors.hpp"
#include "marginlab/parallel.hpp"
#include "marginlab/rng.hpp"

namespace marginlab {

CompressionSchedule continuous_schedule(std::size_t n0) {
  if (n0 < 1) throw ValidationError("n0 must be >= 1");
  struct Tier {
    double unit;
    double floor;
  };
  // reference tiers for 50,000 points; floors mark where the chunk shrinks
  constexpr std::array<Tier, 5> base{{{5000.0, 10000.0},
                                      {1000.0, 1000.0},
                                      {100.0, 100.0},
                                      {10.0, 10.0},
                                      {1.0, 1.0}}};
  const double scale = static_cast<double>(n0) / 50000.0;
  CompressionSchedule sched;
  sched.mode = CompressionMode::continuous;
  std::size_t cur = n0;
  for (const Tier& t : base) {
    const auto unit = static_cast<std::size_t>(
        std::max<long long>(1, std::llround(t.unit * scale)));
    const auto floor = static_cast<std::size_t>(
        std::max<long long>(1, std::llround(t.floor * scale)));
    while (cur >= floor + unit) {
      cur -= unit;
      sched.sizes.push_back(cur);
    }
  }
  return sched;
}

namespace {

void check_schedule(const CompressionSchedule& schedule) {
  for (std::size_t i = 0; i < schedule.sizes.size(); ++i) {
    if (schedule.sizes[i] < 1) {
      throw ValidationError("schedule sizes must be >= 1");
    }
    if (i > 0 && schedule.sizes[i] >= schedule.sizes[i - 1]) {
      throw ValidationError("schedule sizes must be strictly decreasing");
    }
  }
}

// Step one epoch keeping the same row cadence as train_run.
void step_with_cadence(Trainer& t) {
  t.step_epoch();
  const std::size_t e = t.epoch();
  const bool newly_separated = t.trajectory().separation_epoch == e;
  if (newly_separated || e % t.config().eval_every == 0) t.record_row();
}

// The k examples with the smallest normalized margins; records are already
// ordered with ties favoring the smaller global index.
std::vector<std::size_t> smallest_k_indices(const MarginDistribution& dist,
                                            std::size_t k) {
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k && i < dist.size(); ++i) {
    out.push_back(dist.records[i].global_index);
  }
  return out;
}

}  // namespace

RunTrajectory run_continuous_compression(const Network& net,
                                         const Dataset& train_set,
                                         const Dataset& test_set,
                                         const TrainConfig& cfg,
                                         NormConvention convention,
                                         const CompressionSchedule& schedule,
                                         const CompressionPolicy& policy,
                                         Network* final_net) {
  check_schedule(schedule);
  Trainer t(net, train_set, test_set, cfg, convention);
  try {
    t.record_row();
    while (!t.separated() && t.epoch() < cfg.max_epochs) step_with_cadence(t);
    if (!t.separated()) {  // never reached separation; report as-is
      t.record_row();
      t.snapshot_margins_now();
      if (final_net) *final_net = t.net();
      return t.take_trajectory();
    }

    for (std::size_t i = 0; i < policy.settling_epochs; ++i) {
      step_with_cadence(t);
    }

    for (const std::size_t target : schedule.sizes) {
      if (target >= t.train_set().active_count()) continue;

      // Removal must happen at a separated point so the reduced set is
      // separable by construction; settling or post-removal drift can break
      // separation transiently, so recover it first.
      std::size_t spent = 0;
      while (!t.separated() && spent < policy.retrain_cap) {
        step_with_cadence(t);
        ++spent;
      }
      if (!t.separated()) {
        CompressionEvent ev;
        ev.epoch = t.epoch();
        ev.size_before = t.train_set().active_count();
        ev.size_after = ev.size_before;  // no removal performed
        ev.test_error_before = t.test_metrics().error;
        ev.test_error_after = ev.test_error_before;
        ev.retrain_cap_exceeded = true;
        t.trajectory().events.push_back(std::move(ev));
        continue;
      }

      CompressionEvent ev;
      ev.epoch = t.epoch();
      ev.size_before = t.train_set().active_count();
      ev.test_error_before = t.test_metrics().error;
      t.record_row();

      const MarginDistribution& dist = t.margins();
      const std::vector<std::size_t> keep = smallest_k_indices(dist, target);
      for (std::size_t r = target; r < dist.size(); ++r) {
        ev.removed.push_back(dist.records[r].global_index);
      }
      std::sort(ev.removed.begin(), ev.removed.end());

      t.retain_active(keep);
      ev.size_after = t.train_set().active_count();
      ev.separated_after_removal = t.separated();
      if (policy.full_gd_after_first_removal) {
        t.set_batch_size(t.train_set().active_count());
      }

      std::size_t retrain_spent = 0;
      for (; retrain_spent < policy.retrain_min_epochs; ++retrain_spent) {
        step_with_cadence(t);
      }
      while (!t.separated() && retrain_spent < policy.retrain_cap) {
        step_with_cadence(t);
        ++retrain_spent;
      }
      if (!t.separated()) ev.retrain_cap_exceeded = true;
      ev.test_error_after = t.test_metrics().error;
      t.trajectory().events.push_back(std::move(ev));
    }

    for (std::size_t i = 0; i < policy.final_epochs; ++i) step_with_cadence(t);
    t.record_row();
    t.snapshot_margins_now();
  } catch (const NumericError& err) {
    if (final_net) *final_net = t.net();
    RunTrajectory traj = t.take_trajectory();
    traj.aborted = true;
    traj.abort_reason = err.what();
    return traj;
  }
  if (final_net) *final_net = t.net();
  return t.take_trajectory();
}

RunTrajectory run_immediate_compression(const Network& net,
                                        const Dataset& train_set,
                                        const Dataset& test_set,
                                        const TrainConfig& cfg,
                                        NormConvention convention,
                                        std::size_t keep_k,
                                        std::size_t settling_epochs,
                                        Network* final_net) {
  if (keep_k == 0) throw ValidationError("keep_k must be >= 1");
  if (keep_k > train_set.active_count()) {
    throw ValidationError("keep_k " + std::to_string(keep_k) +
                          " exceeds the active set of " +
                          std::to_string(train_set.active_count()));
  }
  Trainer t(net, train_set, test_set, cfg, convention);
  try {
    t.record_row();
    bool compressed = false;
    for (std::size_t e = 1; e <= cfg.max_epochs; ++e) {
      t.step_epoch();
      const bool newly_separated = t.trajectory().separation_epoch == e;
      if (newly_separated || e % cfg.eval_every == 0 || e == cfg.max_epochs) {
        t.record_row();
      }
      if (compressed || !t.trajectory().separation_epoch) continue;
      if (e < *t.trajectory().separation_epoch + settling_epochs) continue;
      if (!t.separated()) continue;  // wait out transient drift

      compressed = true;
      if (keep_k == t.train_set().active_count()) continue;  // no-op keep-all

      CompressionEvent ev;
      ev.epoch = t.epoch();
      ev.size_before = t.train_set().active_count();
      ev.test_error_before = t.test_metrics().error;
      t.record_row();

      const MarginDistribution& dist = t.margins();
      const std::vector<std::size_t> keep = smallest_k_indices(dist, keep_k);
      for (std::size_t r = keep_k; r < dist.size(); ++r) {
        ev.removed.push_back(dist.records[r].global_index);
      }
      std::sort(ev.removed.begin(), ev.removed.end());

      t.retain_active(keep);
      ev.size_after = t.train_set().active_count();
      ev.separated_after_removal = t.separated();
      ev.test_error_after = ev.test_error_before;  // updated at run end below
      t.trajectory().events.push_back(std::move(ev));
    }
    if (!t.trajectory().events.empty()) {
      t.trajectory().events.back().test_error_after = t.test_metrics().error;
    }
    t.snapshot_margins_now();
  } catch (const NumericError& err) {
    if (final_net) *final_net = t.net();
    RunTrajectory traj = t.take_trajectory();
    traj.aborted = true;
    traj.abort_reason = err.what();
    return traj;
  }
  if (final_net) *final_net = t.net();
  return t.take_trajectory();
}

namespace {

std::vector<std::size_t> sorted_indices(const MarginDistribution& d) {
  std::vector<std::size_t> out;
  out.reserve(d.size());
  for (const MarginRecord& r : d.records) out.push_back(r.global_index);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> smallest_k_of_snapshot(
    const std::vector<MarginRecord>& records, std::size_t k) {
  std::vector<MarginRecord> copy = records;
  std::sort(copy.begin(), copy.end(),
            [](const MarginRecord& a, const MarginRecord& b) {
              if (a.normalized_margin != b.normalized_margin) {
                return a.normalized_margin < b.normalized_margin;
              }
              return a.global_index < b.global_index;
            });
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(copy[i].global_index);
  return out;
}

}  // namespace

double overlap_fraction(const MarginDistribution& a,
                        const MarginDistribution& b, std::size_t k) {
  if (k == 0) throw ValidationError("k must be >= 1");
  if (a.size() < k || b.size() < k) {
    throw ValidationError("need at least k margins in both snapshots");
  }
  if (sorted_indices(a) != sorted_indices(b)) {
    throw ValidationError("snapshots cover different example sets");
  }
  std::vector<std::size_t> sa = smallest_k_indices(a, k);
  std::vector<std::size_t> sb = smallest_k_indices(b, k);
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  std::vector<std::size_t> common;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(),
                        std::back_inserter(common));
  return static_cast<double>(common.size()) / static_cast<double>(k);
}

std::vector<std::pair<std::size_t, double>> support_persistence(
    const std::vector<MarginSnapshot>& snapshots, std::size_t k) {
  if (snapshots.size() < 2) throw ValidationError("need at least 2 snapshots");
  if (k == 0) throw ValidationError("k must be >= 1");
  for (const MarginSnapshot& s : snapshots) {
    if (s.records.size() < k) {
      throw ValidationError("snapshot at epoch " + std::to_string(s.epoch) +
                            " has fewer than k records");
    }
  }
  std::vector<std::size_t> final_set =
      smallest_k_of_snapshot(snapshots.back().records, k);
  std::sort(final_set.begin(), final_set.end());

  std::vector<std::pair<std::size_t, double>> curve;
  curve.reserve(snapshots.size());
  for (const MarginSnapshot& s : snapshots) {
    std::vector<std::size_t> here = smallest_k_of_snapshot(s.records, k);
    std::sort(here.begin(), here.end());
    std::vector<std::size_t> common;
    std::set_intersection(final_set.begin(), final_set.end(), here.begin(),
                          here.end(), std::back_inserter(common));
    curve.emplace_back(s.epoch, static_cast<double>(common.size()) /
                                    static_cast<double>(k));
  }
  return curve;
}

namespace {

// Shared continuation used by the baseline and both arms of every trial so
// that identical inputs produce bit-identical nets.
Network continue_run(Network net, const Dataset& ds, const TrainConfig& cfg,
                     std::size_t epochs) {
  OptimizerState opt = OptimizerState::for_network(net);
  for (std::size_t e = 0; e < epochs; ++e) run_epoch(net, ds, opt, cfg);
  return net;
}

double normalized_margin_at(const Network& net, const Example& ex,
                            NormConvention convention) {
  std::vector<std::size_t> shape{1};
  for (std::size_t d : ex.features.shape()) shape.push_back(d);
  Tensor batch(shape);
  std::copy(ex.features.data(), ex.features.data() + ex.features.size(),
            batch.data());
  const Tensor scores = normalized_forward(net, batch, convention);
  return multiclass_margin(
      std::span<const double>(scores.data(), scores.size()), ex.label);
}

}  // namespace

ReplaceOneReport replace_one_study(const Network& checkpoint,
                                   const Dataset& train_set,
                                   const Dataset& test_set,
                                   const TrainConfig& cfg,
                                   NormConvention convention,
                                   const ReplaceOneConfig& rep) {
  if (rep.trials < 1) throw ValidationError("trials must be >= 1");
  if (test_set.active_count() == 0) throw ValidationError("empty test set");
  if (!is_separated(checkpoint, train_set)) {
    throw ValidationError("checkpoint is not separated on the training set");
  }

  // The unperturbed continuation, trained once and reused by every trial.
  const Network baseline =
      continue_run(checkpoint, train_set, cfg, rep.retrain_epochs);
  const double baseline_rho = layer_norms(baseline, convention).product;
  const double baseline_min_margin =
      dataset_margins(baseline, train_set, convention).min();

  // The hardest point of the checkpoint, fixed across trials.
  const std::size_t smallest_gi =
      dataset_margins(checkpoint, train_set, convention).argmin().global_index;

  const std::vector<std::size_t> test_active = test_set.active_indices();
  const std::vector<std::size_t> train_active = train_set.active_indices();

  // All random picks drawn up front from one stream: per trial, first the
  // test point, then the random-arm training point.
  struct Picks {
    std::size_t test_gi;
    std::size_t random_gi;
  };
  std::vector<Picks> picks(rep.trials);
  Rng rng(rep.seed);
  for (Picks& p : picks) {
    p.test_gi = test_active[static_cast<std::size_t>(
        rng.below(test_active.size()))];
    p.random_gi = train_active[static_cast<std::size_t>(
        rng.below(train_active.size()))];
  }

  std::vector<std::array<ReplaceOneRow, 2>> slots(rep.trials);
  parallel_for(rep.trials, rep.threads, [&](std::size_t ti) {
    const Example& z = test_set.example(picks[ti].test_gi);

    std::vector<std::size_t> keep;
    keep.reserve(test_active.size() - 1);
    for (std::size_t gi : test_active) {
      if (gi != picks[ti].test_gi) keep.push_back(gi);
    }
    const Dataset reduced_test = retain(test_set, keep);

    const EvalMetrics base_metrics = evaluate_metrics(baseline, reduced_test);
    const double base_output = normalized_margin_at(baseline, z, convention);

    const std::array<std::pair<ReplaceArm, std::size_t>, 2> arms{
        {{ReplaceArm::smallest_margin, smallest_gi},
         {ReplaceArm::random, picks[ti].random_gi}}};
    for (std::size_t a = 0; a < arms.size(); ++a) {
      Dataset perturbed = train_set;
      perturbed.replace_example(arms[a].second, z.features, z.label);
      const Network arm_net =
          continue_run(checkpoint, perturbed, cfg, rep.retrain_epochs);

      const EvalMetrics metrics = evaluate_metrics(arm_net, reduced_test);
      ReplaceOneRow row;
      row.trial = ti;
      row.arm = arms[a].first;
      row.delta_test_loss = metrics.loss - base_metrics.loss;
      row.delta_test_error = metrics.error - base_metrics.error;
      row.delta_rho =
          layer_norms(arm_net, convention).product - baseline_rho;
      row.delta_norm_output =
          normalized_margin_at(arm_net, z, convention) - base_output;
      row.delta_margin = dataset_margins(arm_net, perturbed, convention).min() -
                         baseline_min_margin;
      slots[ti][a] = row;
    }
  });

  ReplaceOneReport report;
  report.rows.reserve(2 * rep.trials);
  for (const auto& pair : slots) {
    for (const ReplaceOneRow& row : pair) {
      report.rows.push_back(row);
      const bool smallest = row.arm == ReplaceArm::smallest_margin;
      (smallest ? report.mean_abs_dloss_smallest
                : report.mean_abs_dloss_random) +=
          std::abs(row.delta_test_loss);
      (smallest ? report.mean_abs_drho_smallest
                : report.mean_abs_drho_random) += std::abs(row.delta_rho);
    }
  }
  const auto n = static_cast<double>(rep.trials);
  report.mean_abs_dloss_smallest /= n;
  report.mean_abs_dloss_random /= n;
  report.mean_abs_drho_smallest /= n;
  report.mean_abs_drho_random /= n;
  return report;
}

EnsembleReport ensemble_study(const std::vector<LayerSpec>& arch,
                              const Dataset& train_set,
                              const Dataset& test_set, const TrainConfig& cfg,
                              NormConvention convention,
                              const EnsembleConfig& ens) {
  if (ens.num_stds < 1 || ens.runs_per_std < 1) {
    throw ValidationError("need at least one std and one run per std");
  }
  const std::size_t total = ens.num_stds * ens.runs_per_std;
  if (total < 2) throw ValidationError("need at least two runs");
  if (ens.std_lo <= 0.0 || ens.std_hi < ens.std_lo) {
    throw ValidationError("invalid init std range");
  }

  std::vector<EnsembleRow> slots(total);
  std::vector<std::uint8_t> completed(total, 0);
  parallel_for(total, ens.threads, [&](std::size_t i) {
    const std::size_t si = i / ens.runs_per_std;
    const double init_std =
        ens.num_stds == 1
            ? ens.std_lo
            : ens.std_lo + (ens.std_hi - ens.std_lo) *
                               static_cast<double>(si) /
                               static_cast<double>(ens.num_stds - 1);
    const std::uint64_t seed = ens.seed_base + i;

    EnsembleRow row;
    row.init_std = init_std;
    row.seed = seed;
    row.gamma = cfg.gamma;
    slots[i] = row;
    try {
      Network net = init_network(arch, init_std, seed);
      Trainer t(std::move(net), train_set, test_set, cfg, convention);
      while (!t.separated() && t.epoch() < cfg.max_epochs) t.step_epoch();
      if (!t.separated()) return;  // left as excluded
      row.separation_epoch = *t.trajectory().separation_epoch;
      for (std::size_t e = 0; e < ens.post_separation_epochs; ++e) {
        t.step_epoch();
      }
      const MarginDistribution& dist = t.margins();
      row.test_error = t.test_metrics().error;
      row.auc_gamma = auc(dist, cfg.gamma);
      row.small_margin_count = small_margin_count(dist, ens.delta);
      row.min_margin = dist.min();
      slots[i] = row;
      completed[i] = 1;
    } catch (const NumericError&) {
      // diverged run: excluded, like one that never separates
    }
  });

  EnsembleReport report;
  for (std::size_t i = 0; i < total; ++i) {
    (completed[i] ? report.rows : report.excluded).push_back(slots[i]);
  }

  if (report.rows.size() >= 2) {
    std::vector<double> aucs, errors;
    std::vector<std::pair<double, double>> by_auc, by_count;
    for (const EnsembleRow& r : report.rows) {
      aucs.push_back(r.auc_gamma);
      errors.push_back(r.test_error);
      by_auc.emplace_back(r.auc_gamma, r.test_error);
      by_count.emplace_back(static_cast<double>(r.small_margin_count),
                            r.test_error);
    }
    // the rank correlation is undefined when every run lands on the same
    // auc or the same test error; report NaN rather than failing the study
    const auto constant = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(),
                         [&](double d) { return d == v.front(); });
    };
    report.spearman_auc_test_error = (constant(aucs) || constant(errors))
                                         ? std::nan("")
                                         : spearman(aucs, errors);
    report.bins_by_auc = sorted_bin_averages(std::move(by_auc), report.bin_size);
    report.bins_by_small_count =
        sorted_bin_averages(std::move(by_count), report.bin_size);
  } else {
    report.spearman_auc_test_error = std::nan("");
  }
  return report;
}

LabelCompareReport label_comparison_study(const std::vector<LayerSpec>& arch,
                                          double init_std,
                                          std::uint64_t init_seed,
                                          const Dataset& train_set,
                                          const Dataset& test_set,
                                          const TrainConfig& cfg,
                                          NormConvention convention,
                                          const LabelCompareConfig& lc) {
  const Network init = init_network(arch, init_std, init_seed);
  const Dataset randomized_train =
      randomize_labels(train_set, lc.fraction, lc.label_seed);

  LabelCompareReport report;
  report.gamma = cfg.gamma;

  auto run_one = [&](const Dataset& ds, RunTrajectory& out_traj,
                     MarginDistribution& out_dist, bool& out_separated) {
    Trainer t(init, ds, test_set, cfg, convention);
    try {
      t.record_row();
      while (!t.separated() && t.epoch() < cfg.max_epochs) {
        step_with_cadence(t);
      }
      if (!t.separated()) {
        out_separated = false;
        out_traj = t.take_trajectory();
        return;
      }
      for (std::size_t e = 0; e < lc.settling_epochs; ++e) {
        step_with_cadence(t);
      }
      t.record_row();
      t.snapshot_margins_now();
      out_dist = t.margins();
      out_dist.epoch = t.epoch();
      out_separated = true;
      out_traj = t.take_trajectory();
    } catch (const NumericError& err) {
      out_separated = false;
      out_traj = t.take_trajectory();
      out_traj.aborted = true;
      out_traj.abort_reason = err.what();
    }
  };

  run_one(train_set, report.natural, report.natural_final,
          report.natural_separated);
  run_one(randomized_train, report.randomized, report.randomized_final,
          report.randomized_separated);

  if (report.natural_separated && report.natural_final.size() >= lc.hist_k) {
    report.natural_hist =
        histogram_smallest(report.natural_final, lc.hist_k, lc.hist_bins);
    report.natural_auc = auc(report.natural_final, cfg.gamma);
  }
  if (report.randomized_separated &&
      report.randomized_final.size() >= lc.hist_k) {
    report.randomized_hist =
        histogram_smallest(report.randomized_final, lc.hist_k, lc.hist_bins);
    report.randomized_auc = auc(report.randomized_final, cfg.gamma);
  }
  return report;
}

}  // namespace marginlab

#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "marginlab/dataset.hpp"
#include "marginlab/net.hpp"
#include "marginlab/stats.hpp"
#include "marginlab/train.hpp"

namespace marginlab {

enum class CompressionMode { continuous, immediate };

// Strictly decreasing active-set size targets.
struct CompressionSchedule {
  CompressionMode mode = CompressionMode::continuous;
  std::vector<std::size_t> sizes;
};

// Tiered removal sizes, scaled from the reference 50,000-point schedule:
// chunks of 5,000 down to 10,000, then 1,000 down to 1,000, then 100, 10,
// and finally single points down to 1. For other n0 the five tier units and
// floors scale by n0/50,000 (rounded, minimum 1); n0 = 1 yields an empty
// schedule.
CompressionSchedule continuous_schedule(std::size_t n0);

struct CompressionPolicy {
  std::size_t settling_epochs = 20;    // post-separation, before first removal
  std::size_t retrain_min_epochs = 1;  // always train this much after removal
  std::size_t retrain_cap = 50;        // per-step cap on reaching separation
  bool full_gd_after_first_removal = false;  // switch to full-batch steps
  std::size_t final_epochs = 0;        // extra epochs after the schedule ends
};

// Runs the removal schedule against a fresh training run: train to
// separation plus settling, then per target size rank the active set by
// normalized margin, keep the smallest, and retrain to separation before
// the next step. Each removal instant is checked to preserve separation.
// Compression events land in the returned trajectory, which always ends
// with a margin snapshot of the final weights; final_net, when given,
// receives those weights.
RunTrajectory run_continuous_compression(const Network& net,
                                         const Dataset& train_set,
                                         const Dataset& test_set,
                                         const TrainConfig& cfg,
                                         NormConvention convention,
                                         const CompressionSchedule& schedule,
                                         const CompressionPolicy& policy,
                                         Network* final_net = nullptr);

// One-shot retention of the keep_k smallest-margin examples once the run is
// separated (plus settling_epochs), then training continues to max_epochs.
// keep_k equal to the active size makes this an uncompressed continuation.
RunTrajectory run_immediate_compression(const Network& net,
                                        const Dataset& train_set,
                                        const Dataset& test_set,
                                        const TrainConfig& cfg,
                                        NormConvention convention,
                                        std::size_t keep_k,
                                        std::size_t settling_epochs,
                                        Network* final_net = nullptr);

// |k-smallest(a) intersect k-smallest(b)| / k, ties resolved toward the
// smaller global index. Both snapshots must cover the same example set.
double overlap_fraction(const MarginDistribution& a,
                        const MarginDistribution& b, std::size_t k);

// For each snapshot: the fraction of the final snapshot's k smallest-margin
// examples already among that epoch's k smallest. Last point is exactly 1.
std::vector<std::pair<std::size_t, double>> support_persistence(
    const std::vector<MarginSnapshot>& snapshots, std::size_t k);

enum class ReplaceArm { smallest_margin, random };

struct ReplaceOneConfig {
  std::size_t trials = 50;
  std::size_t retrain_epochs = 20;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct ReplaceOneRow {
  std::size_t trial = 0;
  ReplaceArm arm = ReplaceArm::smallest_margin;
  double delta_test_loss = 0.0;
  double delta_test_error = 0.0;
  double delta_rho = 0.0;
  double delta_norm_output = 0.0;  // normalized margin at the inserted point
  double delta_margin = 0.0;       // dataset margin (min normalized margin)
};

struct ReplaceOneReport {
  std::vector<ReplaceOneRow> rows;  // two per trial, smallest arm first
  double mean_abs_dloss_smallest = 0.0;
  double mean_abs_dloss_random = 0.0;
  double mean_abs_drho_smallest = 0.0;
  double mean_abs_drho_random = 0.0;
};

// Swap one training point for a test point (removed from the test set),
// retrain a clone of the checkpoint, and measure deltas against the
// unperturbed continuation. Per trial, the smallest-margin arm replaces the
// current argmin example and the random arm a seeded-random one; both arms
// share the trial's test point, making the comparison paired.
ReplaceOneReport replace_one_study(const Network& checkpoint,
                                   const Dataset& train_set,
                                   const Dataset& test_set,
                                   const TrainConfig& cfg,
                                   NormConvention convention,
                                   const ReplaceOneConfig& rep);

struct EnsembleConfig {
  double std_lo = 0.01;
  double std_hi = 0.05;
  std::size_t num_stds = 5;
  std::size_t runs_per_std = 4;
  std::size_t post_separation_epochs = 20;
  double delta = 0.01;  // small-margin cutoff above the minimum
  std::uint64_t seed_base = 1;
  std::size_t threads = 1;
};

struct EnsembleRow {
  double init_std = 0.0;
  std::uint64_t seed = 0;
  double test_error = 0.0;
  double auc_gamma = 0.0;
  double gamma = 0.1;
  std::size_t small_margin_count = 0;
  double min_margin = 0.0;
  std::size_t separation_epoch = 0;
};

struct EnsembleReport {
  std::vector<EnsembleRow> rows;      // one per separated run
  std::vector<EnsembleRow> excluded;  // runs that never separated
  double spearman_auc_test_error = 0.0;
  std::vector<BinnedPoint> bins_by_auc;          // mean test error per bin
  std::vector<BinnedPoint> bins_by_small_count;  // mean test error per bin
  std::size_t bin_size = 10;
};

// Trains one network per (init std, seed) pair, each to separation plus a
// fixed epoch budget, and relates the final margin statistics to test error
// across the ensemble.
EnsembleReport ensemble_study(const std::vector<LayerSpec>& arch,
                              const Dataset& train_set,
                              const Dataset& test_set, const TrainConfig& cfg,
                              NormConvention convention,
                              const EnsembleConfig& ens);

struct LabelCompareConfig {
  double fraction = 1.0;  // share of labels randomized in the second run
  std::uint64_t label_seed = 0;
  std::size_t settling_epochs = 20;
  std::size_t hist_k = 100;
  std::size_t hist_bins = 10;
};

struct LabelCompareReport {
  RunTrajectory natural;
  RunTrajectory randomized;
  MarginDistribution natural_final;
  MarginDistribution randomized_final;
  std::vector<std::size_t> natural_hist;
  std::vector<std::size_t> randomized_hist;
  double gamma = 0.1;
  double natural_auc = 0.0;
  double randomized_auc = 0.0;
  bool natural_separated = false;
  bool randomized_separated = false;  // false flags an inconclusive report
};

// Same architecture and seeds trained on natural labels and on a
// label-randomized copy, each to its own separation plus settling, then
// compared at those matched post-separation points.
LabelCompareReport label_comparison_study(const std::vector<LayerSpec>& arch,
                                          double init_std,
                                          std::uint64_t init_seed,
                                          const Dataset& train_set,
                                          const Dataset& test_set,
                                          const TrainConfig& cfg,
                                          NormConvention convention,
                                          const LabelCompareConfig& lc);

}  // namespace marginlab

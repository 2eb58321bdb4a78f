#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "marginlab/errors.hpp"
#include "marginlab/experiments.hpp"
#include "marginlab/net.hpp"
#include "marginlab/train.hpp"

using namespace marginlab;

namespace {

Dataset blobs(std::uint32_t classes, std::size_t per_class, std::uint64_t seed,
              double separation = 4.0, std::size_t dim = 4) {
  DatasetSpec spec;
  spec.num_classes = classes;
  spec.n_per_class = per_class;
  spec.dim = dim;
  spec.separation = separation;
  spec.seed = seed;
  return load_dataset(spec);
}

Network mlp(std::uint64_t seed, std::size_t dim = 4, std::uint32_t classes = 2) {
  return init_network({LayerSpec::dense(8, dim), LayerSpec::relu(),
                       LayerSpec::dense(classes)},
                      0.5, seed);
}

MarginDistribution dist_over(const std::vector<std::size_t>& gis,
                             const std::vector<double>& margins) {
  MarginDistribution d;
  for (std::size_t i = 0; i < gis.size(); ++i) {
    d.records.push_back({gis[i], margins[i], margins[i], 0});
  }
  std::sort(d.records.begin(), d.records.end(),
            [](const MarginRecord& a, const MarginRecord& b) {
              if (a.normalized_margin != b.normalized_margin) {
                return a.normalized_margin < b.normalized_margin;
              }
              return a.global_index < b.global_index;
            });
  return d;
}

}  // namespace

TEST_CASE("removal schedule matches the tiered reference") {
  CompressionSchedule full = continuous_schedule(50000);
  REQUIRE(full.sizes.size() == 44);
  // chunks of 5000 down to 10000
  CHECK(full.sizes[0] == 45000);
  CHECK(full.sizes[7] == 10000);
  // then 1000s down to 1000
  CHECK(full.sizes[8] == 9000);
  CHECK(full.sizes[16] == 1000);
  // then 100s, 10s, 1s
  CHECK(full.sizes[17] == 900);
  CHECK(full.sizes[25] == 100);
  CHECK(full.sizes[26] == 90);
  CHECK(full.sizes[34] == 10);
  CHECK(full.sizes[35] == 9);
  CHECK(full.sizes[43] == 1);

  // scaled by n0/50000: units become 500,100,10,1,1
  CompressionSchedule tenth = continuous_schedule(5000);
  REQUIRE(tenth.sizes.size() == 35);
  CHECK(tenth.sizes[0] == 4500);
  CHECK(tenth.sizes.back() == 1);

  CHECK(continuous_schedule(2000).sizes.size() == 29);
  CHECK(continuous_schedule(1).sizes.empty());
  CHECK(continuous_schedule(2).sizes == std::vector<std::size_t>{1});

  for (std::size_t n0 : {17, 100, 999, 5000, 50000, 60000}) {
    CompressionSchedule s = continuous_schedule(n0);
    for (std::size_t i = 1; i < s.sizes.size(); ++i) {
      CHECK(s.sizes[i] < s.sizes[i - 1]);
    }
    if (!s.sizes.empty()) CHECK(s.sizes[0] < n0);
  }

  CHECK_THROWS_AS(continuous_schedule(0), ValidationError);
}

TEST_CASE("continuous compression removes largest margins and stays separated") {
  Dataset train = blobs(2, 30, 300);
  Dataset test = blobs(2, 30, 301);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.max_epochs = 300;
  cfg.eval_every = 10;

  CompressionSchedule schedule;
  schedule.sizes = {40, 20, 10};
  CompressionPolicy policy;
  policy.settling_epochs = 5;
  policy.retrain_cap = 100;

  Network final_net = mlp(1);
  RunTrajectory traj = run_continuous_compression(
      mlp(310), train, test, cfg, NormConvention::all_weight_product,
      schedule, policy, &final_net);

  REQUIRE_FALSE(traj.aborted);
  REQUIRE(traj.separation_epoch.has_value());
  REQUIRE(traj.events.size() == 3);

  std::size_t expected_before = 60;
  for (std::size_t i = 0; i < traj.events.size(); ++i) {
    const CompressionEvent& ev = traj.events[i];
    CHECK(ev.size_before == expected_before);
    CHECK(ev.size_after == schedule.sizes[i]);
    CHECK(ev.removed.size() == ev.size_before - ev.size_after);
    // the instant after removal must still classify everything kept
    CHECK(ev.separated_after_removal);
    CHECK_FALSE(ev.retrain_cap_exceeded);
    expected_before = schedule.sizes[i];
  }

  // the three removal sets and the survivors partition the original set
  std::vector<std::size_t> removed_all;
  for (const auto& ev : traj.events) {
    removed_all.insert(removed_all.end(), ev.removed.begin(),
                       ev.removed.end());
  }
  std::sort(removed_all.begin(), removed_all.end());
  CHECK(removed_all.size() == 50);
  CHECK(std::adjacent_find(removed_all.begin(), removed_all.end()) ==
        removed_all.end());

  REQUIRE(!traj.snapshots.empty());
  const MarginSnapshot& last = traj.snapshots.back();
  CHECK(last.records.size() == 10);
  for (const MarginRecord& r : last.records) {
    CHECK_FALSE(std::binary_search(removed_all.begin(), removed_all.end(),
                                   r.global_index));
  }

  for (std::size_t i = 1; i < traj.rows.size(); ++i) {
    CHECK(traj.rows[i - 1].epoch < traj.rows[i].epoch);
  }
  CHECK(traj.rows.back().active_n == 10);

  // the returned weights are the measured ones
  EvalMetrics m = evaluate_metrics(final_net, test);
  CHECK(m.error == doctest::Approx(traj.rows.back().test_error));
}

TEST_CASE("oversized schedule targets are skipped") {
  Dataset train = blobs(2, 10, 302);
  Dataset test = blobs(2, 10, 303);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.max_epochs = 200;
  CompressionSchedule schedule;
  schedule.sizes = {500, 100, 12};  // first two exceed the 20-point set
  CompressionPolicy policy;
  policy.settling_epochs = 2;
  RunTrajectory traj = run_continuous_compression(
      mlp(311), train, test, cfg, NormConvention::all_weight_product,
      schedule, policy);
  REQUIRE_FALSE(traj.aborted);
  REQUIRE(traj.events.size() == 1);
  CHECK(traj.events[0].size_after == 12);

  CompressionSchedule bad;
  bad.sizes = {10, 10};
  CHECK_THROWS_AS(run_continuous_compression(
                      mlp(311), train, test, cfg,
                      NormConvention::all_weight_product, bad, policy),
                  ValidationError);
}

TEST_CASE("keeping every point makes immediate compression a plain run") {
  Dataset train = blobs(2, 12, 304);
  Dataset test = blobs(2, 12, 305);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.max_epochs = 40;
  cfg.eval_every = 3;

  RunTrajectory plain = train_run(mlp(312), train, test, cfg,
                                  NormConvention::all_weight_product);
  RunTrajectory keep_all = run_immediate_compression(
      mlp(312), train, test, cfg, NormConvention::all_weight_product, 24, 2);

  CHECK(keep_all.events.empty());
  REQUIRE(keep_all.rows.size() == plain.rows.size());
  for (std::size_t i = 0; i < plain.rows.size(); ++i) {
    CHECK(keep_all.rows[i].epoch == plain.rows[i].epoch);
    CHECK(keep_all.rows[i].train_loss == plain.rows[i].train_loss);
    CHECK(keep_all.rows[i].rho == plain.rows[i].rho);
    CHECK(keep_all.rows[i].min_margin == plain.rows[i].min_margin);
  }
  REQUIRE(!keep_all.snapshots.empty());
  REQUIRE(!plain.snapshots.empty());
  const auto& a = keep_all.snapshots.back();
  const auto& b = plain.snapshots.back();
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].normalized_margin == b.records[i].normalized_margin);
  }
}

TEST_CASE("immediate compression performs exactly one removal") {
  Dataset train = blobs(2, 20, 306);
  Dataset test = blobs(2, 20, 307);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.max_epochs = 150;
  cfg.eval_every = 5;
  RunTrajectory traj = run_immediate_compression(
      mlp(313), train, test, cfg, NormConvention::all_weight_product, 8, 3);
  REQUIRE_FALSE(traj.aborted);
  REQUIRE(traj.separation_epoch.has_value());
  REQUIRE(traj.events.size() == 1);
  const CompressionEvent& ev = traj.events[0];
  CHECK(ev.size_before == 40);
  CHECK(ev.size_after == 8);
  CHECK(ev.removed.size() == 32);
  CHECK(ev.separated_after_removal);
  CHECK(ev.epoch >= *traj.separation_epoch + 3);
  CHECK(traj.rows.back().active_n == 8);

  CHECK_THROWS_AS(
      run_immediate_compression(mlp(313), train, test, cfg,
                                NormConvention::all_weight_product, 0, 3),
      ValidationError);
  CHECK_THROWS_AS(
      run_immediate_compression(mlp(313), train, test, cfg,
                                NormConvention::all_weight_product, 41, 3),
      ValidationError);
}

TEST_CASE("overlap fraction counts shared smallest-margin members") {
  MarginDistribution a =
      dist_over({0, 1, 2, 3, 4}, {0.1, 0.2, 0.3, 0.4, 0.5});
  MarginDistribution b =
      dist_over({0, 1, 2, 3, 4}, {0.5, 0.1, 0.2, 0.3, 0.4});
  // smallest-2 of a = {0,1}; of b = {1,2}
  CHECK(overlap_fraction(a, b, 2) == doctest::Approx(0.5));
  CHECK(overlap_fraction(a, b, 5) == doctest::Approx(1.0));
  CHECK(overlap_fraction(a, a, 3) == doctest::Approx(1.0));

  // margin ties resolve toward the smaller global index: all-tied picks {0,1}
  MarginDistribution tied =
      dist_over({0, 1, 2, 3, 4}, {0.7, 0.7, 0.7, 0.7, 0.7});
  CHECK(overlap_fraction(tied, a, 2) == doctest::Approx(1.0));
  CHECK(overlap_fraction(tied, b, 2) == doctest::Approx(0.5));

  MarginDistribution other_set =
      dist_over({0, 1, 2, 3, 9}, {0.1, 0.2, 0.3, 0.4, 0.5});
  CHECK_THROWS_AS(overlap_fraction(a, other_set, 2), ValidationError);
  CHECK_THROWS_AS(overlap_fraction(a, b, 0), ValidationError);
  CHECK_THROWS_AS(overlap_fraction(a, b, 6), ValidationError);
}

TEST_CASE("support persistence ends at one and measures early agreement") {
  MarginSnapshot early;
  early.epoch = 10;
  early.records = dist_over({0, 1, 2, 3}, {0.4, 0.3, 0.2, 0.1}).records;
  MarginSnapshot late;
  late.epoch = 20;
  late.records = dist_over({0, 1, 2, 3}, {0.1, 0.2, 0.3, 0.4}).records;

  auto curve = support_persistence({early, late}, 2);
  REQUIRE(curve.size() == 2);
  CHECK(curve[0].first == 10);
  // final smallest-2 = {0,1}; early smallest-2 = {2,3}
  CHECK(curve[0].second == doctest::Approx(0.0));
  CHECK(curve[1].second == 1.0);

  CHECK_THROWS_AS(support_persistence({early}, 2), ValidationError);
  CHECK_THROWS_AS(support_persistence({early, late}, 5), ValidationError);
  CHECK_THROWS_AS(support_persistence({early, late}, 0), ValidationError);
}

TEST_CASE("replace-one study pairs arms and averages their shifts") {
  Dataset train = blobs(2, 10, 308);
  Dataset test = blobs(2, 10, 309);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.max_epochs = 150;

  // build a separated checkpoint
  Trainer t(mlp(314), train, test, cfg, NormConvention::all_weight_product);
  while (!t.separated() && t.epoch() < cfg.max_epochs) t.step_epoch();
  REQUIRE(t.separated());
  const Network checkpoint = t.net();

  ReplaceOneConfig rep;
  rep.trials = 3;
  rep.retrain_epochs = 2;
  rep.seed = 17;
  ReplaceOneReport report = replace_one_study(
      checkpoint, train, test, cfg, NormConvention::all_weight_product, rep);

  REQUIRE(report.rows.size() == 6);
  double dloss_small = 0.0, dloss_rand = 0.0;
  double drho_small = 0.0, drho_rand = 0.0;
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const ReplaceOneRow& row = report.rows[i];
    CHECK(row.trial == i / 2);
    const ReplaceArm expect =
        i % 2 == 0 ? ReplaceArm::smallest_margin : ReplaceArm::random;
    CHECK(row.arm == expect);
    if (row.arm == ReplaceArm::smallest_margin) {
      dloss_small += std::abs(row.delta_test_loss);
      drho_small += std::abs(row.delta_rho);
    } else {
      dloss_rand += std::abs(row.delta_test_loss);
      drho_rand += std::abs(row.delta_rho);
    }
  }
  CHECK(report.mean_abs_dloss_smallest ==
        doctest::Approx(dloss_small / 3.0).epsilon(1e-12));
  CHECK(report.mean_abs_dloss_random ==
        doctest::Approx(dloss_rand / 3.0).epsilon(1e-12));
  CHECK(report.mean_abs_drho_smallest ==
        doctest::Approx(drho_small / 3.0).epsilon(1e-12));
  CHECK(report.mean_abs_drho_random ==
        doctest::Approx(drho_rand / 3.0).epsilon(1e-12));

  // bit-identical across worker counts
  ReplaceOneConfig rep4 = rep;
  rep4.threads = 4;
  ReplaceOneReport parallel = replace_one_study(
      checkpoint, train, test, cfg, NormConvention::all_weight_product, rep4);
  REQUIRE(parallel.rows.size() == report.rows.size());
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    CHECK(parallel.rows[i].delta_test_loss == report.rows[i].delta_test_loss);
    CHECK(parallel.rows[i].delta_rho == report.rows[i].delta_rho);
    CHECK(parallel.rows[i].delta_margin == report.rows[i].delta_margin);
  }

  // an unseparated checkpoint is rejected up front
  CHECK_THROWS_AS(
      replace_one_study(mlp(315), train, test, cfg,
                        NormConvention::all_weight_product, rep),
      ValidationError);
}

TEST_CASE("ensemble study grid, exclusions, and thread independence") {
  // overlapping classes keep the test error off zero so the rank
  // correlation has something to rank
  Dataset train = blobs(2, 15, 320, 2.0);
  Dataset test = blobs(2, 15, 321, 2.0);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.max_epochs = 120;

  EnsembleConfig ens;
  ens.std_lo = 0.2;
  ens.std_hi = 0.6;
  ens.num_stds = 3;
  ens.runs_per_std = 2;
  ens.post_separation_epochs = 3;
  ens.seed_base = 40;

  std::vector<LayerSpec> arch = {LayerSpec::dense(8, 4), LayerSpec::relu(),
                                 LayerSpec::dense(2)};
  EnsembleReport report = ensemble_study(
      arch, train, test, cfg, NormConvention::all_weight_product, ens);

  CHECK(report.rows.size() + report.excluded.size() == 6);
  std::vector<double> stds = {0.2, 0.4, 0.6};
  for (const EnsembleRow& r : report.rows) {
    const std::size_t i = r.seed - 40;
    CHECK(r.init_std == doctest::Approx(stds[i / 2]).epsilon(1e-12));
    CHECK(r.min_margin > 0.0);  // separated runs only
    CHECK(r.auc_gamma >= 0.0);
    CHECK(r.auc_gamma <= 1.0);
    CHECK(r.small_margin_count >= 1);
  }
  if (report.rows.size() >= 2) {
    const double s = report.spearman_auc_test_error;
    CHECK((std::isnan(s) || std::abs(s) <= 1.0 + 1e-12));
    CHECK(!report.bins_by_auc.empty());
    CHECK(!report.bins_by_small_count.empty());
  }

  EnsembleConfig par = ens;
  par.threads = 4;
  EnsembleReport threaded = ensemble_study(
      arch, train, test, cfg, NormConvention::all_weight_product, par);
  REQUIRE(threaded.rows.size() == report.rows.size());
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    CHECK(threaded.rows[i].seed == report.rows[i].seed);
    CHECK(threaded.rows[i].test_error == report.rows[i].test_error);
    CHECK(threaded.rows[i].auc_gamma == report.rows[i].auc_gamma);
    CHECK(threaded.rows[i].min_margin == report.rows[i].min_margin);
  }

  EnsembleConfig bad = ens;
  bad.std_lo = 0.0;
  CHECK_THROWS_AS(ensemble_study(arch, train, test, cfg,
                                 NormConvention::all_weight_product, bad),
                  ValidationError);
}

TEST_CASE("an ensemble with nothing to rank reports NaN, not an error") {
  // classes this far apart leave every run at zero test error, so the
  // auc / test error correlation is undefined
  Dataset train = blobs(2, 15, 322, 8.0);
  Dataset test = blobs(2, 15, 323, 8.0);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.max_epochs = 120;

  EnsembleConfig ens;
  ens.std_lo = 0.3;
  ens.std_hi = 0.4;
  ens.num_stds = 2;
  ens.runs_per_std = 1;
  ens.post_separation_epochs = 1;
  ens.seed_base = 60;

  std::vector<LayerSpec> arch = {LayerSpec::dense(8, 4), LayerSpec::relu(),
                                 LayerSpec::dense(2)};
  EnsembleReport report = ensemble_study(
      arch, train, test, cfg, NormConvention::all_weight_product, ens);
  if (report.rows.size() >= 2 &&
      report.rows[0].test_error == report.rows[1].test_error) {
    CHECK(std::isnan(report.spearman_auc_test_error));
    CHECK(!report.bins_by_auc.empty());
  }
}

TEST_CASE("label comparison runs natural and shuffled twins") {
  Dataset train = blobs(2, 15, 330, 5.0);
  Dataset test = blobs(2, 15, 331, 5.0);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.max_epochs = 400;
  cfg.eval_every = 10;

  LabelCompareConfig lc;
  lc.fraction = 1.0;
  lc.label_seed = 5;
  lc.settling_epochs = 3;
  lc.hist_k = 10;
  lc.hist_bins = 4;

  std::vector<LayerSpec> arch = {LayerSpec::dense(16, 4), LayerSpec::relu(),
                                 LayerSpec::dense(2)};
  LabelCompareReport report = label_comparison_study(
      arch, 0.5, 340, train, test, cfg, NormConvention::all_weight_product,
      lc);

  REQUIRE(report.natural_separated);
  CHECK(report.natural_final.min() > 0.0);
  CHECK(report.natural.separation_epoch.has_value());
  REQUIRE(report.natural_hist.size() == 4);
  std::size_t total = 0;
  for (std::size_t c : report.natural_hist) total += c;
  CHECK(total == 10);
  CHECK(report.natural_auc > 0.0);
  CHECK(report.natural_auc <= 1.0);

  if (report.randomized_separated) {
    CHECK(report.randomized_final.min() > 0.0);
    // fitting noise costs margin: the natural fit should never rank below
    CHECK(report.natural_auc >= report.randomized_auc);
  } else {
    CHECK(report.randomized_hist.empty());
  }
}

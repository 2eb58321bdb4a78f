#include <cmath>
#include <vector>

#include "doctest.h"
#include "marginlab/errors.hpp"
#include "marginlab/net.hpp"
#include "marginlab/rng.hpp"
#include "marginlab/train.hpp"

using namespace marginlab;

namespace {

Dataset blobs(std::uint32_t classes, std::size_t per_class, std::size_t dim,
              std::uint64_t seed, double separation = 3.0) {
  DatasetSpec spec;
  spec.num_classes = classes;
  spec.n_per_class = per_class;
  spec.dim = dim;
  spec.separation = separation;
  spec.seed = seed;
  return load_dataset(spec);
}

Network tiny_net(std::uint64_t seed, std::size_t dim = 4,
                 std::uint32_t classes = 2) {
  return init_network({LayerSpec::dense(8, dim), LayerSpec::relu(),
                       LayerSpec::dense(classes)},
                      0.5, seed);
}

}  // namespace

TEST_CASE("cross entropy value and gradient on a hand case") {
  // scores (0, log 3), label 1: softmax = (1/4, 3/4), loss = -log(3/4)
  std::vector<double> scores = {0.0, std::log(3.0)};
  std::vector<double> grad(2);
  const double loss = cross_entropy(scores, 1, grad);
  CHECK(loss == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-14));
  CHECK(grad[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(grad[1] == doctest::Approx(-0.25).epsilon(1e-14));

  // stability under large score shifts
  std::vector<double> shifted = {1000.0, 1000.0 + std::log(3.0)};
  const double shifted_loss = cross_entropy(shifted, 1, grad);
  CHECK(shifted_loss == doctest::Approx(loss).epsilon(1e-12));
  CHECK(std::isfinite(grad[0]));
}

TEST_CASE("cross entropy gradient matches finite differences") {
  Rng rng(200);
  std::vector<double> scores(5);
  for (auto& s : scores) s = rng.gaussian();
  std::vector<double> grad(5);
  cross_entropy(scores, 3, grad);
  const double h = 1e-6;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    std::vector<double> probe = scores;
    std::vector<double> scratch(5);
    probe[j] += h;
    const double up = cross_entropy(probe, 3, scratch);
    probe[j] -= 2 * h;
    const double down = cross_entropy(probe, 3, scratch);
    CHECK(grad[j] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-5));
  }
}

TEST_CASE("sgd accumulates momentum across steps") {
  Network net = init_network({LayerSpec::dense(1, 1)}, 0.1, 1);
  auto& w = dynamic_cast<DenseLayer&>(net.layer(0)).weight_;
  w[0] = 1.0;
  OptimizerState opt = OptimizerState::for_network(net);

  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0;

  Gradients grads;
  grads.per_layer.resize(1);
  grads.per_layer[0].push_back(Tensor::from_values({1, 1}, {2.0}));

  sgd_step(net, grads, opt, cfg);
  // buffer = 2, weight = 1 - 0.1*2
  CHECK(w[0] == doctest::Approx(0.8).epsilon(1e-15));
  sgd_step(net, grads, opt, cfg);
  // buffer = 0.9*2 + 2 = 3.8, weight = 0.8 - 0.38
  CHECK(w[0] == doctest::Approx(0.42).epsilon(1e-15));
}

TEST_CASE("weight decay alone shrinks weights geometrically") {
  Network net = init_network({LayerSpec::dense(2, 3)}, 0.4, 2);
  Network ref = net;
  OptimizerState opt = OptimizerState::for_network(net);

  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.1;

  Gradients zero;
  zero.per_layer.resize(1);
  zero.per_layer[0].push_back(
      Tensor(dynamic_cast<DenseLayer&>(net.layer(0)).weight_.shape()));

  const int steps = 5;
  for (int i = 0; i < steps; ++i) sgd_step(net, zero, opt, cfg);
  const double shrink = std::pow(1.0 - 0.05 * 0.1, steps);
  const auto& w = dynamic_cast<DenseLayer&>(net.layer(0)).weight_;
  const auto& w0 = dynamic_cast<DenseLayer&>(ref.layer(0)).weight_;
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(w[i] == doctest::Approx(shrink * w0[i]).epsilon(1e-12));
  }
}

TEST_CASE("sgd raises a numeric error when an update produces nan") {
  Network net = init_network({LayerSpec::dense(1, 1)}, 0.1, 3);
  OptimizerState opt = OptimizerState::for_network(net);
  TrainConfig cfg;
  Gradients grads;
  grads.per_layer.resize(1);
  grads.per_layer[0].push_back(Tensor::from_values({1, 1}, {std::nan("")}));
  CHECK_THROWS_AS(sgd_step(net, grads, opt, cfg), NumericError);
}

TEST_CASE("an epoch equals hand-run batch updates in index order") {
  Dataset ds = blobs(2, 5, 4, 20);  // 10 examples, batch 4 -> sizes 4,4,2
  Network net = tiny_net(30);
  Network manual = net;
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.momentum = 0.9;
  cfg.batch_size = 4;

  OptimizerState opt = OptimizerState::for_network(net);
  run_epoch(net, ds, opt, cfg);

  OptimizerState mopt = OptimizerState::for_network(manual);
  const std::vector<std::size_t> active = ds.active_indices();
  std::vector<double> row_grad(2);
  for (std::size_t start = 0; start < active.size(); start += 4) {
    const std::size_t stop = std::min(start + 4, active.size());
    std::vector<std::size_t> batch_idx(active.begin() + start,
                                       active.begin() + stop);
    Tensor batch = make_batch(ds, batch_idx);
    Tensor scores = manual.forward(batch, Mode::train);
    Tensor grad(scores.shape());
    for (std::size_t b = 0; b < batch_idx.size(); ++b) {
      std::span<const double> row(scores.data() + b * 2, 2);
      cross_entropy(row, ds.example(batch_idx[b]).label, row_grad);
      for (std::size_t j = 0; j < 2; ++j) {
        // batch loss is the mean over the batch
        grad.at(b, j) =
            row_grad[j] / static_cast<double>(batch_idx.size());
      }
    }
    Gradients grads = manual.backward(grad);
    sgd_step(manual, grads, mopt, cfg);
  }

  Tensor probe = make_batch(ds, active);
  CHECK(net.eval(probe) == manual.eval(probe));
}

TEST_CASE("trainer records rows once per epoch and stamps separation") {
  Dataset train = blobs(2, 20, 4, 21, 4.0);
  Dataset test = blobs(2, 20, 4, 22, 4.0);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.max_epochs = 60;
  Trainer trainer(tiny_net(31), train, test, cfg,
                  NormConvention::all_weight_product);

  trainer.record_row();
  trainer.record_row();  // duplicate, dropped
  CHECK(trainer.trajectory().rows.size() == 1);
  CHECK(trainer.trajectory().rows[0].epoch == 0);
  CHECK(trainer.trajectory().rows[0].active_n == 40);

  bool saw_separation = false;
  for (int e = 0; e < 60 && !saw_separation; ++e) {
    trainer.step_epoch();
    trainer.record_row();
    saw_separation = trainer.separated();
  }
  REQUIRE(saw_separation);
  REQUIRE(trainer.trajectory().separation_epoch.has_value());
  CHECK(*trainer.trajectory().separation_epoch == trainer.epoch());

  // rows strictly increasing, metrics consistent with separation
  const auto& rows = trainer.trajectory().rows;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i - 1].epoch < rows[i].epoch);
  }
  CHECK(rows.back().train_error == 0.0);
  CHECK(rows.back().min_margin > 0.0);
  CHECK(trainer.margins().min() ==
        doctest::Approx(rows.back().min_margin).epsilon(1e-15));
  CHECK(trainer.rho() == doctest::Approx(rows.back().rho).epsilon(1e-15));
}

TEST_CASE("a net scoring both classes equally is not separated") {
  Dataset ds = blobs(2, 4, 4, 23);
  Network net = tiny_net(32);
  for (std::size_t li = 0; li < net.num_layers(); ++li) {
    for (Tensor* w : net.layer(li).params()) w->fill(0.0);
  }
  CHECK_FALSE(is_separated(net, ds));  // all scores tie at zero
  EvalMetrics m = evaluate_metrics(net, ds);
  CHECK(m.error == 1.0);
}

TEST_CASE("retain_active shrinks the working set and keeps momentum") {
  Dataset train = blobs(2, 10, 4, 24);
  Dataset test = blobs(2, 10, 4, 25);
  TrainConfig cfg;
  Trainer trainer(tiny_net(33), train, test, cfg,
                  NormConvention::all_weight_product);
  trainer.step_epoch();
  trainer.retain_active({0, 1, 10, 11});
  CHECK(trainer.train_set().active_count() == 4);
  CHECK(trainer.margins().size() == 4);
  trainer.step_epoch();  // still runs on the shrunk set
  CHECK(trainer.trajectory().rows.empty());  // rows only on request
}

TEST_CASE("train_run walks the cadence and always snapshots the end") {
  Dataset train = blobs(2, 15, 4, 26, 4.0);
  Dataset test = blobs(2, 15, 4, 27, 4.0);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.max_epochs = 12;
  cfg.eval_every = 5;
  Network final_net = tiny_net(1);
  RunTrajectory traj =
      train_run(tiny_net(34), train, test, cfg,
                NormConvention::all_weight_product, nullptr, &final_net);

  CHECK_FALSE(traj.aborted);
  REQUIRE(!traj.rows.empty());
  CHECK(traj.rows.front().epoch == 0);
  CHECK(traj.rows.back().epoch == 12);
  for (const TrajectoryRow& row : traj.rows) {
    const bool on_cadence = row.epoch % 5 == 0;
    const bool is_final = row.epoch == 12;
    const bool is_separation = traj.separation_epoch.has_value() &&
                               row.epoch == *traj.separation_epoch;
    CHECK((on_cadence || is_final || is_separation));
  }
  REQUIRE(!traj.snapshots.empty());
  CHECK(traj.snapshots.back().epoch == 12);
  // snapshot records arrive sorted by global index
  const auto& records = traj.snapshots.back().records;
  for (std::size_t i = 1; i < records.size(); ++i) {
    CHECK(records[i - 1].global_index < records[i].global_index);
  }

  // final_net holds the weights the last row was measured on
  EvalMetrics m = evaluate_metrics(final_net, test);
  CHECK(m.error == doctest::Approx(traj.rows.back().test_error));
}

TEST_CASE("train_run with zero epochs emits the initial row only") {
  Dataset train = blobs(2, 5, 4, 28);
  Dataset test = blobs(2, 5, 4, 29);
  TrainConfig cfg;
  cfg.max_epochs = 0;
  RunTrajectory traj = train_run(tiny_net(35), train, test, cfg,
                                 NormConvention::all_weight_product);
  REQUIRE(traj.rows.size() == 1);
  CHECK(traj.rows[0].epoch == 0);
  REQUIRE(traj.snapshots.size() == 1);
  CHECK(traj.snapshots[0].epoch == 0);
}

TEST_CASE("numeric blowup aborts the run but keeps the trajectory") {
  Dataset train = blobs(2, 10, 4, 40, 10.0);
  Dataset test = blobs(2, 10, 4, 41, 10.0);
  TrainConfig cfg;
  cfg.learning_rate = 1e12;  // divergence by design
  cfg.max_epochs = 200;
  Network final_net = tiny_net(2);
  RunTrajectory traj =
      train_run(tiny_net(36), train, test, cfg,
                NormConvention::all_weight_product, nullptr, &final_net);
  CHECK(traj.aborted);
  CHECK_FALSE(traj.abort_reason.empty());
  CHECK(!traj.rows.empty());
}

TEST_CASE("config validation rejects out-of-range fields") {
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = TrainConfig{};
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = TrainConfig{};
  cfg.momentum = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = TrainConfig{};
  cfg.weight_decay = -1e-3;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = TrainConfig{};
  cfg.eval_every = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = TrainConfig{};
  cfg.gamma = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  CHECK_NOTHROW(TrainConfig{}.validate());
}

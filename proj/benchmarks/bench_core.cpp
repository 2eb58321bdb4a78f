// Microbenchmarks for the hot paths: forward, backward, one SGD epoch, and
// a full margin sweep. Run with --benchmark_min_time=... as usual.

#include <benchmark/benchmark.h>

#include "marginlab/dataset.hpp"
#include "marginlab/margin.hpp"
#include "marginlab/net.hpp"
#include "marginlab/train.hpp"

namespace {

using namespace marginlab;

Dataset blobs(std::size_t per_class, std::uint64_t seed) {
  DatasetSpec spec;
  spec.num_classes = 2;
  spec.n_per_class = per_class;
  spec.dim = 20;
  spec.separation = 3.0;
  spec.seed = seed;
  return load_dataset(spec);
}

Network mlp(std::uint64_t seed) {
  return init_network(
      {LayerSpec::dense(64, 20), LayerSpec::relu(), LayerSpec::dense(2)},
      0.05, seed);
}

void bm_forward(benchmark::State& state) {
  Network net = mlp(1);
  Dataset ds = blobs(static_cast<std::size_t>(state.range(0)) / 2, 7);
  Tensor batch = make_batch(ds, ds.active_indices());
  for (auto _ : state) {
    Tensor scores = net.eval(batch);
    benchmark::DoNotOptimize(scores.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_forward)->Arg(64)->Arg(512);

void bm_backward(benchmark::State& state) {
  Network net = mlp(1);
  Dataset ds = blobs(static_cast<std::size_t>(state.range(0)) / 2, 7);
  Tensor batch = make_batch(ds, ds.active_indices());
  for (auto _ : state) {
    Tensor scores = net.forward(batch, Mode::train);
    Tensor grad(scores.shape());
    grad.fill(1.0 / static_cast<double>(scores.dim(0)));
    Gradients grads = net.backward(grad);
    benchmark::DoNotOptimize(grads.per_layer.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_backward)->Arg(64)->Arg(512);

void bm_epoch(benchmark::State& state) {
  Network net = mlp(1);
  Dataset ds = blobs(256, 7);
  TrainConfig cfg;
  cfg.batch_size = 32;
  OptimizerState opt = OptimizerState::for_network(net);
  for (auto _ : state) {
    run_epoch(net, ds, opt, cfg);
  }
  state.SetItemsProcessed(state.iterations() * ds.active_count());
}
BENCHMARK(bm_epoch);

void bm_margins(benchmark::State& state) {
  Network net = mlp(1);
  Dataset ds = blobs(static_cast<std::size_t>(state.range(0)) / 2, 7);
  for (auto _ : state) {
    MarginDistribution dist =
        dataset_margins(net, ds, NormConvention::all_weight_product);
    benchmark::DoNotOptimize(dist.records.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_margins)->Arg(512)->Arg(4096);

}  // namespace

BENCHMARK_MAIN();

#include <atomic>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "marginlab/errors.hpp"
#include "marginlab/parallel.hpp"
#include "marginlab/stats.hpp"

using namespace marginlab;

TEST_CASE("fractional ranks average over tie groups") {
  std::vector<double> values = {3.0, 1.0, 4.0, 1.0, 5.0};
  std::vector<double> ranks = fractional_ranks(values);
  // sorted: 1,1,3,4,5 -> the two 1s share (1+2)/2
  CHECK(ranks == std::vector<double>{3.0, 1.5, 4.0, 1.5, 5.0});

  std::vector<double> all_tied = {2.0, 2.0, 2.0};
  CHECK(fractional_ranks(all_tied) == std::vector<double>{2.0, 2.0, 2.0});

  CHECK(fractional_ranks({7.0}) == std::vector<double>{1.0});
  CHECK(fractional_ranks({}).empty());
}

TEST_CASE("pearson of an exact linear map is signed one") {
  std::vector<double> x = {1.0, 2.0, 3.0, 4.0};
  std::vector<double> up = {2.0, 4.0, 6.0, 8.0};
  std::vector<double> down = {5.0, 4.0, 3.0, 2.0};
  CHECK(pearson(x, up) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pearson(x, down) == doctest::Approx(-1.0).epsilon(1e-12));

  CHECK_THROWS_AS(pearson(x, {1.0}), ValidationError);
  CHECK_THROWS_AS(pearson({1.0}, {2.0}), ValidationError);
  std::vector<double> constant = {3.0, 3.0, 3.0, 3.0};
  CHECK_THROWS_AS(pearson(x, constant), ValidationError);
}

TEST_CASE("spearman on a hand-ranked triple") {
  // ranks of x: 1,2,3; ranks of y: 2,1,3 -> rho = 1 - 6*2/(3*8) = 0.5
  std::vector<double> x = {1.0, 2.0, 3.0};
  std::vector<double> y = {2.0, 1.0, 3.0};
  CHECK(spearman(x, y) == doctest::Approx(0.5).epsilon(1e-12));

  // monotone transforms leave it fixed
  std::vector<double> warped = {std::exp(2.0), std::exp(1.0), std::exp(3.0)};
  CHECK(spearman(x, warped) == doctest::Approx(0.5).epsilon(1e-12));

  // perfect reversal
  std::vector<double> rev = {9.0, 5.0, 1.0};
  CHECK(spearman(x, rev) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("bin averages keep the trailing partial bin") {
  std::vector<std::pair<double, double>> pairs = {
      {5.0, 50.0}, {1.0, 10.0}, {3.0, 30.0}, {2.0, 20.0}, {4.0, 40.0}};
  std::vector<BinnedPoint> bins = sorted_bin_averages(pairs, 2);
  REQUIRE(bins.size() == 3);
  CHECK(bins[0].mean_key == doctest::Approx(1.5));
  CHECK(bins[0].mean_value == doctest::Approx(15.0));
  CHECK(bins[0].count == 2);
  CHECK(bins[1].mean_key == doctest::Approx(3.5));
  CHECK(bins[2].mean_key == doctest::Approx(5.0));
  CHECK(bins[2].count == 1);

  CHECK(sorted_bin_averages({}, 3).empty());
  CHECK_THROWS_AS(sorted_bin_averages(pairs, 0), ValidationError);
}

TEST_CASE("parallel_for covers every slot exactly once") {
  const std::size_t n = 500;
  for (std::size_t threads : {std::size_t{1}, std::size_t{4}}) {
    std::vector<int> hits(n, 0);
    parallel_for(n, threads, [&](std::size_t i) { hits[i] += 1; });
    for (std::size_t i = 0; i < n; ++i) CHECK(hits[i] == 1);
  }
}

TEST_CASE("parallel results are thread-count independent via slots") {
  const std::size_t n = 64;
  auto run = [n](std::size_t threads) {
    std::vector<double> out(n);
    parallel_for(n, threads, [&](std::size_t i) {
      double acc = static_cast<double>(i) + 1.0;
      for (int k = 0; k < 1000; ++k) acc = std::fmod(acc * 1.000001, 97.0);
      out[i] = acc;
    });
    return out;
  };
  CHECK(run(1) == run(4));
}

TEST_CASE("parallel_for rethrows the first worker failure") {
  std::atomic<int> calls{0};
  auto boom = [&](std::size_t i) {
    calls.fetch_add(1);
    if (i == 3) throw std::runtime_error("worker failed");
  };
  CHECK_THROWS_AS(parallel_for(8, 4, boom), std::runtime_error);
  CHECK_THROWS_AS(parallel_for(8, 1, boom), std::runtime_error);
  CHECK(calls.load() >= 2);
}

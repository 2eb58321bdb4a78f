#include "marginlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "marginlab/errors.hpp"

namespace marginlab {

std::vector<double> fractional_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values[a] < values[b];
  });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    // positions i..j (0-based) share the mean of ranks i+1..j+1
    const double shared = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ValidationError("size mismatch");
  const std::size_t n = x.size();
  if (n < 2) throw ValidationError("need at least two points");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw ValidationError("correlation undefined for a constant input");
  }
  return sxy / std::sqrt(sxx * syy);
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(fractional_ranks(x), fractional_ranks(y));
}

std::vector<BinnedPoint> sorted_bin_averages(
    std::vector<std::pair<double, double>> pairs, std::size_t bin_size) {
  if (bin_size == 0) throw ValidationError("bin_size must be >= 1");
  std::sort(pairs.begin(), pairs.end());
  std::vector<BinnedPoint> bins;
  for (std::size_t start = 0; start < pairs.size(); start += bin_size) {
    const std::size_t stop = std::min(start + bin_size, pairs.size());
    BinnedPoint bin;
    bin.count = stop - start;
    for (std::size_t i = start; i < stop; ++i) {
      bin.mean_key += pairs[i].first;
      bin.mean_value += pairs[i].second;
    }
    bin.mean_key /= static_cast<double>(bin.count);
    bin.mean_value /= static_cast<double>(bin.count);
    bins.push_back(bin);
  }
  return bins;
}

}  // namespace marginlab

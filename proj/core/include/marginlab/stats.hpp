#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace marginlab {

// Average ranks in 1..n, ties sharing the mean of their rank range.
std::vector<double> fractional_ranks(const std::vector<double>& values);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

// Rank correlation: Pearson on fractional ranks. Throws on size mismatch,
// fewer than two points, or a constant input (undefined correlation).
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// Sort pairs by key, chunk into consecutive bins of bin_size (trailing
// partial bin kept), and average key and value per bin.
struct BinnedPoint {
  double mean_key = 0.0;
  double mean_value = 0.0;
  std::size_t count = 0;
};

std::vector<BinnedPoint> sorted_bin_averages(
    std::vector<std::pair<double, double>> pairs, std::size_t bin_size);

}  // namespace marginlab

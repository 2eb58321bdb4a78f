#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "marginlab/dataset.hpp"
#include "marginlab/net.hpp"

namespace marginlab {

// One active example's margin at a weight snapshot. raw_margin is the true
// class score minus the best other-class score; normalized_margin divides by
// the convention's norm product, making values comparable across weight
// scales.
struct MarginRecord {
  std::size_t global_index = 0;
  double raw_margin = 0.0;
  double normalized_margin = 0.0;
  std::uint32_t label = 0;
};

// Snapshot of the active set's margins, sorted ascending by normalized
// margin (ties by global_index). min() is the dataset margin; its argmin is
// the hardest point.
struct MarginDistribution {
  std::size_t epoch = 0;
  NormConvention convention = NormConvention::all_weight_product;
  std::vector<MarginRecord> records;

  bool empty() const { return records.empty(); }
  std::size_t size() const { return records.size(); }
  double min() const;
  const MarginRecord& argmin() const;
};

// Score of the true class minus the max over the other classes. Positive iff
// correctly classified; exactly zero on an argmax tie (counted as an error).
double multiclass_margin(std::span<const double> scores, std::uint32_t label);

// Margins of every active example under the given convention's norm product.
MarginDistribution dataset_margins(const Network& net, const Dataset& ds,
                                   NormConvention convention);

// Mean truncated margin: (1/N) sum clamp(m, 0, gamma) / gamma. Equals
// 1 - mean ramp loss at the same gamma. Requires gamma > 0 and a nonempty
// distribution.
double auc(const MarginDistribution& dist, double gamma);

// How many margins sit within delta of the smallest one.
std::size_t small_margin_count(const MarginDistribution& dist, double delta);

// Bin counts over the k smallest margins: [min, max] of that subset split
// into equal-width right-open bins (last bin right-closed). A zero-width
// range puts all k in the last bin. Counts always sum to k.
std::vector<std::size_t> histogram_smallest(const MarginDistribution& dist,
                                            std::size_t k = 100,
                                            std::size_t bins = 10);

// Full distribution regrouped by true label; classes with no active
// examples get an empty entry.
std::map<std::uint32_t, MarginDistribution> per_class_distributions(
    const Network& net, const Dataset& ds, NormConvention convention);

// Coefficient of variation of the normalized margins (population std over
// mean). Zero means the distribution has collapsed to a point. A
// non-positive mean makes the ratio meaningless; then value falls back to
// the raw std and the flag is set.
struct Flatness {
  double value = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
  bool mean_nonpositive = false;
};

Flatness flatness(const MarginDistribution& dist);

}  // namespace marginlab

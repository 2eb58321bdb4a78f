#include "marginlab/margin.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "marginlab/errors.hpp"

namespace marginlab {

double MarginDistribution::min() const { return argmin().normalized_margin; }

const MarginRecord& MarginDistribution::argmin() const {
  if (records.empty()) throw ValidationError("empty margin distribution");
  return records.front();
}

double multiclass_margin(std::span<const double> scores, std::uint32_t label) {
  if (scores.size() < 2) throw ValidationError("need at least two classes");
  if (label >= scores.size()) throw ValidationError("label out of range");
  double best_other = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j != label) best_other = std::max(best_other, scores[j]);
  }
  return scores[label] - best_other;
}

namespace {

constexpr std::size_t kEvalBatch = 256;

void sort_by_margin(std::vector<MarginRecord>& records) {
  std::sort(records.begin(), records.end(),
            [](const MarginRecord& a, const MarginRecord& b) {
              if (a.normalized_margin != b.normalized_margin) {
                return a.normalized_margin < b.normalized_margin;
              }
              return a.global_index < b.global_index;
            });
}

}  // namespace

MarginDistribution dataset_margins(const Network& net, const Dataset& ds,
                                   NormConvention convention) {
  check_convention(net, convention);
  const double rho = layer_norms(net, convention).product;
  if (rho <= 0.0 || !std::isfinite(rho)) {
    throw NumericError("degenerate norm product " + std::to_string(rho));
  }
  const std::vector<std::size_t> active = ds.active_indices();
  if (active.empty()) throw ValidationError("no active examples");

  MarginDistribution dist;
  dist.convention = convention;
  dist.records.reserve(active.size());
  const std::size_t c = net.num_classes();
  for (std::size_t start = 0; start < active.size(); start += kEvalBatch) {
    const std::size_t stop = std::min(start + kEvalBatch, active.size());
    const std::vector<std::size_t> chunk(active.begin() + start,
                                         active.begin() + stop);
    const Tensor scores = net.eval(make_batch(ds, chunk));
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const Example& ex = ds.example(chunk[b]);
      const double raw = multiclass_margin(
          std::span<const double>(scores.data() + b * c, c), ex.label);
      dist.records.push_back({ex.global_index, raw, raw / rho, ex.label});
    }
  }
  sort_by_margin(dist.records);
  return dist;
}

double auc(const MarginDistribution& dist, double gamma) {
  if (dist.empty()) throw ValidationError("empty margin distribution");
  if (gamma <= 0.0) throw ValidationError("gamma must be > 0");
  double total = 0.0;
  for (const MarginRecord& r : dist.records) {
    total += std::clamp(r.normalized_margin, 0.0, gamma) / gamma;
  }
  return total / static_cast<double>(dist.size());
}

std::size_t small_margin_count(const MarginDistribution& dist, double delta) {
  if (dist.empty()) throw ValidationError("empty margin distribution");
  const double cutoff = dist.min() + delta;
  std::size_t count = 0;
  for (const MarginRecord& r : dist.records) {
    if (r.normalized_margin <= cutoff) ++count;
  }
  return count;
}

std::vector<std::size_t> histogram_smallest(const MarginDistribution& dist,
                                            std::size_t k, std::size_t bins) {
  if (k == 0 || bins == 0) throw ValidationError("k and bins must be >= 1");
  if (dist.size() < k) {
    throw ValidationError("need at least " + std::to_string(k) +
                          " margins, have " + std::to_string(dist.size()));
  }
  const double lo = dist.records[0].normalized_margin;
  const double hi = dist.records[k - 1].normalized_margin;
  std::vector<std::size_t> counts(bins, 0);
  if (hi <= lo) {
    counts.back() = k;  // zero-width range: conserve the total count
    return counts;
  }
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i < k; ++i) {
    const double m = dist.records[i].normalized_margin;
    auto bin = static_cast<std::size_t>((m - lo) / width);
    if (bin >= bins) bin = bins - 1;  // right edge closes the last bin
    ++counts[bin];
  }
  return counts;
}

std::map<std::uint32_t, MarginDistribution> per_class_distributions(
    const Network& net, const Dataset& ds, NormConvention convention) {
  const MarginDistribution full = dataset_margins(net, ds, convention);
  std::map<std::uint32_t, MarginDistribution> by_class;
  for (std::uint32_t c = 0; c < ds.num_classes(); ++c) {
    by_class[c].epoch = full.epoch;
    by_class[c].convention = convention;
  }
  for (const MarginRecord& r : full.records) {
    by_class[r.label].records.push_back(r);  // order within class preserved
  }
  return by_class;
}

Flatness flatness(const MarginDistribution& dist) {
  if (dist.empty()) throw ValidationError("empty margin distribution");
  const auto n = static_cast<double>(dist.size());
  double mean = 0.0;
  for (const MarginRecord& r : dist.records) mean += r.normalized_margin;
  mean /= n;
  // identical margins must report exactly zero spread; the two-pass variance
  // would leave rounding residue when the mean is not representable
  const bool collapsed =
      dist.records.front().normalized_margin ==
      dist.records.back().normalized_margin;
  double var = 0.0;
  if (!collapsed) {
    for (const MarginRecord& r : dist.records) {
      const double d = r.normalized_margin - mean;
      var += d * d;
    }
    var /= n;
  } else {
    mean = dist.records.front().normalized_margin;
  }

  Flatness result;
  result.mean = mean;
  result.stddev = std::sqrt(var);
  if (mean > 0.0) {
    result.value = result.stddev / mean;
  } else {
    result.value = result.stddev;
    result.mean_nonpositive = true;
  }
  return result;
}

}  // namespace marginlab

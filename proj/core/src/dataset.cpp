#include "marginlab/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <utility>

#include "marginlab/errors.hpp"
#include "marginlab/rng.hpp"
#include "wire.hpp"

namespace marginlab {

Dataset::Dataset(std::vector<Example> examples, std::uint32_t num_classes,
                 Split split)
    : examples_(std::move(examples)), num_classes_(num_classes), split_(split) {
  if (num_classes_ < 2) throw ValidationError("num_classes must be >= 2");
  for (std::size_t i = 0; i < examples_.size(); ++i) {
    const Example& ex = examples_[i];
    if (ex.global_index != i) {
      throw ValidationError("global indices must be 0..N-1 in order");
    }
    if (ex.label >= num_classes_) {
      throw ValidationError("label " + std::to_string(ex.label) +
                            " out of range for " +
                            std::to_string(num_classes_) + " classes");
    }
    if (!ex.features.all_finite()) {
      throw ValidationError("features must be finite (example " +
                            std::to_string(i) + ")");
    }
  }
  active_.assign(examples_.size(), true);
  active_count_ = examples_.size();
}

const Example& Dataset::example(std::size_t global_index) const {
  if (global_index >= examples_.size()) {
    throw ValidationError("unknown global index " +
                          std::to_string(global_index));
  }
  return examples_[global_index];
}

bool Dataset::is_active(std::size_t global_index) const {
  return global_index < active_.size() && active_[global_index];
}

std::vector<std::size_t> Dataset::active_indices() const {
  std::vector<std::size_t> out;
  out.reserve(active_count_);
  for (std::size_t i = 0; i < active_.size(); ++i) {
    if (active_[i]) out.push_back(i);
  }
  return out;
}

void Dataset::set_active_mask(const std::vector<bool>& mask) {
  if (mask.size() != examples_.size()) {
    throw ValidationError("active mask size mismatch");
  }
  active_ = mask;
  active_count_ = static_cast<std::size_t>(
      std::count(active_.begin(), active_.end(), true));
}

void Dataset::replace_example(std::size_t global_index, Tensor features,
                              std::uint32_t label) {
  if (global_index >= examples_.size()) {
    throw ValidationError("unknown global index");
  }
  if (label >= num_classes_) throw ValidationError("label out of range");
  if (!features.same_shape(examples_[global_index].features)) {
    throw ValidationError("replacement feature shape mismatch");
  }
  examples_[global_index].features = std::move(features);
  examples_[global_index].label = label;
}

void Dataset::set_label(std::size_t global_index, std::uint32_t label) {
  if (global_index >= examples_.size()) {
    throw ValidationError("unknown global index");
  }
  if (label >= num_classes_) throw ValidationError("label out of range");
  examples_[global_index].label = label;
}

namespace {

Dataset load_synthetic(const DatasetSpec& spec) {
  if (spec.num_classes < 2) throw ValidationError("num_classes must be >= 2");
  if (spec.n_per_class == 0) throw ValidationError("n_per_class must be >= 1");
  if (spec.dim == 0) throw ValidationError("dim must be >= 1");
  if (spec.noise_std < 0.0) throw ValidationError("noise_std must be >= 0");
  std::vector<std::size_t> shape = spec.feature_shape;
  if (shape.empty()) {
    shape = {spec.dim};
  } else {
    std::size_t prod = 1;
    for (std::size_t d : shape) prod *= d;
    if (prod != spec.dim) {
      throw ValidationError("feature_shape product must equal dim");
    }
  }

  Rng rng(spec.seed);
  std::vector<Example> examples;
  examples.reserve(static_cast<std::size_t>(spec.num_classes) *
                   spec.n_per_class);
  std::size_t next_index = 0;
  for (std::uint32_t c = 0; c < spec.num_classes; ++c) {
    const std::size_t mean_axis = c % spec.dim;
    for (std::size_t i = 0; i < spec.n_per_class; ++i) {
      Tensor features(shape);
      for (std::size_t d = 0; d < spec.dim; ++d) {
        features[d] = spec.noise_std * rng.gaussian();
      }
      features[mean_axis] += spec.separation;
      examples.push_back({next_index++, std::move(features), c});
    }
  }
  return Dataset(std::move(examples), spec.num_classes, spec.split);
}

Dataset load_csv(const DatasetSpec& spec) {
  if (spec.file_num_classes < 2) {
    throw ValidationError("CSV datasets need a declared class count >= 2");
  }
  std::ifstream in(spec.path);
  if (!in) throw ValidationError("cannot open dataset file: " + spec.path);

  std::vector<Example> examples;
  std::string line;
  std::size_t byte_offset = 0;
  std::size_t dim = 0;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = byte_offset;
    byte_offset += line.size() + 1;
    if (line.empty()) continue;

    std::vector<double> fields;
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
      double value = 0.0;
      auto [next, ec] = std::from_chars(p, end, value);
      if (ec != std::errc()) {
        throw ParseError(
            "malformed number at byte offset " +
                std::to_string(line_start + (p - line.data())),
            static_cast<long>(line_start + (p - line.data())));
      }
      fields.push_back(value);
      p = next;
      if (p < end) {
        if (*p != ',') {
          throw ParseError(
              "expected ',' at byte offset " +
                  std::to_string(line_start + (p - line.data())),
              static_cast<long>(line_start + (p - line.data())));
        }
        ++p;
      }
    }
    if (fields.size() < 2) {
      throw ParseError("line with fewer than two fields at byte offset " +
                           std::to_string(line_start),
                       static_cast<long>(line_start));
    }
    const double label_value = fields[0];
    if (label_value < 0.0 ||
        label_value != static_cast<double>(static_cast<std::uint32_t>(label_value))) {
      throw ParseError("label is not a nonnegative integer at byte offset " +
                           std::to_string(line_start),
                       static_cast<long>(line_start));
    }
    const auto label = static_cast<std::uint32_t>(label_value);
    if (label >= spec.file_num_classes) {
      throw ValidationError("label " + std::to_string(label) +
                            " out of range for " +
                            std::to_string(spec.file_num_classes) + " classes");
    }
    if (dim == 0) {
      dim = fields.size() - 1;
    } else if (fields.size() - 1 != dim) {
      throw ParseError("inconsistent feature count at byte offset " +
                           std::to_string(line_start),
                       static_cast<long>(line_start));
    }
    Tensor features = Tensor::from_values(
        {dim}, std::vector<double>(fields.begin() + 1, fields.end()));
    examples.push_back({index++, std::move(features), label});
  }
  if (examples.empty()) throw ValidationError("empty dataset file");
  return Dataset(std::move(examples), spec.file_num_classes, spec.split);
}

Dataset load_binary(const DatasetSpec& spec) {
  std::ifstream in(spec.path, std::ios::binary);
  if (!in) throw ValidationError("cannot open dataset file: " + spec.path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();
  wire::Reader r(buf);

  if (r.u32le() != kDatasetMagic) {
    throw ParseError("bad magic at byte offset 0", 0);
  }
  const std::uint32_t n = r.u32le();
  const std::uint32_t c = r.u32le();
  const std::uint32_t d = r.u32le();
  if (c < 2) throw ParseError("class count < 2 at byte offset 8", 8);
  if (d == 0) throw ParseError("zero feature dimension at byte offset 12", 12);

  std::vector<Example> examples;
  examples.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::size_t record_offset = r.offset();
    const std::uint32_t label = r.u32le();
    if (label >= c) {
      throw ValidationError("label " + std::to_string(label) +
                            " out of range for " + std::to_string(c) +
                            " classes (record at byte offset " +
                            std::to_string(record_offset) + ")");
    }
    std::vector<double> values(d);
    for (std::uint32_t k = 0; k < d; ++k) values[k] = r.f64le();
    examples.push_back(
        {i, Tensor::from_values({d}, std::move(values)), label});
  }
  if (!r.at_end()) {
    throw ParseError("trailing bytes at byte offset " +
                         std::to_string(r.offset()),
                     static_cast<long>(r.offset()));
  }
  return Dataset(std::move(examples), c, spec.split);
}

}  // namespace

Dataset load_dataset(const DatasetSpec& spec) {
  switch (spec.source) {
    case DataSource::synthetic_gaussian:
      return load_synthetic(spec);
    case DataSource::file:
      return spec.format == FileFormat::csv ? load_csv(spec)
                                            : load_binary(spec);
  }
  throw ValidationError("unknown dataset source");
}

Dataset randomize_labels(const Dataset& ds, double fraction,
                         std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) {
    throw ValidationError("fraction must be in [0,1]");
  }
  Dataset out = ds;
  std::vector<std::size_t> indices = ds.active_indices();
  const std::size_t n = indices.size();
  const auto k = static_cast<std::size_t>(fraction * static_cast<double>(n));
  if (k == 0) return out;

  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(indices[i], indices[j]);
  }
  for (std::size_t i = 0; i < k; ++i) {
    out.set_label(indices[i],
                  static_cast<std::uint32_t>(rng.below(ds.num_classes())));
  }
  return out;
}

Dataset retain(const Dataset& ds, const std::vector<std::size_t>& keep) {
  if (keep.empty()) throw ValidationError("retain: keep set is empty");
  std::vector<bool> mask(ds.size(), false);
  for (std::size_t gi : keep) {
    if (gi >= ds.size()) {
      throw ValidationError("retain: unknown global index " +
                            std::to_string(gi));
    }
    if (!ds.is_active(gi)) {
      throw ValidationError("retain: index " + std::to_string(gi) +
                            " is not active");
    }
    mask[gi] = true;
  }
  Dataset out = ds;
  out.set_active_mask(mask);
  return out;
}

void save_dataset_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out.precision(17);
  for (const Example& ex : ds.examples()) {
    out << ex.label;
    for (std::size_t i = 0; i < ex.features.size(); ++i) {
      out << ',' << ex.features[i];
    }
    out << '\n';
  }
}

void save_dataset_binary(const Dataset& ds, const std::string& path) {
  std::string buf;
  wire::append_u32le(buf, kDatasetMagic);
  wire::append_u32le(buf, static_cast<std::uint32_t>(ds.size()));
  wire::append_u32le(buf, ds.num_classes());
  const std::size_t d = ds.size() ? ds.examples()[0].features.size() : 0;
  wire::append_u32le(buf, static_cast<std::uint32_t>(d));
  for (const Example& ex : ds.examples()) {
    wire::append_u32le(buf, ex.label);
    for (std::size_t i = 0; i < ex.features.size(); ++i) {
      wire::append_f64le(buf, ex.features[i]);
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

}  // namespace marginlab

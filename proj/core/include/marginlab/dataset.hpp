#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "marginlab/tensor.hpp"

namespace marginlab {

// One labeled example. global_index is assigned at load time in
// file/generation order and never reused or renumbered, so example identity
// survives dataset compression and is comparable across runs that share a
// dataset.
struct Example {
  std::size_t global_index = 0;
  Tensor features;  // [d] for flat vectors, [C,H,W] for images
  std::uint32_t label = 0;
};

enum class Split { train, test };

// Immutable after construction except for the active mask, which only ever
// shrinks within a run. Iteration order is the global-index order; nothing
// here shuffles.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<Example> examples, std::uint32_t num_classes,
          Split split);

  std::uint32_t num_classes() const { return num_classes_; }
  Split split() const { return split_; }
  std::size_t size() const { return examples_.size(); }

  const Example& example(std::size_t global_index) const;
  const std::vector<Example>& examples() const { return examples_; }

  bool is_active(std::size_t global_index) const;
  std::size_t active_count() const { return active_count_; }
  // Ascending global indices of the active subset.
  std::vector<std::size_t> active_indices() const;

  // Used only by retain(); deactivating is one-way within a run.
  void set_active_mask(const std::vector<bool>& mask);

  // Replaces the features/label at a slot, keeping the global index. Used by
  // the replace-one stability experiment.
  void replace_example(std::size_t global_index, Tensor features,
                       std::uint32_t label);

  void set_label(std::size_t global_index, std::uint32_t label);

 private:
  std::vector<Example> examples_;
  std::uint32_t num_classes_ = 0;
  Split split_ = Split::train;
  std::vector<bool> active_;
  std::size_t active_count_ = 0;
};

enum class DataSource { synthetic_gaussian, file };
enum class FileFormat { csv, binary };

struct DatasetSpec {
  DataSource source = DataSource::synthetic_gaussian;
  Split split = Split::train;

  // synthetic-gaussian: C axis-aligned blobs. Class c has mean
  // separation * e_{c mod dim}; features are mean + noise_std * N(0, I).
  std::uint32_t num_classes = 2;
  std::size_t n_per_class = 10;
  std::size_t dim = 4;
  double separation = 3.0;
  double noise_std = 1.0;
  std::uint64_t seed = 0;
  // Optional image layout [C,H,W]; product must equal dim. Empty = flat.
  std::vector<std::size_t> feature_shape;

  // file
  std::string path;
  FileFormat format = FileFormat::csv;
  // Declared class count for CSV files (the binary header carries its own).
  std::uint32_t file_num_classes = 0;
};

// Deterministic dataset construction; a spec is a pure recipe.
// Draw order for synthetic data: for each class c in 0..C-1, for each of the
// n_per_class examples, `dim` gaussian draws in coordinate order.
Dataset load_dataset(const DatasetSpec& spec);

// Re-labels floor(fraction * active N) examples, chosen by a seeded partial
// Fisher-Yates over the ascending active indices, each receiving a uniform
// label in [0, C) (possibly its original one). Draw order: all selection
// draws first, then one label draw per chosen example in selection order.
Dataset randomize_labels(const Dataset& ds, double fraction,
                         std::uint64_t seed);

// Shrinks the active set to exactly `keep`. Indices must be currently
// active; nothing is renumbered.
Dataset retain(const Dataset& ds, const std::vector<std::size_t>& keep);

// File format A: one example per line, "label,f_0,...,f_{d-1}".
void save_dataset_csv(const Dataset& ds, const std::string& path);

// File format B: little-endian [u32 magic][u32 N][u32 C][u32 d] header
// followed by N records of [u32 label][d x f64 features].
inline constexpr std::uint32_t kDatasetMagic = 0x4D52474E;
void save_dataset_binary(const Dataset& ds, const std::string& path);

}  // namespace marginlab

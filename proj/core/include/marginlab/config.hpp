#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "marginlab/net.hpp"
#include "marginlab/train.hpp"

namespace marginlab {

enum class ExperimentKind {
  train,
  compress_continuous,
  compress_immediate,
  replace_one,
  ensemble,
  label_compare,
  margins_report,
};

ExperimentKind parse_kind(const std::string& name);
std::string kind_name(ExperimentKind kind);

// Architecture text, one token per layer, comma separated:
//   dense:OUT[:IN]   fully connected, IN required on the first layer
//   conv:OUTC[:INC]  3x3 stride-2 convolution, INC required on the first
//   relu
//   bn[:CH]          batchnorm, channel count inferred when omitted
std::vector<LayerSpec> parse_layers(const std::string& text);
std::string format_layers(const std::vector<LayerSpec>& layers);

// Which norm product divides the margins. `automatic` picks by architecture
// (batchnorm present -> bn, conv present -> conv, otherwise all weights).
enum class ConventionChoice { automatic, conv, bn, all };

ConventionChoice parse_convention_choice(const std::string& name);
std::string convention_choice_name(ConventionChoice choice);
NormConvention resolve_convention(ConventionChoice choice, const Network& net);

struct DataConfig {
  std::string source = "synthetic";  // synthetic | csv | binary

  // synthetic gaussian blobs
  std::uint32_t classes = 2;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 100;
  std::size_t dim = 4;
  double separation = 3.0;
  double noise_std = 1.0;
  std::uint64_t train_seed = 11;
  std::uint64_t test_seed = 12;
  std::vector<std::size_t> feature_shape;  // [C,H,W], empty = flat vectors

  // file sources
  std::string train_path;
  std::string test_path;
  std::uint32_t file_classes = 0;  // declared class count, csv only
};

struct ArchConfig {
  std::vector<LayerSpec> layers = {LayerSpec::dense(16, 4), LayerSpec::relu(),
                                   LayerSpec::dense(2)};
  ConventionChoice convention = ConventionChoice::automatic;
  double init_std = 0.05;
};

struct CompressSettings {
  std::size_t keep_k = 100;  // immediate mode target
  std::size_t settling_epochs = 20;
  std::size_t retrain_min_epochs = 1;
  std::size_t retrain_cap = 50;
  bool full_gd_after_removal = false;
  std::size_t final_epochs = 0;
};

struct ReplaceOneSettings {
  std::size_t trials = 50;
  std::size_t retrain_epochs = 20;
  std::size_t settling_epochs = 20;  // used when training the base net here
  std::string checkpoint;            // optional pre-trained base net
};

struct EnsembleSettings {
  double std_lo = 0.01;
  double std_hi = 0.05;
  std::size_t num_stds = 5;
  std::size_t runs_per_std = 4;
  std::size_t post_separation_epochs = 20;
  double delta = 0.01;
};

struct LabelCompareSettings {
  double fraction = 1.0;
  std::uint64_t label_seed = 99;
  std::size_t settling_epochs = 20;
  std::size_t hist_k = 100;
  std::size_t hist_bins = 10;
};

struct MarginsSettings {
  std::string checkpoint;  // required by the margins report
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::train;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::string out = "out";

  DataConfig data;
  ArchConfig arch;
  TrainConfig train;  // train.seed mirrors the experiment seed
  CompressSettings compress;
  ReplaceOneSettings replace_one;
  EnsembleSettings ensemble;
  LabelCompareSettings label_compare;
  MarginsSettings margins;

  // Throws ValidationError naming section.key and the valid range.
  void validate() const;
};

// Strict INI dialect: [section] headers, `key = value` pairs, and full-line
// comments starting with # or ;. Unknown sections and keys are errors naming
// the offender; a duplicate key is a ParseError carrying its line number.
// dump_config emits every section in canonical order with round-trip number
// formatting, so parse(dump(c)) reproduces c and dump(parse(text)) is a
// fixed point of parse-then-dump.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string dump_config(const ExperimentConfig& cfg);

// FNV-1a over the canonical dump, as 16 lowercase hex digits. Stamped into
// the header of every artifact a run writes.
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string config_hash_hex(const ExperimentConfig& cfg);

}  // namespace marginlab

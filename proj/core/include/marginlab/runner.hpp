#pragma once

#include <optional>
#include <string>

#include "marginlab/config.hpp"
#include "marginlab/dataset.hpp"
#include "marginlab/net.hpp"

namespace marginlab {

// Dataset and network assembly from a validated config.
Dataset build_train_set(const DataConfig& d);
Dataset build_test_set(const DataConfig& d);
Network build_network(const ExperimentConfig& cfg);

// Executes the configured experiment and writes the artifact set into
// cfg.out: a config echo, trajectory and event logs, margin snapshots, a
// final checkpoint, and the experiment's report files, each stamped with
// the config hash. Returns 0 on success and 1 when the run aborted on a
// numeric failure, in which case partial artifacts stay in place next to a
// FAILED marker. Precondition errors (bad config, occupied output
// directory, unseparable checkpoints) throw instead.
int run_experiment(const ExperimentConfig& cfg, bool overwrite);

struct PlotRequest {
  std::string run_dir;
  std::string figure;  // ranked | per-class | trajectory | tracks | persistence
  std::optional<std::size_t> epoch;  // snapshot selector, default: latest
  std::size_t group_k = 200;         // group size for tracks / persistence
};

// Emits plot-ready CSV series under <run_dir>/plots from the artifacts of a
// finished run. A pure file transformation; nothing is recomputed.
int run_plot(const PlotRequest& req);

}  // namespace marginlab

#pragma once

#include <string>
#include <vector>

#include "marginlab/experiments.hpp"
#include "marginlab/train.hpp"

namespace marginlab {

// Shortest decimal string that parses back to exactly v.
std::string format_double(double v);

// "# marginlab <version> config_hash=<16 hex>". Every artifact written by a
// run starts with this line (as the first JSON record in jsonl files).
std::string provenance_line(const std::string& hash_hex);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// trajectory.csv: epoch,train_error,test_error,train_loss,test_loss,rho,
// min_margin,auc_gamma,active_n
void write_trajectory_csv(const std::string& path, const RunTrajectory& run,
                          const std::string& provenance);
std::vector<TrajectoryRow> read_trajectory_csv(const std::string& path);

// margins csv: epoch,global_index,raw_margin,normalized_margin,label,
// rows ordered by global index.
void write_margin_snapshot_csv(const std::string& path,
                               const MarginSnapshot& snap,
                               const std::string& provenance);
MarginSnapshot read_margin_snapshot_csv(const std::string& path);

// One JSON object per line, each {"type", "epoch", "payload"}. The first
// record is a meta event carrying the artifact version and config hash;
// separation, compression, and abort events follow in epoch order.
void write_events_jsonl(const std::string& path, const RunTrajectory& run,
                        const std::string& hash_hex);

// ensemble csv: init_std,seed,test_error,auc_gamma,gamma,small_margin_count,
// min_margin,separation_epoch
void write_ensemble_csv(const std::string& path, const EnsembleReport& report,
                        const std::string& provenance);

// replace-one csv: trial,arm,delta_test_loss,delta_test_error,delta_rho,
// delta_norm_output,delta_margin
void write_replace_one_csv(const std::string& path,
                           const ReplaceOneReport& report,
                           const std::string& provenance);

// Plain data series for external plotting, one CSV per series group.
struct PlotSeries {
  std::string x_label = "x";
  std::string y_label = "y";
  std::string group_label;  // empty = ungrouped two-column file
  std::vector<double> x;
  std::vector<double> y;
  std::vector<std::string> group;  // parallel to x/y when grouped
};

void write_plot_series(const std::string& path, const PlotSeries& series,
                       const std::string& provenance);

// Creates the run directory (parents included). An existing nonempty
// directory is refused unless overwrite is set.
void prepare_out_dir(const std::string& dir, bool overwrite);

// Drops a FAILED marker file recording why a run was abandoned.
void write_failed_marker(const std::string& dir, const std::string& reason);

}  // namespace marginlab

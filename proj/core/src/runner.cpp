#include "marginlab/runner.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <map>
#include <system_error>
#include <vector>

#include "json.hpp"
#include "marginlab/errors.hpp"
#include "marginlab/experiments.hpp"
#include "marginlab/io.hpp"
#include "marginlab/margin.hpp"
#include "marginlab/train.hpp"
#include "marginlab/version.hpp"

namespace marginlab {

namespace fs = std::filesystem;
using nlohmann::json;

Dataset build_train_set(const DataConfig& d) {
  DatasetSpec s;
  s.split = Split::train;
  if (d.source == "synthetic") {
    s.source = DataSource::synthetic_gaussian;
    s.num_classes = d.classes;
    s.n_per_class = d.train_per_class;
    s.dim = d.dim;
    s.separation = d.separation;
    s.noise_std = d.noise_std;
    s.seed = d.train_seed;
    s.feature_shape = d.feature_shape;
  } else {
    s.source = DataSource::file;
    s.path = d.train_path;
    s.format = d.source == "csv" ? FileFormat::csv : FileFormat::binary;
    s.file_num_classes = d.file_classes;
  }
  return load_dataset(s);
}

Dataset build_test_set(const DataConfig& d) {
  DatasetSpec s;
  s.split = Split::test;
  if (d.source == "synthetic") {
    s.source = DataSource::synthetic_gaussian;
    s.num_classes = d.classes;
    s.n_per_class = d.test_per_class;
    s.dim = d.dim;
    s.separation = d.separation;
    s.noise_std = d.noise_std;
    s.seed = d.test_seed;
    s.feature_shape = d.feature_shape;
  } else {
    s.source = DataSource::file;
    s.path = d.test_path;
    s.format = d.source == "csv" ? FileFormat::csv : FileFormat::binary;
    s.file_num_classes = d.file_classes;
  }
  return load_dataset(s);
}

Network build_network(const ExperimentConfig& cfg) {
  return init_network(cfg.arch.layers, cfg.arch.init_std, cfg.seed);
}

namespace {

std::string joinp(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

json meta_event(const std::string& hash_hex) {
  return {{"type", "meta"},
          {"epoch", 0},
          {"payload",
           {{"tool", "marginlab"},
            {"version", kVersion},
            {"config_hash", hash_hex}}}};
}

void write_jsonl(const std::string& path, const std::vector<json>& events) {
  std::string out;
  for (const json& e : events) {
    out += e.dump();
    out += '\n';
  }
  write_text_file(path, out);
}

MarginSnapshot by_global_index(const MarginDistribution& dist) {
  MarginSnapshot snap;
  snap.epoch = dist.epoch;
  snap.records = dist.records;
  std::sort(snap.records.begin(), snap.records.end(),
            [](const MarginRecord& a, const MarginRecord& b) {
              return a.global_index < b.global_index;
            });
  return snap;
}

void write_snapshots(const std::string& dir, const RunTrajectory& run,
                     const std::string& prov) {
  for (const MarginSnapshot& s : run.snapshots) {
    write_margin_snapshot_csv(
        joinp(dir, "margins_epoch_" + std::to_string(s.epoch) + ".csv"), s,
        prov);
  }
}

// Common tail for the kinds whose primary record is one trajectory.
int finish_trajectory_run(const ExperimentConfig& cfg, const std::string& prov,
                          const std::string& hash, const RunTrajectory& run,
                          const Network& final_net) {
  write_trajectory_csv(joinp(cfg.out, "trajectory.csv"), run, prov);
  write_events_jsonl(joinp(cfg.out, "events.jsonl"), run, hash);
  write_snapshots(cfg.out, run, prov);
  save_checkpoint(final_net, joinp(cfg.out, "checkpoint.bin"));
  if (run.aborted) {
    write_failed_marker(cfg.out, run.abort_reason);
    return 1;
  }
  return 0;
}

int run_train_kind(const ExperimentConfig& cfg, const std::string& prov,
                   const std::string& hash) {
  Dataset train = build_train_set(cfg.data);
  Dataset test = build_test_set(cfg.data);
  Network net = build_network(cfg);
  NormConvention conv = resolve_convention(cfg.arch.convention, net);
  Network final_net;
  RunTrajectory run =
      train_run(net, train, test, cfg.train, conv, nullptr, &final_net);
  return finish_trajectory_run(cfg, prov, hash, run, final_net);
}

int run_compress_kind(const ExperimentConfig& cfg, const std::string& prov,
                      const std::string& hash) {
  Dataset train = build_train_set(cfg.data);
  Dataset test = build_test_set(cfg.data);
  Network net = build_network(cfg);
  NormConvention conv = resolve_convention(cfg.arch.convention, net);
  Network final_net;
  RunTrajectory run;
  if (cfg.kind == ExperimentKind::compress_continuous) {
    CompressionSchedule schedule = continuous_schedule(train.active_count());
    CompressionPolicy policy;
    policy.settling_epochs = cfg.compress.settling_epochs;
    policy.retrain_min_epochs = cfg.compress.retrain_min_epochs;
    policy.retrain_cap = cfg.compress.retrain_cap;
    policy.full_gd_after_first_removal = cfg.compress.full_gd_after_removal;
    policy.final_epochs = cfg.compress.final_epochs;
    run = run_continuous_compression(net, train, test, cfg.train, conv,
                                     schedule, policy, &final_net);
  } else {
    run = run_immediate_compression(net, train, test, cfg.train, conv,
                                    cfg.compress.keep_k,
                                    cfg.compress.settling_epochs, &final_net);
  }
  return finish_trajectory_run(cfg, prov, hash, run, final_net);
}

int run_replace_one_kind(const ExperimentConfig& cfg, const std::string& prov,
                         const std::string& hash) {
  Dataset train = build_train_set(cfg.data);
  Dataset test = build_test_set(cfg.data);
  Network base;
  NormConvention conv;
  if (!cfg.replace_one.checkpoint.empty()) {
    base = load_checkpoint(cfg.replace_one.checkpoint);
    conv = resolve_convention(cfg.arch.convention, base);
  } else {
    Network net = build_network(cfg);
    conv = resolve_convention(cfg.arch.convention, net);
    Trainer tr(net, train, test, cfg.train, conv);
    tr.record_row();
    while (!tr.separated() && tr.epoch() < cfg.train.max_epochs) {
      tr.step_epoch();
      const bool newly = tr.trajectory().separation_epoch == tr.epoch();
      if (newly || tr.epoch() % cfg.train.eval_every == 0) tr.record_row();
    }
    if (!tr.separated()) {
      tr.record_row();
      write_trajectory_csv(joinp(cfg.out, "base_trajectory.csv"),
                           tr.trajectory(), prov);
      write_failed_marker(cfg.out, "base run never separated within " +
                                       std::to_string(cfg.train.max_epochs) +
                                       " epochs");
      return 1;
    }
    for (std::size_t i = 0; i < cfg.replace_one.settling_epochs; ++i) {
      tr.step_epoch();
      if (tr.epoch() % cfg.train.eval_every == 0) tr.record_row();
    }
    tr.record_row();
    write_trajectory_csv(joinp(cfg.out, "base_trajectory.csv"),
                         tr.trajectory(), prov);
    base = tr.net();
    save_checkpoint(base, joinp(cfg.out, "base_checkpoint.bin"));
  }

  ReplaceOneConfig rep;
  rep.trials = cfg.replace_one.trials;
  rep.retrain_epochs = cfg.replace_one.retrain_epochs;
  rep.seed = cfg.seed;
  rep.threads = cfg.threads;
  ReplaceOneReport report =
      replace_one_study(base, train, test, cfg.train, conv, rep);
  write_replace_one_csv(joinp(cfg.out, "replace_one.csv"), report, prov);
  write_jsonl(joinp(cfg.out, "events.jsonl"),
              {meta_event(hash),
               {{"type", "summary"},
                {"epoch", 0},
                {"payload",
                 {{"trials", rep.trials},
                  {"mean_abs_delta_test_loss_smallest",
                   report.mean_abs_dloss_smallest},
                  {"mean_abs_delta_test_loss_random",
                   report.mean_abs_dloss_random},
                  {"mean_abs_delta_rho_smallest",
                   report.mean_abs_drho_smallest},
                  {"mean_abs_delta_rho_random",
                   report.mean_abs_drho_random}}}}});
  return 0;
}

int run_ensemble_kind(const ExperimentConfig& cfg, const std::string& prov,
                      const std::string& hash) {
  Dataset train = build_train_set(cfg.data);
  Dataset test = build_test_set(cfg.data);
  Network probe = build_network(cfg);
  NormConvention conv = resolve_convention(cfg.arch.convention, probe);

  EnsembleConfig ens;
  ens.std_lo = cfg.ensemble.std_lo;
  ens.std_hi = cfg.ensemble.std_hi;
  ens.num_stds = cfg.ensemble.num_stds;
  ens.runs_per_std = cfg.ensemble.runs_per_std;
  ens.post_separation_epochs = cfg.ensemble.post_separation_epochs;
  ens.delta = cfg.ensemble.delta;
  ens.seed_base = cfg.seed;
  ens.threads = cfg.threads;
  EnsembleReport report =
      ensemble_study(cfg.arch.layers, train, test, cfg.train, conv, ens);

  write_ensemble_csv(joinp(cfg.out, "ensemble.csv"), report, prov);
  if (!report.bins_by_auc.empty()) {
    PlotSeries s;
    s.x_label = "mean_auc";
    s.y_label = "mean_test_error";
    for (const BinnedPoint& b : report.bins_by_auc) {
      s.x.push_back(b.mean_key);
      s.y.push_back(b.mean_value);
    }
    write_plot_series(joinp(cfg.out, "bins_by_auc.csv"), s, prov);
  }
  if (!report.bins_by_small_count.empty()) {
    PlotSeries s;
    s.x_label = "mean_small_margin_count";
    s.y_label = "mean_test_error";
    for (const BinnedPoint& b : report.bins_by_small_count) {
      s.x.push_back(b.mean_key);
      s.y.push_back(b.mean_value);
    }
    write_plot_series(joinp(cfg.out, "bins_by_small_count.csv"), s, prov);
  }
  write_jsonl(joinp(cfg.out, "events.jsonl"),
              {meta_event(hash),
               {{"type", "summary"},
                {"epoch", 0},
                {"payload",
                 {{"runs", report.rows.size()},
                  {"excluded", report.excluded.size()},
                  {"spearman_auc_test_error", report.spearman_auc_test_error},
                  {"bin_size", report.bin_size}}}}});
  return 0;
}

int run_label_compare_kind(const ExperimentConfig& cfg,
                           const std::string& prov, const std::string& hash) {
  Dataset train = build_train_set(cfg.data);
  Dataset test = build_test_set(cfg.data);
  Network probe = build_network(cfg);
  NormConvention conv = resolve_convention(cfg.arch.convention, probe);

  LabelCompareConfig lc;
  lc.fraction = cfg.label_compare.fraction;
  lc.label_seed = cfg.label_compare.label_seed;
  lc.settling_epochs = cfg.label_compare.settling_epochs;
  lc.hist_k = cfg.label_compare.hist_k;
  lc.hist_bins = cfg.label_compare.hist_bins;
  LabelCompareReport report =
      label_comparison_study(cfg.arch.layers, cfg.arch.init_std, cfg.seed,
                             train, test, cfg.train, conv, lc);

  write_trajectory_csv(joinp(cfg.out, "natural_trajectory.csv"),
                       report.natural, prov);
  write_trajectory_csv(joinp(cfg.out, "randomized_trajectory.csv"),
                       report.randomized, prov);
  if (!report.natural_final.empty()) {
    write_margin_snapshot_csv(joinp(cfg.out, "natural_margins.csv"),
                              by_global_index(report.natural_final), prov);
  }
  if (!report.randomized_final.empty()) {
    write_margin_snapshot_csv(joinp(cfg.out, "randomized_margins.csv"),
                              by_global_index(report.randomized_final), prov);
  }
  auto hist_series = [&](const std::vector<std::size_t>& hist,
                         const std::string& name) {
    if (hist.empty()) return;
    PlotSeries s;
    s.x_label = "bin";
    s.y_label = "count";
    for (std::size_t i = 0; i < hist.size(); ++i) {
      s.x.push_back(static_cast<double>(i));
      s.y.push_back(static_cast<double>(hist[i]));
    }
    write_plot_series(joinp(cfg.out, name), s, prov);
  };
  hist_series(report.natural_hist, "natural_hist.csv");
  hist_series(report.randomized_hist, "randomized_hist.csv");

  json payload = {{"gamma", report.gamma},
                  {"natural_separated", report.natural_separated},
                  {"randomized_separated", report.randomized_separated}};
  if (report.natural_separated) {
    payload["natural_auc"] = report.natural_auc;
    payload["natural_min_margin"] = report.natural_final.min();
  }
  if (report.randomized_separated) {
    payload["randomized_auc"] = report.randomized_auc;
    payload["randomized_min_margin"] = report.randomized_final.min();
  }
  write_jsonl(joinp(cfg.out, "events.jsonl"),
              {meta_event(hash),
               {{"type", "summary"}, {"epoch", 0}, {"payload", payload}}});

  if (report.natural.aborted || report.randomized.aborted) {
    write_failed_marker(cfg.out, report.natural.aborted
                                     ? report.natural.abort_reason
                                     : report.randomized.abort_reason);
    return 1;
  }
  return 0;
}

int run_margins_report_kind(const ExperimentConfig& cfg,
                            const std::string& prov,
                            const std::string& hash) {
  Network net = load_checkpoint(cfg.margins.checkpoint);
  Dataset train = build_train_set(cfg.data);
  NormConvention conv = resolve_convention(cfg.arch.convention, net);
  MarginDistribution dist = dataset_margins(net, train, conv);

  write_margin_snapshot_csv(joinp(cfg.out, "margins.csv"),
                            by_global_index(dist), prov);

  PlotSeries ranked;
  ranked.x_label = "rank";
  ranked.y_label = "normalized_margin";
  for (std::size_t i = 0; i < dist.size(); ++i) {
    ranked.x.push_back(static_cast<double>(i + 1));
    ranked.y.push_back(dist.records[i].normalized_margin);
  }
  write_plot_series(joinp(cfg.out, "ranked_margins.csv"), ranked, prov);

  PlotSeries per_class;
  per_class.x_label = "rank";
  per_class.y_label = "normalized_margin";
  per_class.group_label = "class";
  for (const auto& [label, d] : per_class_distributions(net, train, conv)) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      per_class.x.push_back(static_cast<double>(i + 1));
      per_class.y.push_back(d.records[i].normalized_margin);
      per_class.group.push_back("class_" + std::to_string(label));
    }
  }
  write_plot_series(joinp(cfg.out, "per_class_margins.csv"), per_class, prov);

  write_jsonl(joinp(cfg.out, "events.jsonl"),
              {meta_event(hash),
               {{"type", "summary"},
                {"epoch", 0},
                {"payload",
                 {{"examples", dist.size()},
                  {"min_margin", dist.min()},
                  {"auc_gamma", auc(dist, cfg.train.gamma)},
                  {"gamma", cfg.train.gamma}}}}});
  return 0;
}

}  // namespace

int run_experiment(const ExperimentConfig& cfg, bool overwrite) {
  cfg.validate();
  prepare_out_dir(cfg.out, overwrite);
  const std::string hash = config_hash_hex(cfg);
  const std::string prov = provenance_line(hash);
  write_text_file(joinp(cfg.out, "config.ini"), prov + "\n" + dump_config(cfg));
  try {
    switch (cfg.kind) {
      case ExperimentKind::train:
        return run_train_kind(cfg, prov, hash);
      case ExperimentKind::compress_continuous:
      case ExperimentKind::compress_immediate:
        return run_compress_kind(cfg, prov, hash);
      case ExperimentKind::replace_one:
        return run_replace_one_kind(cfg, prov, hash);
      case ExperimentKind::ensemble:
        return run_ensemble_kind(cfg, prov, hash);
      case ExperimentKind::label_compare:
        return run_label_compare_kind(cfg, prov, hash);
      case ExperimentKind::margins_report:
        return run_margins_report_kind(cfg, prov, hash);
    }
    throw ValidationError("unrepresentable experiment kind");
  } catch (const NumericError& err) {
    write_failed_marker(cfg.out, err.what());
    return 1;
  }
}

namespace {

std::map<std::size_t, std::string> snapshot_files(const std::string& dir) {
  std::map<std::size_t, std::string> found;
  const std::string prefix = "margins_epoch_";
  const std::string suffix = ".csv";
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.size() <= prefix.size() + suffix.size()) continue;
    if (name.compare(0, prefix.size(), prefix) != 0) continue;
    if (name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
      continue;
    const std::string digits =
        name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
    std::size_t epoch = 0;
    auto [p, parse_ec] =
        std::from_chars(digits.data(), digits.data() + digits.size(), epoch);
    if (parse_ec != std::errc() || p != digits.data() + digits.size())
      continue;
    found[epoch] = entry.path().string();
  }
  return found;
}

MarginSnapshot pick_snapshot(const std::string& dir,
                             std::optional<std::size_t> epoch) {
  auto files = snapshot_files(dir);
  if (files.empty())
    throw ValidationError("no margin snapshots found in '" + dir + "'");
  if (!epoch) return read_margin_snapshot_csv(files.rbegin()->second);
  auto it = files.find(*epoch);
  if (it == files.end()) {
    std::string avail;
    for (const auto& [e, path] : files) {
      if (!avail.empty()) avail += ", ";
      avail += std::to_string(e);
    }
    throw ValidationError("no margin snapshot at epoch " +
                          std::to_string(*epoch) + " (available: " + avail +
                          ")");
  }
  return read_margin_snapshot_csv(it->second);
}

std::vector<MarginRecord> by_margin(const MarginSnapshot& snap) {
  std::vector<MarginRecord> records = snap.records;
  std::sort(records.begin(), records.end(),
            [](const MarginRecord& a, const MarginRecord& b) {
              if (a.normalized_margin != b.normalized_margin)
                return a.normalized_margin < b.normalized_margin;
              return a.global_index < b.global_index;
            });
  return records;
}

}  // namespace

int run_plot(const PlotRequest& req) {
  ExperimentConfig cfg = load_config(joinp(req.run_dir, "config.ini"));
  const std::string prov = provenance_line(config_hash_hex(cfg));
  const std::string plots = joinp(req.run_dir, "plots");
  std::error_code ec;
  fs::create_directories(plots, ec);
  if (ec)
    throw ValidationError("cannot create '" + plots + "': " + ec.message());

  if (req.figure == "trajectory") {
    auto rows = read_trajectory_csv(joinp(req.run_dir, "trajectory.csv"));
    PlotSeries s;
    s.x_label = "epoch";
    s.y_label = "value";
    s.group_label = "series";
    auto add = [&](double x, double y, const char* g) {
      s.x.push_back(x);
      s.y.push_back(y);
      s.group.push_back(g);
    };
    for (const TrajectoryRow& r : rows) {
      const double e = static_cast<double>(r.epoch);
      add(e, r.train_error, "train_error");
      add(e, r.test_error, "test_error");
      add(e, r.auc_gamma, "auc_gamma");
    }
    write_plot_series(joinp(plots, "trajectory_curves.csv"), s, prov);
    return 0;
  }

  if (req.figure == "ranked" || req.figure == "per-class") {
    MarginSnapshot snap = pick_snapshot(req.run_dir, req.epoch);
    const std::string tag = "_epoch_" + std::to_string(snap.epoch) + ".csv";
    if (req.figure == "ranked") {
      PlotSeries s;
      s.x_label = "rank";
      s.y_label = "normalized_margin";
      std::size_t rank = 0;
      for (const MarginRecord& r : by_margin(snap)) {
        s.x.push_back(static_cast<double>(++rank));
        s.y.push_back(r.normalized_margin);
      }
      write_plot_series(joinp(plots, "ranked" + tag), s, prov);
    } else {
      std::map<std::uint32_t, std::vector<double>> classes;
      for (const MarginRecord& r : by_margin(snap))
        classes[r.label].push_back(r.normalized_margin);
      PlotSeries s;
      s.x_label = "rank";
      s.y_label = "normalized_margin";
      s.group_label = "class";
      for (const auto& [label, margins] : classes) {
        for (std::size_t i = 0; i < margins.size(); ++i) {
          s.x.push_back(static_cast<double>(i + 1));
          s.y.push_back(margins[i]);
          s.group.push_back("class_" + std::to_string(label));
        }
      }
      write_plot_series(joinp(plots, "per_class" + tag), s, prov);
    }
    return 0;
  }

  if (req.figure == "tracks" || req.figure == "persistence") {
    auto files = snapshot_files(req.run_dir);
    if (files.size() < 2)
      throw ValidationError(
          "figure '" + req.figure +
          "' needs at least two margin snapshots (enable snapshot_margins)");
    std::vector<MarginSnapshot> snaps;
    for (const auto& [epoch, path] : files)
      snaps.push_back(read_margin_snapshot_csv(path));

    if (req.figure == "persistence") {
      std::size_t min_n = snaps.front().records.size();
      for (const MarginSnapshot& s : snaps)
        min_n = std::min(min_n, s.records.size());
      const std::size_t k = std::max<std::size_t>(
          1, std::min(req.group_k, min_n));
      PlotSeries s;
      s.x_label = "epoch";
      s.y_label = "persistence";
      for (const auto& [epoch, fraction] : support_persistence(snaps, k)) {
        s.x.push_back(static_cast<double>(epoch));
        s.y.push_back(fraction);
      }
      write_plot_series(joinp(plots, "persistence.csv"), s, prov);
      return 0;
    }

    const std::vector<MarginRecord> final_sorted = by_margin(snaps.back());
    const std::size_t n = final_sorted.size();
    const std::size_t k =
        std::max<std::size_t>(1, std::min(req.group_k, n / 3));
    struct Group {
      const char* name;
      std::size_t start;
    };
    const Group groups[] = {{"smallest", 0},
                            {"middle", (n - k) / 2},
                            {"largest", n - k}};
    for (const Group& g : groups) {
      PlotSeries s;
      s.x_label = "epoch";
      s.y_label = "normalized_margin";
      s.group_label = "example";
      for (const MarginSnapshot& snap : snaps) {
        for (std::size_t i = 0; i < k; ++i) {
          const std::size_t gi = final_sorted[g.start + i].global_index;
          // records are stored by ascending global index
          auto it = std::lower_bound(
              snap.records.begin(), snap.records.end(), gi,
              [](const MarginRecord& r, std::size_t v) {
                return r.global_index < v;
              });
          if (it == snap.records.end() || it->global_index != gi) continue;
          s.x.push_back(static_cast<double>(snap.epoch));
          s.y.push_back(it->normalized_margin);
          s.group.push_back(std::to_string(gi));
        }
      }
      write_plot_series(joinp(plots, std::string("tracks_") + g.name + ".csv"),
                        s, prov);
    }
    return 0;
  }

  throw ValidationError(
      "unknown figure '" + req.figure +
      "' (expected ranked, per-class, trajectory, tracks, or persistence)");
}

}  // namespace marginlab

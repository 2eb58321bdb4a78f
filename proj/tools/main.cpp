// Command-line front end: one subcommand per experiment kind plus `plot`
// for post-hoc figure data.

#include <cstdio>
#include <exception>
#include <initializer_list>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "marginlab/config.hpp"
#include "marginlab/errors.hpp"
#include "marginlab/runner.hpp"
#include "marginlab/version.hpp"

namespace {

using namespace marginlab;

struct CommonOpts {
  std::string config_path;
  std::string out;
  bool overwrite = false;
  std::optional<std::size_t> threads;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, CommonOpts& o) {
  sub->add_option("-c,--config", o.config_path, "experiment config (INI)")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("-o,--out", o.out, "output directory (overrides the config)");
  sub->add_flag("--overwrite", o.overwrite,
                "reuse a nonempty output directory");
  sub->add_option("--threads", o.threads,
                  "worker threads for independent trials/runs");
  sub->add_option("--seed", o.seed, "root seed (overrides the config)");
}

int run_with(const CommonOpts& o,
             std::initializer_list<ExperimentKind> allowed,
             const char* sub_name) {
  ExperimentConfig cfg = load_config(o.config_path);
  bool kind_ok = false;
  for (ExperimentKind k : allowed) kind_ok = kind_ok || cfg.kind == k;
  if (!kind_ok)
    throw ValidationError("config kind '" + kind_name(cfg.kind) +
                          "' does not match subcommand '" + sub_name + "'");
  if (!o.out.empty()) cfg.out = o.out;
  if (o.threads) cfg.threads = *o.threads;
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.train.seed = *o.seed;
  }
  cfg.validate();
  return run_experiment(cfg, o.overwrite);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"margin-distribution training laboratory"};
  app.set_version_flag("--version", std::string(marginlab::kVersion));
  app.require_subcommand(1);

  CommonOpts train_o, compress_o, replace_o, ensemble_o, label_o, margins_o;
  CLI::App* sub_train = app.add_subcommand(
      "train", "train one network and record its margin trajectory");
  add_common(sub_train, train_o);
  CLI::App* sub_compress = app.add_subcommand(
      "compress", "train while shrinking the training set by margin rank");
  add_common(sub_compress, compress_o);
  CLI::App* sub_replace = app.add_subcommand(
      "replace-one", "single-point replacement stability study");
  add_common(sub_replace, replace_o);
  CLI::App* sub_ensemble = app.add_subcommand(
      "ensemble", "relate margin statistics to test error across seeds");
  add_common(sub_ensemble, ensemble_o);
  CLI::App* sub_label = app.add_subcommand(
      "label-compare", "natural vs randomized-label margin comparison");
  add_common(sub_label, label_o);
  CLI::App* sub_margins = app.add_subcommand(
      "margins", "margin report for a saved checkpoint");
  add_common(sub_margins, margins_o);

  PlotRequest plot_req;
  CLI::App* sub_plot = app.add_subcommand(
      "plot", "emit plot-ready csv series from a finished run");
  sub_plot->add_option("-r,--run", plot_req.run_dir, "run directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  sub_plot
      ->add_option("-f,--figure", plot_req.figure,
                   "ranked | per-class | trajectory | tracks | persistence")
      ->required();
  sub_plot->add_option("--epoch", plot_req.epoch,
                       "snapshot epoch (default: the latest one)");
  sub_plot->add_option("-k,--group-k", plot_req.group_k,
                       "group size for tracks/persistence");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sub_train->parsed())
      return run_with(train_o, {ExperimentKind::train}, "train");
    if (sub_compress->parsed())
      return run_with(compress_o,
                      {ExperimentKind::compress_continuous,
                       ExperimentKind::compress_immediate},
                      "compress");
    if (sub_replace->parsed())
      return run_with(replace_o, {ExperimentKind::replace_one}, "replace-one");
    if (sub_ensemble->parsed())
      return run_with(ensemble_o, {ExperimentKind::ensemble}, "ensemble");
    if (sub_label->parsed())
      return run_with(label_o, {ExperimentKind::label_compare},
                      "label-compare");
    if (sub_margins->parsed())
      return run_with(margins_o, {ExperimentKind::margins_report}, "margins");
    if (sub_plot->parsed()) return marginlab::run_plot(plot_req);
  } catch (const marginlab::ParseError& err) {
    std::fprintf(stderr, "error: %s (at %ld)\n", err.what(), err.where());
    return 2;
  } catch (const marginlab::NumericError& err) {
    std::fprintf(stderr, "numeric failure: %s\n", err.what());
    return 1;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 2;
  }
  return 0;
}

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "knnmt/error.hpp"
#include "knnmt/harness/commands.hpp"

namespace {

using namespace knnmt;
using namespace knnmt::harness;

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "knnmt-out";
};

ExperimentConfig resolve_config(const CommonOptions& opts) {
  ExperimentConfig config = opts.config_path.empty() ? ExperimentConfig{} : load_config(opts.config_path);
  if (opts.seed) config.seed = *opts.seed;
  config.validate();
  return config;
}

void print_metrics(const std::vector<EvalMetrics>& rows) {
  std::cout << eval_csv(rows);
}

void print_rows(const std::vector<PruneRow>& rows) {
  for (const auto& r : rows) {
    std::cout << r.label << " size=" << r.datastore_size;
    for (double a : r.accuracy) std::cout << " " << format_double(a);
    if (!r.error.empty()) std::cout << " error=" << r.error;
    std::cout << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Confidence-aware kNN-MT experiments on a synthetic domain-shift task"};
  app.require_subcommand(1);

  CommonOptions opts;
  std::string variant = "robust";
  std::string mode = "conf-top";
  std::string datastore;

  auto add_common = [&opts](CLI::App* cmd) {
    cmd->add_option("--config", opts.config_path, "Configuration file (key = value lines)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", opts.seed, "Override the experiment seed");
    cmd->add_option("--out", opts.out, "Workspace directory")->capture_default_str();
  };

  auto* gen = app.add_subcommand("gen-data", "Sample the general and in-domain corpora");
  auto* base = app.add_subcommand("train-base", "Train the base transducer on the general domain");
  auto* build = app.add_subcommand("build-datastore", "Build the datastore from the in-domain train split");
  auto* tune = app.add_subcommand("tune-vanilla", "Grid-search the vanilla head's lambda and temperature on dev");
  auto* train = app.add_subcommand("train-head", "Train a kNN head on the dev split");
  auto* eval = app.add_subcommand("evaluate", "Evaluate a head on the test split");
  auto* prune = app.add_subcommand("prune-study", "Evaluate trained heads on pruned datastores");
  auto* prelim = app.add_subcommand("prelim-study", "Remove confidence-rank intervals of the datastore");
  auto* lambda = app.add_subcommand("lambda-analysis", "Mean lambda per confidence bin, retrieved vs missed");
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the ablated robust heads");
  auto* pipeline = app.add_subcommand("pipeline", "gen-data through evaluate for every configured variant");

  for (auto* cmd : {gen, base, build, tune, train, eval, prune, prelim, lambda, ablate, pipeline}) add_common(cmd);
  for (auto* cmd : {train, eval, lambda}) {
    cmd->add_option("--variant", variant, "base, vanilla, adaptive or robust")->capture_default_str();
  }
  eval->add_option("--datastore", datastore, "Evaluate against this datastore instead of the workspace's");
  prune->add_option("--mode", mode, "random or conf-top")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  std::string current = app.get_subcommands().front()->get_name();
  try {
    const ExperimentConfig config = resolve_config(opts);
    const Workspace ws{opts.out};
    if (*gen) {
      cmd_gen_data(config, ws);
    } else if (*base) {
      cmd_train_base(config, ws);
    } else if (*build) {
      cmd_build_datastore(config, ws);
    } else if (*tune) {
      const TuneResult r = cmd_tune_vanilla(config, ws);
      std::cout << "lambda=" << format_double(r.lambda) << " temperature=" << format_double(r.temperature)
                << " dev_accuracy=" << format_double(r.accuracy) << "\n";
    } else if (*train) {
      const TrainReport r = cmd_train_head(config, ws, parse_variant(variant));
      if (!r.intervals.empty()) {
        std::cout << "final interval loss=" << format_double(r.intervals.back().mean_loss) << "\n";
      }
    } else if (*eval) {
      std::optional<std::filesystem::path> ds;
      if (!datastore.empty()) ds = datastore;
      print_metrics(cmd_evaluate(config, ws, {variant}, ds, "eval_" + variant));
    } else if (*prune) {
      print_rows(cmd_prune_study(config, ws, parse_prune_mode(mode)));
    } else if (*prelim) {
      print_rows(cmd_prelim_study(config, ws));
    } else if (*lambda) {
      std::cout << lambda_csv(cmd_lambda_analysis(config, ws, parse_variant(variant)), variant);
    } else if (*ablate) {
      std::cout << ablation_csv(cmd_ablate(config, ws));
    } else if (*pipeline) {
      print_metrics(cmd_pipeline(config, ws));
    }
  } catch (const StageError& e) {
    std::cerr << "knnmt: stage " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "knnmt: stage " << current << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}

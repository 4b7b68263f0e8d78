#include "knnmt/harness/commands.hpp"

#include <exception>
#include <utility>

#include "knnmt/error.hpp"

namespace knnmt::harness {

namespace {

template <class F>
auto stage(std::string_view name, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(std::string(name), e.what());
  }
}

const std::filesystem::path& require(const std::filesystem::path& path, std::string_view what) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorKind::io, "missing " + std::string(what) + " " + path.string() + " (run the earlier stage first)");
  }
  return path;
}

Corpus load_split(const Workspace& ws, std::string_view name) {
  return load_corpus(require(ws.corpus(name), "corpus"));
}

BaseModelParams load_model(const Workspace& ws) {
  return load_base_model(require(ws.base_model(), "base model checkpoint"));
}

Datastore load_store(const ExperimentConfig& config, const std::filesystem::path& path) {
  return load_datastore(require(path, "datastore"), config.hidden_dim);
}

HeadParams load_variant_head(const Workspace& ws, Variant variant) {
  return load_head(require(ws.head(to_string(variant)), "head checkpoint"));
}

double final_loss(const TrainReport& report) {
  return report.intervals.empty() ? 0.0 : report.intervals.back().mean_loss;
}

}  // namespace

std::filesystem::path Workspace::corpus(std::string_view name) const {
  return root / "data" / (std::string(name) + ".txt");
}

std::filesystem::path Workspace::head(std::string_view variant) const {
  return root / "heads" / (std::string(variant) + ".knhd");
}

void cmd_gen_data(const ExperimentConfig& config, const Workspace& ws) {
  stage("gen-data", [&] {
    const ExperimentData data = generate_data(config);
    write_file_atomic(ws.config(), render_config(config));
    save_corpus(data.general_train, ws.corpus("general_train"));
    save_corpus(data.general_heldout, ws.corpus("general_heldout"));
    save_corpus(data.train, ws.corpus("train"));
    save_corpus(data.dev, ws.corpus("dev"));
    save_corpus(data.test, ws.corpus("test"));
  });
}

void cmd_train_base(const ExperimentConfig& config, const Workspace& ws) {
  stage("train-base", [&] {
    const Corpus general = load_split(ws, "general_train");
    BaseTrainReport report;
    const BaseModelParams model = train_base_model(config, general, &report);
    save_base_model(model, ws.base_model());
    const double heldout = teacher_forced_accuracy(model, load_split(ws, "general_heldout"));
    const double in_domain = teacher_forced_accuracy(model, load_split(ws, "dev"));
    write_file_atomic(ws.report("base_train.txt"), base_train_report(report, heldout, in_domain));
  });
}

void cmd_build_datastore(const ExperimentConfig& config, const Workspace& ws) {
  stage("build-datastore", [&] {
    config.validate();
    const Datastore ds = build_datastore(load_model(ws), load_split(ws, "train"));
    save_datastore(ds, ws.datastore());
  });
}

TuneResult cmd_tune_vanilla(const ExperimentConfig& config, const Workspace& ws) {
  return stage("tune-vanilla", [&] {
    const BaseModelParams model = load_model(ws);
    const Datastore ds = load_store(config, ws.datastore());
    const Corpus dev = load_split(ws, "dev");
    const RetrievalCache cache = make_cache(model, ds, dev, config.k, config.distance_mode());
    TuneResult result = tune_vanilla(cache, config.lambda_grid, config.temperature_grid);
    write_file_atomic(ws.report("tune_vanilla.json"), tune_json(result));
    save_head(make_vanilla_head(config, result.lambda, result.temperature), ws.head("vanilla"));
    return result;
  });
}

TrainReport cmd_train_head(const ExperimentConfig& config, const Workspace& ws, Variant variant) {
  if (variant == Variant::vanilla) {
    cmd_tune_vanilla(config, ws);
    return {};
  }
  return stage("train-head", [&] {
    const BaseModelParams model = load_model(ws);
    const Datastore ds = load_store(config, ws.datastore());
    const Corpus dev = load_split(ws, "dev");
    if (ds.size() < config.k) {
      throw Error(ErrorKind::invalid_argument, "datastore has " + std::to_string(ds.size()) +
                                                   " entries, fewer than K=" + std::to_string(config.k));
    }
    const RetrievalCache cache = make_cache(model, ds, dev, config.k, config.distance_mode());
    TrainResult result = train_recipe(config, default_recipe(config, variant), cache);
    const auto path = ws.head(to_string(variant));
    save_head(result.params, path);
    const std::string name = std::string(to_string(variant));
    write_file_atomic(ws.report("train_" + name + ".txt"),
                      head_train_report(result.report, name, std::filesystem::relative(path, ws.root).string()));
    return std::move(result.report);
  });
}

std::vector<EvalMetrics> cmd_evaluate(const ExperimentConfig& config, const Workspace& ws,
                                      const std::vector<std::string>& variants,
                                      const std::optional<std::filesystem::path>& datastore,
                                      std::string_view stem) {
  return stage("evaluate", [&] {
    const BaseModelParams model = load_model(ws);
    const Datastore ds = load_store(config, datastore.value_or(ws.datastore()));
    const Corpus test = load_split(ws, "test");
    const RetrievalCache cache = make_cache(model, ds, test, config.k, config.distance_mode());
    std::vector<EvalMetrics> rows;
    for (const auto& name : variants) {
      if (name == "base") {
        rows.push_back(evaluate(cache, nullptr, name));
      } else {
        const HeadParams head = load_variant_head(ws, parse_variant(name));
        rows.push_back(evaluate(cache, &head, name));
      }
    }
    write_file_atomic(ws.report(std::string(stem) + ".csv"), eval_csv(rows));
    write_file_atomic(ws.report(std::string(stem) + ".json"), eval_json(rows));
    return rows;
  });
}

std::vector<PruneRow> cmd_prune_study(const ExperimentConfig& config, const Workspace& ws, PruneMode mode) {
  return stage("prune-study", [&] {
    const BaseModelParams model = load_model(ws);
    const Datastore ds = load_store(config, ws.datastore());
    const Corpus test = load_split(ws, "test");
    const HeadParams adaptive = load_variant_head(ws, Variant::adaptive);
    const HeadParams robust = load_variant_head(ws, Variant::robust);
    auto rows = prune_study(config, model, ds, test, {&adaptive, &robust}, mode);
    const std::string name = std::string(to_string(mode));
    write_file_atomic(ws.report("prune_" + name + ".csv"), prune_csv(rows, {"adaptive", "robust"}, name));
    return rows;
  });
}

std::vector<PruneRow> cmd_prelim_study(const ExperimentConfig& config, const Workspace& ws) {
  return stage("prelim-study", [&] {
    const BaseModelParams model = load_model(ws);
    const Datastore ds = load_store(config, ws.datastore());
    const Corpus test = load_split(ws, "test");
    const HeadParams vanilla = load_variant_head(ws, Variant::vanilla);
    const HeadParams adaptive = load_variant_head(ws, Variant::adaptive);
    auto rows = prelim_study(config, model, ds, test, {&vanilla, &adaptive});
    write_file_atomic(ws.report("prelim.csv"), prune_csv(rows, {"vanilla", "adaptive"}, "prelim"));
    return rows;
  });
}

std::vector<LambdaBin> cmd_lambda_analysis(const ExperimentConfig& config, const Workspace& ws, Variant variant) {
  return stage("lambda-analysis", [&] {
    const BaseModelParams model = load_model(ws);
    const Datastore ds = load_store(config, ws.datastore());
    const Corpus test = load_split(ws, "test");
    const HeadParams head = load_variant_head(ws, variant);
    const RetrievalCache cache = make_cache(model, ds, test, config.k, config.distance_mode());
    auto bins = lambda_analysis(cache, head, config.confidence_bins);
    const std::string name = std::string(to_string(variant));
    write_file_atomic(ws.report("lambda_" + name + ".csv"), lambda_csv(bins, name));
    return bins;
  });
}

std::vector<AblationRow> cmd_ablate(const ExperimentConfig& config, const Workspace& ws) {
  return stage("ablate", [&] {
    const BaseModelParams model = load_model(ws);
    const Datastore ds = load_store(config, ws.datastore());
    const Corpus dev = load_split(ws, "dev");
    const Corpus test = load_split(ws, "test");
    const RetrievalCache dev_cache = make_cache(model, ds, dev, config.k, config.distance_mode());
    const RetrievalCache test_cache = make_cache(model, ds, test, config.k, config.distance_mode());
    const TuneResult tuned = tune_vanilla(dev_cache, config.lambda_grid, config.temperature_grid);

    std::vector<AblationRow> rows;
    for (const auto& recipe : ablation_recipes(config, tuned.lambda)) {
      const TrainResult trained = train_recipe(config, recipe, dev_cache);
      rows.push_back({recipe.name, evaluate(test_cache, &trained.params, recipe.name), final_loss(trained.report)});
    }
    write_file_atomic(ws.report("ablate.csv"), ablation_csv(rows));
    return rows;
  });
}

std::vector<EvalMetrics> cmd_pipeline(const ExperimentConfig& config, const Workspace& ws) {
  config.validate();
  cmd_gen_data(config, ws);
  cmd_train_base(config, ws);
  cmd_build_datastore(config, ws);
  cmd_tune_vanilla(config, ws);
  for (const auto& name : config.variants) {
    if (name == "base" || name == "vanilla") continue;
    const Variant variant = stage("train-head", [&] { return parse_variant(name); });
    cmd_train_head(config, ws, variant);
  }
  return cmd_evaluate(config, ws, config.variants);
}

}  // namespace knnmt::harness

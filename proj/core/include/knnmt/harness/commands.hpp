#pragma once

// File-backed experiment commands. Each command reads the artifacts of the
// earlier stages from a workspace directory and writes its own outputs there
// atomically:
//
//   config.conf                      effective configuration
//   data/{general_train,general_heldout,train,dev,test}.txt
//   models/base.knbm
//   datastore/train.knds (+ .manifest)
//   heads/{vanilla,adaptive,robust}.knhd
//   reports/*.csv, reports/*.json, reports/*.txt

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "knnmt/harness/config.hpp"
#include "knnmt/harness/evaluation.hpp"
#include "knnmt/harness/reports.hpp"

namespace knnmt::harness {

struct Workspace {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.conf"; }
  std::filesystem::path corpus(std::string_view name) const;
  std::filesystem::path base_model() const { return root / "models" / "base.knbm"; }
  std::filesystem::path datastore() const { return root / "datastore" / "train.knds"; }
  std::filesystem::path head(std::string_view variant) const;
  std::filesystem::path report(std::string_view file) const { return root / "reports" / file; }
};

// A failure inside a named stage; what() reads "<stage>: <cause>".
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& cause)
      : std::runtime_error(stage + ": " + cause), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

void cmd_gen_data(const ExperimentConfig& config, const Workspace& ws);
void cmd_train_base(const ExperimentConfig& config, const Workspace& ws);
void cmd_build_datastore(const ExperimentConfig& config, const Workspace& ws);
// Also writes the tuned vanilla head.
TuneResult cmd_tune_vanilla(const ExperimentConfig& config, const Workspace& ws);
// Vanilla has nothing to train and is produced by tuning.
TrainReport cmd_train_head(const ExperimentConfig& config, const Workspace& ws, Variant variant);
// `variants` may include "base". An explicit datastore replaces the
// workspace's own. Results go to reports/<stem>.csv and reports/<stem>.json.
std::vector<EvalMetrics> cmd_evaluate(const ExperimentConfig& config, const Workspace& ws,
                                      const std::vector<std::string>& variants,
                                      const std::optional<std::filesystem::path>& datastore = std::nullopt,
                                      std::string_view stem = "eval");
std::vector<PruneRow> cmd_prune_study(const ExperimentConfig& config, const Workspace& ws, PruneMode mode);
std::vector<PruneRow> cmd_prelim_study(const ExperimentConfig& config, const Workspace& ws);
std::vector<LambdaBin> cmd_lambda_analysis(const ExperimentConfig& config, const Workspace& ws, Variant variant);
std::vector<AblationRow> cmd_ablate(const ExperimentConfig& config, const Workspace& ws);
// gen-data, train-base, build-datastore, tune-vanilla, train-head for every
// requested head, evaluate.
std::vector<EvalMetrics> cmd_pipeline(const ExperimentConfig& config, const Workspace& ws);

}  // namespace knnmt::harness

#pragma once

// Deterministic text renderings of experiment results. Every CSV starts with a
// header row; the first column carries the schema tag and the last column an
// error marker (empty on success).

#include <string>
#include <string_view>
#include <vector>

#include "knnmt/basemodel.hpp"
#include "knnmt/harness/evaluation.hpp"
#include "knnmt/robusttrain.hpp"

namespace knnmt::harness {

// Shortest representation that round-trips.
std::string format_double(double v);

class CsvTable {
 public:
  CsvTable(std::string schema, std::vector<std::string> columns);

  // Throws ErrorKind::invalid_argument when the cell count differs from the
  // column count.
  void add_row(std::vector<std::string> cells, std::string_view error = {});
  std::string render() const;

 private:
  std::string schema_;
  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

std::string eval_csv(const std::vector<EvalMetrics>& rows);
std::string eval_json(const std::vector<EvalMetrics>& rows);
std::string tune_json(const TuneResult& result);
std::string prune_csv(const std::vector<PruneRow>& rows, const std::vector<std::string>& head_names,
                      std::string_view study);
std::string lambda_csv(const std::vector<LambdaBin>& bins, std::string_view variant);

struct AblationRow {
  std::string name;
  EvalMetrics metrics;
  double final_loss = 0.0;  // mean of the last training interval
};

std::string ablation_csv(const std::vector<AblationRow>& rows);

// "key = value" summaries.
std::string base_train_report(const BaseTrainReport& report, double heldout_accuracy, double in_domain_accuracy);
std::string head_train_report(const TrainReport& report, std::string_view variant, std::string_view checkpoint);

}  // namespace knnmt::harness

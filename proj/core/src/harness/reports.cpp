#include "knnmt/harness/reports.hpp"

#include <charconv>
#include <sstream>

#include <json.hpp>

#include "knnmt/error.hpp"

namespace knnmt::harness {

namespace {

using Json = nlohmann::ordered_json;

std::string csv_cell(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string count(std::size_t n) { return std::to_string(n); }

Json metrics_json(const EvalMetrics& m) {
  return Json{{"variant", m.variant},
              {"token_accuracy", m.token_accuracy},
              {"exact_match", m.exact_match},
              {"precision1", m.precision1},
              {"precision2", m.precision2},
              {"mean_lambda", m.mean_lambda},
              {"gold_retrieval_rate", m.gold_retrieval_rate},
              {"datastore_size", m.datastore_size},
              {"timesteps", m.timesteps},
              {"sentences", m.sentences}};
}

std::vector<std::string> metric_cells(const EvalMetrics& m) {
  return {format_double(m.token_accuracy), format_double(m.exact_match),  format_double(m.precision1),
          format_double(m.precision2),     format_double(m.mean_lambda),  format_double(m.gold_retrieval_rate),
          count(m.datastore_size),         count(m.timesteps)};
}

const std::vector<std::string> kMetricColumns{"token_accuracy", "exact_match",         "precision1",
                                              "precision2",     "mean_lambda",         "gold_retrieval_rate",
                                              "datastore_size", "timesteps"};

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

CsvTable::CsvTable(std::string schema, std::vector<std::string> columns)
    : schema_(std::move(schema)), columns_(std::move(columns)) {}

void CsvTable::add_row(std::vector<std::string> cells, std::string_view error) {
  if (cells.size() != columns_.size()) {
    throw Error(ErrorKind::invalid_argument, "csv row has " + std::to_string(cells.size()) + " cells, expected " +
                                                 std::to_string(columns_.size()));
  }
  cells.emplace_back(error);
  rows_.push_back(std::move(cells));
}

std::string CsvTable::render() const {
  std::string out = "schema";
  for (const auto& c : columns_) out += "," + csv_cell(c);
  out += ",error\n";
  for (const auto& row : rows_) {
    out += schema_;
    for (const auto& cell : row) out += "," + csv_cell(cell);
    out += "\n";
  }
  return out;
}

std::string eval_csv(const std::vector<EvalMetrics>& rows) {
  std::vector<std::string> columns{"variant"};
  columns.insert(columns.end(), kMetricColumns.begin(), kMetricColumns.end());
  CsvTable table("eval/1", columns);
  for (const auto& m : rows) {
    std::vector<std::string> cells{m.variant};
    for (auto& c : metric_cells(m)) cells.push_back(std::move(c));
    table.add_row(std::move(cells));
  }
  return table.render();
}

std::string eval_json(const std::vector<EvalMetrics>& rows) {
  Json doc{{"schema", "eval/1"}, {"variants", Json::array()}};
  for (const auto& m : rows) doc["variants"].push_back(metrics_json(m));
  return doc.dump(2) + "\n";
}

std::string tune_json(const TuneResult& result) {
  Json doc{{"schema", "tune-vanilla/1"},
           {"lambda", result.lambda},
           {"temperature", result.temperature},
           {"dev_accuracy", result.accuracy},
           {"grid", Json::array()}};
  for (const auto& cell : result.grid) {
    doc["grid"].push_back(
        Json{{"lambda", cell.lambda}, {"temperature", cell.temperature}, {"dev_accuracy", cell.accuracy}});
  }
  return doc.dump(2) + "\n";
}

std::string prune_csv(const std::vector<PruneRow>& rows, const std::vector<std::string>& head_names,
                      std::string_view study) {
  std::vector<std::string> columns{"study", "label", "fraction", "datastore_size"};
  for (const auto& name : head_names) columns.push_back(name + "_accuracy");
  CsvTable table("prune/1", columns);
  for (const auto& row : rows) {
    std::vector<std::string> cells{std::string(study), row.label, format_double(row.fraction),
                                   count(row.datastore_size)};
    for (std::size_t i = 0; i < head_names.size(); ++i) {
      cells.push_back(i < row.accuracy.size() ? format_double(row.accuracy[i]) : std::string());
    }
    table.add_row(std::move(cells), row.error);
  }
  return table.render();
}

std::string lambda_csv(const std::vector<LambdaBin>& bins, std::string_view variant) {
  CsvTable table("lambda/1", {"variant", "bucket", "conf_lo", "conf_hi", "count", "mean_lambda"});
  for (const auto& b : bins) {
    table.add_row({std::string(variant), b.retrieved ? "retrieved" : "missed", format_double(b.lo),
                   format_double(b.hi), count(b.count), b.mean_lambda ? format_double(*b.mean_lambda) : "NA"});
  }
  return table.render();
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::vector<std::string> columns{"ablation"};
  columns.insert(columns.end(), kMetricColumns.begin(), kMetricColumns.end());
  columns.push_back("final_train_loss");
  CsvTable table("ablate/1", columns);
  for (const auto& row : rows) {
    std::vector<std::string> cells{row.name};
    for (auto& c : metric_cells(row.metrics)) cells.push_back(std::move(c));
    cells.push_back(format_double(row.final_loss));
    table.add_row(std::move(cells));
  }
  return table.render();
}

std::string base_train_report(const BaseTrainReport& report, double heldout_accuracy, double in_domain_accuracy) {
  std::ostringstream out;
  out << "epochs = " << report.epoch_loss.size() << "\n";
  for (std::size_t e = 0; e < report.epoch_loss.size(); ++e) {
    out << "epoch." << e << ".loss = " << format_double(report.epoch_loss[e]) << "\n";
  }
  out << "general_heldout_accuracy = " << format_double(heldout_accuracy) << "\n";
  out << "in_domain_dev_accuracy = " << format_double(in_domain_accuracy) << "\n";
  return out.str();
}

std::string head_train_report(const TrainReport& report, std::string_view variant, std::string_view checkpoint) {
  std::ostringstream out;
  out << "variant = " << variant << "\n";
  out << "checkpoint = " << checkpoint << "\n";
  out << "steps = " << report.step_loss.size() << "\n";
  out << "key_noise_events = " << report.key_noise_total << "\n";
  out << "pseudo_pair_events = " << report.pseudo_pair_total << "\n";
  out << "# interval: first_step last_step alpha mean_loss key_noise pseudo_pair\n";
  for (const auto& iv : report.intervals) {
    out << "interval = " << iv.first_step << " " << iv.last_step << " " << format_double(iv.alpha) << " "
        << format_double(iv.mean_loss) << " " << iv.key_noise_events << " " << iv.pseudo_pair_events << "\n";
  }
  return out.str();
}

}  // namespace knnmt::harness

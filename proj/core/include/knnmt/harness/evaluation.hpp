#pragma once

// In-memory experiment stages: data generation, base training, head training,
// evaluation and the datastore studies. The commands layer wraps these with
// file I/O; tests call them directly.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "knnmt/basemodel.hpp"
#include "knnmt/datastore.hpp"
#include "knnmt/harness/config.hpp"
#include "knnmt/knnhead.hpp"
#include "knnmt/robusttrain.hpp"
#include "knnmt/toytask.hpp"

namespace knnmt::harness {

// Seed of the stream labelled `label` under the experiment seed.
std::uint64_t stage_seed(const ExperimentConfig& config, std::string_view label);

struct ExperimentData {
  DomainPair domains;
  Corpus general_train;
  Corpus general_heldout;
  Corpus train;  // in-domain, builds the datastore
  Corpus dev;    // in-domain, trains the heads
  Corpus test;   // in-domain, evaluation
};

ExperimentData generate_data(const ExperimentConfig& config);

BaseModelParams train_base_model(const ExperimentConfig& config, const Corpus& general_train,
                                 BaseTrainReport* report = nullptr);

// Teacher-forced records of a corpus with their K-NN retrievals against one
// datastore. Evaluating several heads against the same datastore reuses it.
struct RetrievalCache {
  const BaseModelParams* model = nullptr;
  const Datastore* datastore = nullptr;
  const Corpus* corpus = nullptr;
  std::size_t k = 0;
  DistanceMode mode = DistanceMode::euclidean;
  std::vector<TrainingExample> examples;
};

RetrievalCache make_cache(const BaseModelParams& model, const Datastore& ds, const Corpus& corpus, std::size_t k,
                          DistanceMode mode);

struct EvalMetrics {
  std::string variant;
  double token_accuracy = 0.0;
  double exact_match = 0.0;
  double precision1 = 0.0;
  double precision2 = 0.0;
  double mean_lambda = 0.0;
  double gold_retrieval_rate = 0.0;
  std::size_t datastore_size = 0;
  std::size_t timesteps = 0;
  std::size_t sentences = 0;
};

// A null head evaluates the base model alone (λ = 0).
EvalMetrics evaluate(const RetrievalCache& cache, const HeadParams* head, std::string variant,
                     bool greedy = true);

// Teacher-forced accuracy only; the quantity grid search and the studies rank by.
double teacher_forced_accuracy(const RetrievalCache& cache, const HeadParams* head);

// Corpus-level clipped n-gram precision of hypotheses against references.
double ngram_precision(const std::vector<Sequence>& hypotheses, const std::vector<Sequence>& references,
                       std::size_t n);

struct TuneCell {
  double lambda = 0.0;
  double temperature = 0.0;
  double accuracy = 0.0;
};

struct TuneResult {
  double lambda = 0.0;
  double temperature = 0.0;
  double accuracy = 0.0;
  std::vector<TuneCell> grid;  // lambda-major, in grid order
};

// Maximizes dev accuracy; ties go to the smaller λ, then the smaller T.
TuneResult tune_vanilla(const RetrievalCache& dev, std::span<const double> lambda_grid,
                        std::span<const double> temperature_grid);

HeadParams make_vanilla_head(const ExperimentConfig& config, double lambda, double temperature);

// Ablation switches applied on top of the variant's defaults.
struct HeadRecipe {
  std::string name;
  Variant variant = Variant::robust;
  HeadOptions options;
  bool key_noise = true;
  bool pseudo_pair = true;
  bool decay = true;
};

HeadRecipe default_recipe(const ExperimentConfig& config, Variant variant);

// The full robust model followed by the six ablations.
std::vector<HeadRecipe> ablation_recipes(const ExperimentConfig& config, double tuned_lambda);

// Every recipe starts from the same initialization and data order, so the
// ablations differ only in the switches they flip.
TrainResult train_recipe(const ExperimentConfig& config, const HeadRecipe& recipe, const RetrievalCache& dev);

struct PruneRow {
  std::string label;
  double fraction = 0.0;
  std::size_t datastore_size = 0;
  std::vector<double> accuracy;  // one per evaluated head
  std::string error;             // non-empty when the row could not be evaluated
};

enum class PruneMode { random, conf_top };

std::string_view to_string(PruneMode mode);
PruneMode parse_prune_mode(std::string_view name);

// Evaluates fixed heads on progressively pruned datastores; no retraining.
std::vector<PruneRow> prune_study(const ExperimentConfig& config, const BaseModelParams& model,
                                  const Datastore& ds, const Corpus& test,
                                  const std::vector<const HeadParams*>& heads, PruneMode mode);

// One row per confidence interval, then "All" (nothing removed) and the
// random-removal control.
std::vector<PruneRow> prelim_study(const ExperimentConfig& config, const BaseModelParams& model,
                                   const Datastore& ds, const Corpus& test,
                                   const std::vector<const HeadParams*>& heads);

struct LambdaBin {
  double lo = 0.0;
  double hi = 0.0;
  bool retrieved = false;
  std::size_t count = 0;
  std::optional<double> mean_lambda;
};

// Buckets test timesteps by the base model's probability of the reference
// token and by whether the reference was among the retrieved values. The last
// bin is closed on the right.
std::vector<LambdaBin> lambda_analysis(const RetrievalCache& test, const HeadParams& head,
                                       std::span<const double> bin_edges);

}  // namespace knnmt::harness

#include "knnmt/harness/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "knnmt/error.hpp"

namespace knnmt::harness {

namespace {

bool better_cell(const TuneCell& a, const TuneCell& b) {
  if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
  if (a.lambda != b.lambda) return a.lambda < b.lambda;
  return a.temperature < b.temperature;
}

std::string percent_label(double lo, double hi) {
  auto fmt = [](double v) {
    std::string s = std::to_string(v);
    s.erase(s.find_last_not_of('0') + 1);
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  };
  return "-[" + fmt(lo) + "%," + fmt(hi) + "%)";
}

PruneRow evaluate_row(const ExperimentConfig& config, const BaseModelParams& model, const Datastore& pruned,
                      const Corpus& test, const std::vector<const HeadParams*>& heads, std::string label,
                      double fraction) {
  PruneRow row;
  row.label = std::move(label);
  row.fraction = fraction;
  row.datastore_size = pruned.size();
  if (pruned.size() < config.k) {
    row.error = "datastore has " + std::to_string(pruned.size()) + " entries, fewer than K";
    return row;
  }
  const RetrievalCache cache = make_cache(model, pruned, test, config.k, config.distance_mode());
  for (const HeadParams* head : heads) row.accuracy.push_back(teacher_forced_accuracy(cache, head));
  return row;
}

}  // namespace

std::uint64_t stage_seed(const ExperimentConfig& config, std::string_view label) {
  return SeededRng(config.seed).child(label).seed();
}

ExperimentData generate_data(const ExperimentConfig& config) {
  config.validate();
  ExperimentData data;
  data.domains = generate_domain_pair(stage_seed(config, "domains"), config.source_vocab, config.target_vocab,
                                      config.shift_fraction);

  const Corpus general = sample_corpus(data.domains.general, config.general_sentences, config.min_length,
                                       config.max_length, stage_seed(config, "general-corpus"));
  const double heldout = config.general_heldout_fraction;
  auto general_split = split_corpus(general, {1.0 - heldout, 0.0, heldout});
  data.general_train = std::move(general_split.train);
  data.general_heldout = std::move(general_split.test);

  const std::size_t total = config.train_sentences + config.dev_sentences + config.test_sentences;
  const Corpus in_domain = sample_corpus(data.domains.in_domain, total, config.min_length, config.max_length,
                                         stage_seed(config, "in-domain-corpus"));
  const double n = static_cast<double>(total);
  auto split = split_corpus(in_domain, {config.train_sentences / n, config.dev_sentences / n,
                                        1.0 - config.train_sentences / n - config.dev_sentences / n});
  data.train = std::move(split.train);
  data.dev = std::move(split.dev);
  data.test = std::move(split.test);
  return data;
}

BaseModelParams train_base_model(const ExperimentConfig& config, const Corpus& general_train,
                                 BaseTrainReport* report) {
  BaseTrainOptions options;
  options.epochs = config.base_epochs;
  options.lr = config.base_lr;
  options.batch_size = config.base_batch_size;
  options.seed = stage_seed(config, "base-train");
  return train_base(init_base_params(config.base_dims(), stage_seed(config, "base-init")), general_train, options,
                    report);
}

RetrievalCache make_cache(const BaseModelParams& model, const Datastore& ds, const Corpus& corpus, std::size_t k,
                          DistanceMode mode) {
  RetrievalCache cache;
  cache.model = &model;
  cache.datastore = &ds;
  cache.corpus = &corpus;
  cache.k = k;
  cache.mode = mode;
  cache.examples = prepare_examples(model, ds, corpus, k, mode);
  return cache;
}

double teacher_forced_accuracy(const RetrievalCache& cache, const HeadParams* head) {
  if (cache.examples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& ex : cache.examples) {
    const std::size_t pred =
        head ? argmax(head_forward(*head, ex.record, ex.neighbors).p_final) : argmax(ex.record.probs);
    if (pred == ex.gold) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(cache.examples.size());
}

double ngram_precision(const std::vector<Sequence>& hypotheses, const std::vector<Sequence>& references,
                       std::size_t n) {
  if (hypotheses.size() != references.size()) {
    throw Error(ErrorKind::invalid_argument, "ngram_precision: hypothesis and reference counts differ");
  }
  if (n == 0) throw Error(ErrorKind::invalid_argument, "ngram_precision: n must be positive");
  auto counts = [n](const Sequence& s) {
    std::map<Sequence, std::size_t> c;
    for (std::size_t i = 0; i + n <= s.size(); ++i) ++c[Sequence(s.begin() + i, s.begin() + i + n)];
    return c;
  };
  std::size_t matched = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto ref = counts(references[i]);
    for (const auto& [gram, count] : counts(hypotheses[i])) {
      total += count;
      if (auto it = ref.find(gram); it != ref.end()) matched += std::min(count, it->second);
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
}

EvalMetrics evaluate(const RetrievalCache& cache, const HeadParams* head, std::string variant, bool greedy) {
  EvalMetrics m;
  m.variant = std::move(variant);
  m.datastore_size = cache.datastore->size();
  m.timesteps = cache.examples.size();
  m.sentences = cache.corpus->pairs.size();

  std::size_t correct = 0;
  std::size_t retrieved = 0;
  double lambda_sum = 0.0;
  for (const auto& ex : cache.examples) {
    const bool hit = std::any_of(ex.neighbors.begin(), ex.neighbors.end(),
                                 [&ex](const Neighbor& n) { return n.value == ex.gold; });
    if (hit) ++retrieved;
    if (head) {
      const InterpolationTrace trace = head_forward(*head, ex.record, ex.neighbors);
      lambda_sum += trace.lambda;
      if (argmax(trace.p_final) == ex.gold) ++correct;
    } else if (argmax(ex.record.probs) == ex.gold) {
      ++correct;
    }
  }
  if (!cache.examples.empty()) {
    const double n = static_cast<double>(cache.examples.size());
    m.token_accuracy = static_cast<double>(correct) / n;
    m.gold_retrieval_rate = static_cast<double>(retrieved) / n;
    m.mean_lambda = lambda_sum / n;
  }

  if (greedy && !cache.corpus->pairs.empty()) {
    StepHook hook;
    if (head) {
      hook = [&cache, head](const ForwardRecord& record) {
        const auto neighbors = knn_search(*cache.datastore, record.hidden, cache.k, cache.mode);
        return head_forward(*head, record, neighbors).p_final;
      };
    }
    std::vector<Sequence> hyps;
    std::vector<Sequence> refs;
    std::size_t exact = 0;
    for (const auto& pair : cache.corpus->pairs) {
      hyps.push_back(greedy_decode(*cache.model, pair.source, hook));
      refs.push_back(pair.target);
      if (hyps.back() == pair.target) ++exact;
    }
    m.exact_match = static_cast<double>(exact) / static_cast<double>(hyps.size());
    m.precision1 = ngram_precision(hyps, refs, 1);
    m.precision2 = ngram_precision(hyps, refs, 2);
  }
  return m;
}

TuneResult tune_vanilla(const RetrievalCache& dev, std::span<const double> lambda_grid,
                        std::span<const double> temperature_grid) {
  if (lambda_grid.empty() || temperature_grid.empty()) {
    throw Error(ErrorKind::invalid_argument, "tune_vanilla: grids must be non-empty");
  }
  TuneResult result;
  for (double lambda : lambda_grid) {
    for (double t : temperature_grid) {
      HeadOptions options;
      options.fixed_lambda = lambda;
      options.fixed_temperature = t;
      const HeadParams head(Variant::vanilla, HeadShape{dev.k}, options);
      result.grid.push_back({lambda, t, teacher_forced_accuracy(dev, &head)});
    }
  }
  const TuneCell best = *std::min_element(result.grid.begin(), result.grid.end(), better_cell);
  result.lambda = best.lambda;
  result.temperature = best.temperature;
  result.accuracy = best.accuracy;
  return result;
}

HeadParams make_vanilla_head(const ExperimentConfig& config, double lambda, double temperature) {
  HeadOptions options;
  options.shared_encoder = config.shared_encoder;
  options.fixed_lambda = lambda;
  options.fixed_temperature = temperature;
  return HeadParams(Variant::vanilla, config.head_shape(), options);
}

HeadRecipe default_recipe(const ExperimentConfig& config, Variant variant) {
  HeadRecipe r;
  r.name = std::string(to_string(variant));
  r.variant = variant;
  r.options.shared_encoder = config.shared_encoder;
  r.key_noise = r.pseudo_pair = variant == Variant::robust;
  return r;
}

std::vector<HeadRecipe> ablation_recipes(const ExperimentConfig& config, double tuned_lambda) {
  const HeadRecipe full = default_recipe(config, Variant::robust);
  std::vector<HeadRecipe> out;
  auto add = [&out, &full](std::string name) -> HeadRecipe& {
    out.push_back(full);
    out.back().name = std::move(name);
    return out.back();
  };
  add("full");
  HeadRecipe& no_wp = add("w/o WP network");
  no_wp.options.use_weight_prediction = false;
  no_wp.options.fixed_lambda = tuned_lambda;
  add("w/o DC network").options.use_calibration = false;
  add("w/o vector perturbation").key_noise = false;
  add("w/o pseudo pair perturbation").pseudo_pair = false;
  HeadRecipe& no_robust = add("w/o robust training");
  no_robust.key_noise = no_robust.pseudo_pair = false;
  add("w/o perturbation rate's decline").decay = false;
  return out;
}

TrainResult train_recipe(const ExperimentConfig& config, const HeadRecipe& recipe, const RetrievalCache& dev) {
  TrainConfig tc = config.train_config(recipe.variant);
  tc.key_noise = recipe.key_noise;
  tc.pseudo_pair = recipe.pseudo_pair;
  tc.decay = recipe.decay;
  tc.seed = stage_seed(config, "head-train");
  HeadParams init =
      init_head_params(recipe.variant, config.head_shape(), recipe.options, stage_seed(config, "head-init"));
  return train_head(std::move(init), dev.examples, tc);
}

std::string_view to_string(PruneMode mode) { return mode == PruneMode::random ? "random" : "conf-top"; }

PruneMode parse_prune_mode(std::string_view name) {
  if (name == "random") return PruneMode::random;
  if (name == "conf-top") return PruneMode::conf_top;
  throw Error(ErrorKind::invalid_argument, "unknown prune mode '" + std::string(name) + "'");
}

std::vector<PruneRow> prune_study(const ExperimentConfig& config, const BaseModelParams& model,
                                  const Datastore& ds, const Corpus& test,
                                  const std::vector<const HeadParams*>& heads, PruneMode mode) {
  std::vector<PruneRow> rows;
  for (double fraction : config.prune_fractions) {
    const Datastore pruned = mode == PruneMode::random
                                 ? prune_random(ds, fraction, stage_seed(config, "prune-random"))
                                 : prune_confidence_top(ds, fraction);
    std::string label = std::to_string(static_cast<long long>(std::llround(fraction * 100.0))) + "%";
    rows.push_back(evaluate_row(config, model, pruned, test, heads, std::move(label), fraction));
  }
  return rows;
}

std::vector<PruneRow> prelim_study(const ExperimentConfig& config, const BaseModelParams& model,
                                   const Datastore& ds, const Corpus& test,
                                   const std::vector<const HeadParams*>& heads) {
  std::vector<PruneRow> rows;
  for (const auto& [lo, hi] : config.prelim_intervals) {
    const std::string label = percent_label(lo, hi);
    try {
      const Datastore pruned = prune_confidence_interval(ds, lo, hi);
      rows.push_back(evaluate_row(config, model, pruned, test, heads, label, (hi - lo) / 100.0));
    } catch (const Error& e) {
      PruneRow row;
      row.label = label;
      row.fraction = (hi - lo) / 100.0;
      row.error = e.what();
      rows.push_back(std::move(row));
    }
  }
  rows.push_back(evaluate_row(config, model, ds, test, heads, "All", 0.0));
  const double fraction = config.prelim_random_fraction;
  rows.push_back(evaluate_row(config, model, prune_random(ds, fraction, stage_seed(config, "prelim-random")), test,
                              heads, "-Random " + std::to_string(std::llround(fraction * 100.0)) + "%", fraction));
  return rows;
}

std::vector<LambdaBin> lambda_analysis(const RetrievalCache& test, const HeadParams& head,
                                       std::span<const double> bin_edges) {
  if (bin_edges.size() < 2 || !std::is_sorted(bin_edges.begin(), bin_edges.end())) {
    throw Error(ErrorKind::invalid_argument, "lambda_analysis: need at least two ascending bin edges");
  }
  const std::size_t n_bins = bin_edges.size() - 1;
  std::vector<LambdaBin> bins;
  for (bool retrieved : {true, false}) {
    for (std::size_t b = 0; b < n_bins; ++b) bins.push_back({bin_edges[b], bin_edges[b + 1], retrieved, 0, {}});
  }
  std::vector<double> sums(bins.size(), 0.0);
  for (const auto& ex : test.examples) {
    const InterpolationTrace trace = head_forward(head, ex.record, ex.neighbors, ex.gold);
    const double conf = ex.record.probs[ex.gold];
    std::size_t b = 0;
    while (b + 1 < n_bins && conf >= bin_edges[b + 1]) ++b;
    if (conf < bin_edges.front() || conf > bin_edges.back()) continue;
    const std::size_t slot = (*trace.gold_retrieved ? 0 : n_bins) + b;
    ++bins[slot].count;
    sums[slot] += trace.lambda;
  }
  for (std::size_t i = 0; i < bins.size(); ++i) {
    if (bins[i].count > 0) bins[i].mean_lambda = sums[i] / static_cast<double>(bins[i].count);
  }
  return bins;
}

}  // namespace knnmt::harness

#include "knnmt/robusttrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "knnmt/error.hpp"

namespace knnmt {

void TrainConfig::validate() const {
  if (k < 1) throw Error(ErrorKind::invalid_argument, "train config: K must be >= 1");
  if (!(sigma >= 0.0)) throw Error(ErrorKind::invalid_argument, "train config: sigma must be >= 0");
  if (!(alpha0 >= 0.0 && alpha0 <= 1.0)) throw Error(ErrorKind::invalid_argument, "train config: alpha0 must lie in [0, 1]");
  if (!(beta > 0.0)) throw Error(ErrorKind::invalid_argument, "train config: beta must be > 0");
  if (!(lr >= 0.0)) throw Error(ErrorKind::invalid_argument, "train config: learning rate must be >= 0");
  if (batch_size < 1) throw Error(ErrorKind::invalid_argument, "train config: batch size must be >= 1");
  if (report_interval < 1) throw Error(ErrorKind::invalid_argument, "train config: report interval must be >= 1");
}

double alpha_schedule(std::size_t step, double alpha0, double beta) {
  return alpha0 * std::exp(-static_cast<double>(step) / beta);
}

bool perturb_keys(std::vector<Neighbor>& neighbors, std::span<const double> query, double alpha, double sigma,
                  SeededRng& rng, DistanceMode mode) {
  if (!(rng.uniform() < alpha)) return false;
  for (auto& n : neighbors) {
    for (double& x : n.key) x += sigma * rng.normal();
    n.distance = distance_between(query, n.key, mode);
  }
  std::sort(neighbors.begin(), neighbors.end(), neighbor_less);
  return true;
}

bool inject_pseudo_pair(std::vector<Neighbor>& neighbors, std::span<const double> query, Token gold,
                        double gold_prob, double alpha, double sigma, SeededRng& rng, DistanceMode mode) {
  const bool draw_hit = rng.uniform() < alpha;
  if (neighbors.empty()) return false;
  const bool retrieved =
      std::any_of(neighbors.begin(), neighbors.end(), [gold](const Neighbor& n) { return n.value == gold; });
  if (retrieved || !draw_hit) return false;

  Neighbor pseudo;
  pseudo.index = kPseudoIndex;
  pseudo.value = gold;
  pseudo.key_conf = gold_prob;
  pseudo.key.assign(query.begin(), query.end());
  for (double& x : pseudo.key) x += sigma * rng.normal();
  pseudo.distance = distance_between(query, pseudo.key, mode);

  neighbors.insert(std::upper_bound(neighbors.begin(), neighbors.end(), pseudo, neighbor_less), std::move(pseudo));
  neighbors.pop_back();
  return true;
}

double head_loss(const InterpolationTrace& trace, Token gold) {
  return -std::log(std::max(trace.p_final.at(gold), kProbabilityFloor));
}

std::vector<TrainingExample> prepare_examples(const BaseModelParams& model, const Datastore& ds,
                                              const Corpus& corpus, std::size_t k, DistanceMode mode) {
  std::vector<TrainingExample> out;
  out.reserve(corpus.token_count());
  for (const auto& pair : corpus.pairs) {
    auto records = teacher_forced_pass(model, pair);
    for (std::size_t t = 0; t < records.size(); ++t) {
      TrainingExample ex;
      ex.neighbors = knn_search(ds, records[t].hidden, k, mode);
      ex.record = std::move(records[t]);
      ex.gold = pair.target[t];
      out.push_back(std::move(ex));
    }
  }
  return out;
}

double batch_loss(const HeadParams& params, std::span<const TrainingExample> batch) {
  double loss = 0.0;
  for (const auto& ex : batch) loss += head_loss(head_forward(params, ex.record, ex.neighbors), ex.gold);
  return loss / static_cast<double>(batch.size());
}

HeadParams batch_gradient(const HeadParams& params, std::span<const TrainingExample> batch) {
  HeadParams grads(params.variant, params.shape, params.options);
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    head_backward(params, head_forward(params, ex.record, ex.neighbors), ex.gold, scale, grads);
  }
  return grads;
}

TrainResult train_head(HeadParams init, std::span<const TrainingExample> examples, const TrainConfig& config) {
  config.validate();
  if (examples.empty()) throw Error(ErrorKind::invalid_argument, "train_head: no training examples");
  if (init.variant != config.variant) {
    throw Error(ErrorKind::invalid_argument, "train_head: head variant differs from the training config");
  }
  for (const auto& ex : examples) {
    if (ex.neighbors.size() != config.k || init.shape.k != config.k) {
      throw Error(ErrorKind::invalid_argument, "train_head: every example needs exactly K neighbors");
    }
  }

  TrainResult result{std::move(init), {}};
  HeadParams& params = result.params;
  TrainReport& report = result.report;

  auto param_blocks = params.trainable_blocks();
  HeadParams grads(params.variant, params.shape, params.options);
  auto grad_blocks = grads.trainable_blocks();
  AdamState adam = make_adam_state(param_blocks);

  SeededRng root(config.seed);
  SeededRng shuffle_rng = root.child("shuffle");
  SeededRng noise_rng = root.child("key-noise");
  SeededRng pseudo_rng = root.child("pseudo-pair");

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();  // forces a shuffle before the first batch

  IntervalStats current;
  double interval_loss = 0.0;
  std::size_t interval_steps = 0;
  std::vector<Neighbor> neighbors;

  for (std::size_t step = 0; step < config.steps; ++step) {
    const double alpha = config.decay ? alpha_schedule(step, config.alpha0, config.beta) : config.alpha0;
    if (interval_steps == 0) {
      current = IntervalStats{};
      current.first_step = step;
      current.alpha = alpha;
    }
    for (auto& b : grad_blocks) std::fill(b.values.begin(), b.values.end(), 0.0);

    double loss = 0.0;
    const double scale = 1.0 / static_cast<double>(config.batch_size);
    for (std::size_t i = 0; i < config.batch_size; ++i) {
      if (cursor == order.size()) {
        for (std::size_t j = order.size(); j > 1; --j) std::swap(order[j - 1], order[shuffle_rng.uniform_index(j)]);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      const TrainingExample& ex = examples[idx];
      neighbors = ex.neighbors;
      if (config.key_noise && perturb_keys(neighbors, ex.record.hidden, alpha, config.sigma, noise_rng, config.distance)) {
        report.events.push_back({step, idx, PerturbationKind::key_noise, alpha});
        ++current.key_noise_events;
        ++report.key_noise_total;
      }
      if (config.pseudo_pair &&
          inject_pseudo_pair(neighbors, ex.record.hidden, ex.gold, ex.record.probs[ex.gold], alpha, config.sigma,
                             pseudo_rng, config.distance)) {
        report.events.push_back({step, idx, PerturbationKind::pseudo_pair, alpha});
        ++current.pseudo_pair_events;
        ++report.pseudo_pair_total;
      }
      const InterpolationTrace trace = head_forward(params, ex.record, neighbors);
      loss += head_loss(trace, ex.gold);
      head_backward(params, trace, ex.gold, scale, grads);
    }
    loss *= scale;
    if (!param_blocks.empty()) adam_step(param_blocks, grad_blocks, adam, config.lr);

    report.step_loss.push_back(loss);
    interval_loss += loss;
    ++interval_steps;
    if (interval_steps == config.report_interval || step + 1 == config.steps) {
      current.last_step = step;
      current.mean_loss = interval_loss / static_cast<double>(interval_steps);
      report.intervals.push_back(current);
      interval_loss = 0.0;
      interval_steps = 0;
    }
  }
  return result;
}

TrainResult train_head(HeadParams init, const BaseModelParams& model, const Datastore& ds, const Corpus& dev,
                       const TrainConfig& config) {
  config.validate();
  if (ds.size() < config.k) {
    throw Error(ErrorKind::invalid_argument, "train_head: datastore has " + std::to_string(ds.size()) +
                                                 " entries, fewer than K=" + std::to_string(config.k));
  }
  const auto examples = prepare_examples(model, ds, dev, config.k, config.distance);
  return train_head(std::move(init), examples, config);
}

GradCheckResult grad_check(const HeadParams& params, std::span<const TrainingExample> batch, double eps) {
  GradCheckResult result;
  HeadParams analytic = batch_gradient(params, batch);
  HeadParams probe = params;
  auto probe_blocks = probe.trainable_blocks();
  auto grad_blocks = analytic.trainable_blocks();

  for (std::size_t b = 0; b < probe_blocks.size(); ++b) {
    auto values = probe_blocks[b].values;
    const Vector original(values.begin(), values.end());
    auto loss_at = [&](std::span<const double> x) {
      std::copy(x.begin(), x.end(), values.begin());
      return batch_loss(probe, batch);
    };
    const Vector numeric = finite_diff_grad(loss_at, original, eps);
    std::copy(original.begin(), original.end(), values.begin());

    for (std::size_t i = 0; i < values.size(); ++i) {
      const double exact = grad_blocks[b].values[i];
      const double denom = std::max({std::abs(exact), std::abs(numeric[i]), kGradCheckFloor});
      const double rel = std::abs(exact - numeric[i]) / denom;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_block = probe_blocks[b].name;
      }
      ++result.checked;
    }
  }
  return result;
}

}  // namespace knnmt

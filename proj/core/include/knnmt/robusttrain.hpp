#pragma once

// Training of the kNN head on teacher-forced dev timesteps, with the two
// training-time perturbations of the retrieved set (Gaussian key noise and
// pseudo ground-truth pairs) applied at an exponentially decaying rate.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "knnmt/basemodel.hpp"
#include "knnmt/datastore.hpp"
#include "knnmt/knnhead.hpp"
#include "knnmt/mathcore.hpp"
#include "knnmt/toytask.hpp"

namespace knnmt {

struct TrainConfig {
  std::size_t k = 8;
  double alpha0 = 1.0;
  double beta = 1000.0;
  double sigma = 0.01;
  double lr = 3e-4;
  std::size_t batch_size = 32;
  std::size_t steps = 5000;
  std::uint64_t seed = 1;
  Variant variant = Variant::robust;
  bool key_noise = true;
  bool pseudo_pair = true;
  bool decay = true;
  DistanceMode distance = DistanceMode::euclidean;
  std::size_t report_interval = 100;

  // Throws ErrorKind::invalid_argument on out-of-range fields.
  void validate() const;
};

enum class PerturbationKind { key_noise, pseudo_pair };

struct PerturbationEvent {
  std::size_t step = 0;
  std::size_t timestep = 0;  // index into the training examples
  PerturbationKind kind = PerturbationKind::key_noise;
  double alpha = 0.0;
};

// alpha0 * exp(-step / beta).
double alpha_schedule(std::size_t step, double alpha0, double beta);

// With probability alpha (one uniform draw), adds N(0, sigma^2 I) to every
// retrieved key, recomputes distances to `query` and re-sorts. Values and
// key_conf are untouched. Returns whether noise was applied.
bool perturb_keys(std::vector<Neighbor>& neighbors, std::span<const double> query, double alpha, double sigma,
                  SeededRng& rng, DistanceMode mode = DistanceMode::euclidean);

// When `gold` is not among the retrieved values and a uniform draw falls below
// alpha, inserts the pair (query + eps, gold) with key_conf `gold_prob` at its
// sorted position and drops the farthest pair. The draw is taken on every call
// so the stream advances identically whether or not the pair applies.
bool inject_pseudo_pair(std::vector<Neighbor>& neighbors, std::span<const double> query, Token gold,
                        double gold_prob, double alpha, double sigma, SeededRng& rng,
                        DistanceMode mode = DistanceMode::euclidean);

// -log(max(p_final(gold), 1e-10)).
double head_loss(const InterpolationTrace& trace, Token gold);

// One teacher-forced timestep with its unperturbed retrieval.
struct TrainingExample {
  ForwardRecord record;
  std::vector<Neighbor> neighbors;
  Token gold = 0;
};

// Teacher-forced pass over `corpus` with K-NN retrieval at every position.
std::vector<TrainingExample> prepare_examples(const BaseModelParams& model, const Datastore& ds,
                                              const Corpus& corpus, std::size_t k,
                                              DistanceMode mode = DistanceMode::euclidean);

struct IntervalStats {
  std::size_t first_step = 0;
  std::size_t last_step = 0;
  double mean_loss = 0.0;
  double alpha = 0.0;  // at first_step
  std::size_t key_noise_events = 0;
  std::size_t pseudo_pair_events = 0;
};

struct TrainReport {
  std::vector<IntervalStats> intervals;
  std::vector<double> step_loss;  // mean batch loss per step
  std::vector<PerturbationEvent> events;
  std::size_t key_noise_total = 0;
  std::size_t pseudo_pair_total = 0;
};

struct TrainResult {
  HeadParams params;
  TrainReport report;
};

// Adam on the head parameters only; the base model and datastore are read-only.
// Throws ErrorKind::invalid_argument when the datastore holds fewer than K
// entries or there are no examples.
TrainResult train_head(HeadParams init, std::span<const TrainingExample> examples, const TrainConfig& config);
TrainResult train_head(HeadParams init, const BaseModelParams& model, const Datastore& ds, const Corpus& dev,
                       const TrainConfig& config);

// Mean head_loss over the batch, and its gradient w.r.t. the trainable blocks.
double batch_loss(const HeadParams& params, std::span<const TrainingExample> batch);
HeadParams batch_gradient(const HeadParams& params, std::span<const TrainingExample> batch);

inline constexpr double kGradCheckFloor = 1e-6;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;  // number of scalar parameters compared
  std::string worst_block;
};

// Compares batch_gradient against central finite differences (eps = 1e-5) on
// every trainable scalar. Relative error is |a - n| / max(|a|, |n|, floor);
// the floor sits at the round-off resolution of central differences with
// eps = 1e-5 on an O(1) loss, below which no gradient can be confirmed to 1e-4.
GradCheckResult grad_check(const HeadParams& params, std::span<const TrainingExample> batch, double eps = 1e-5);

}  // namespace knnmt

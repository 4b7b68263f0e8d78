#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "knnmt/datastore.hpp"
#include "knnmt/knnhead.hpp"
#include "knnmt/mathcore.hpp"
#include "knnmt/robusttrain.hpp"

namespace fixtures {

// Weight range of randomized heads; comparable to trained heads, and small
// enough that λ stays strictly inside (0, 1) in double precision.
inline constexpr double kFixtureScale = 0.3;

struct HeadCase {
  knnmt::HeadParams params;
  knnmt::ForwardRecord record;
  std::vector<knnmt::Neighbor> neighbors;
  knnmt::Token gold = 0;
};

inline void randomize(knnmt::HeadParams& params, knnmt::SeededRng& rng, double scale = 1.0) {
  for (auto& b : params.all_blocks()) {
    for (double& w : b.values) w = rng.uniform(-scale, scale);
  }
}

inline knnmt::ForwardRecord random_record(knnmt::SeededRng& rng, std::size_t vocab, std::size_t dim = 4) {
  knnmt::ForwardRecord r;
  r.hidden.resize(dim);
  for (double& x : r.hidden) x = rng.uniform(-1.0, 1.0);
  r.logits.resize(vocab);
  for (double& x : r.logits) x = 3.0 * rng.normal();
  r.probs = knnmt::softmax(r.logits);
  return r;
}

// K neighbors sorted by (distance, index) with values drawn from a small
// range so duplicates occur; keys sit at the stated distance from `query`.
inline std::vector<knnmt::Neighbor> random_neighbors(knnmt::SeededRng& rng, std::size_t k, std::size_t vocab,
                                                     std::span<const double> query) {
  std::vector<knnmt::Neighbor> out;
  const std::size_t value_range = std::max<std::size_t>(2, std::min(vocab, k / 2 + 1));
  for (std::size_t i = 0; i < k; ++i) {
    knnmt::Neighbor n;
    n.index = rng.uniform_index(1000);
    n.value = static_cast<knnmt::Token>(rng.uniform_index(value_range));
    n.key_conf = rng.uniform(1e-3, 1.0);
    knnmt::Vector dir(query.size());
    for (double& x : dir) x = rng.normal();
    const double norm = std::sqrt(knnmt::dot(dir, dir));
    const double dist = rng.uniform(0.0, 2.0);
    n.key.resize(query.size());
    for (std::size_t j = 0; j < query.size(); ++j) n.key[j] = query[j] + dist * dir[j] / norm;
    n.distance = knnmt::distance_between(query, n.key, knnmt::DistanceMode::euclidean);
    out.push_back(std::move(n));
  }
  std::sort(out.begin(), out.end(), knnmt::neighbor_less);
  return out;
}

inline HeadCase random_case(std::uint64_t seed, knnmt::Variant variant = knnmt::Variant::robust,
                            const knnmt::HeadOptions& options = {}, bool zero_outputs = false,
                            std::size_t vocab = 12, std::size_t k = 8) {
  knnmt::SeededRng rng(seed);
  knnmt::HeadShape shape{k, 4, 32};
  HeadCase c{zero_outputs ? knnmt::init_head_params(variant, shape, options, seed)
                          : knnmt::HeadParams(variant, shape, options),
             {}, {}, 0};
  if (!zero_outputs) randomize(c.params, rng, kFixtureScale);
  c.record = random_record(rng, vocab);
  c.neighbors = random_neighbors(rng, k, vocab, c.record.hidden);
  c.gold = rng.uniform() < 0.7 ? c.neighbors[rng.uniform_index(k)].value
                               : static_cast<knnmt::Token>(rng.uniform_index(vocab));
  return c;
}

inline knnmt::TrainingExample as_example(const HeadCase& c) { return {c.record, c.neighbors, c.gold}; }

}  // namespace fixtures

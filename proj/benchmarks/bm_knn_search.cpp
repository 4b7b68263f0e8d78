#include <benchmark/benchmark.h>

#include "knnmt/datastore.hpp"

namespace {

knnmt::Datastore random_store(std::size_t n, std::size_t dim, std::uint64_t seed) {
  knnmt::SeededRng rng(seed);
  knnmt::Datastore ds(dim);
  ds.reserve(n);
  knnmt::Vector key(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& x : key) x = rng.uniform(-1.0, 1.0);
    ds.append(key, static_cast<knnmt::Token>(rng.uniform_index(60)), rng.uniform(0.01, 1.0));
  }
  return ds;
}

void BM_KnnSearch(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const knnmt::Datastore ds = random_store(n, 32, 7);
  knnmt::SeededRng rng(11);
  knnmt::Vector query(32);
  for (double& x : query) x = rng.uniform(-1.0, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(knnmt::knn_search(ds, query, 8));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_KnnSearch)->Arg(1000)->Arg(20000)->Arg(100000);

void BM_PruneConfidenceTop(benchmark::State& state) {
  const knnmt::Datastore ds = random_store(static_cast<std::size_t>(state.range(0)), 32, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(knnmt::prune_confidence_top(ds, 0.6));
  }
}
BENCHMARK(BM_PruneConfidenceTop)->Arg(20000);

}  // namespace

#include <benchmark/benchmark.h>

#include "knnmt/knnhead.hpp"
#include "knnmt/robusttrain.hpp"

namespace {

struct Fixture {
  knnmt::HeadParams params;
  knnmt::TrainingExample example;
};

Fixture make_fixture(knnmt::Variant variant) {
  const knnmt::HeadShape shape{};
  knnmt::SeededRng rng(5);
  Fixture f{knnmt::init_head_params(variant, shape, {}, 9), {}};
  for (auto& b : f.params.trainable_blocks()) {
    for (double& w : b.values) w = rng.uniform(-0.5, 0.5);
  }
  const std::size_t vocab = 60;
  knnmt::Vector logits(vocab);
  for (double& x : logits) x = rng.uniform(-3.0, 3.0);
  f.example.record.hidden.assign(32, 0.0);
  f.example.record.logits = logits;
  f.example.record.probs = knnmt::softmax(logits);
  double d = 0.0;
  for (std::size_t k = 0; k < shape.k; ++k) {
    d += rng.uniform(0.0, 0.5);
    f.example.neighbors.push_back(
        {k, d, static_cast<knnmt::Token>(rng.uniform_index(vocab)), rng.uniform(0.01, 1.0), {}});
  }
  f.example.gold = f.example.neighbors.front().value;
  return f;
}

void BM_HeadForward(benchmark::State& state) {
  const Fixture f = make_fixture(static_cast<knnmt::Variant>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(knnmt::head_forward(f.params, f.example.record, f.example.neighbors));
  }
}
BENCHMARK(BM_HeadForward)->Arg(0)->Arg(1)->Arg(2);

void BM_HeadForwardBackward(benchmark::State& state) {
  const Fixture f = make_fixture(knnmt::Variant::robust);
  knnmt::HeadParams grads(f.params.variant, f.params.shape, f.params.options);
  for (auto _ : state) {
    const auto trace = knnmt::head_forward(f.params, f.example.record, f.example.neighbors);
    knnmt::head_backward(f.params, trace, f.example.gold, 1.0, grads);
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_HeadForwardBackward);

}  // namespace

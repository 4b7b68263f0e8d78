#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "knnmt/basemodel.hpp"
#include "knnmt/error.hpp"
#include "knnmt/harness/evaluation.hpp"
#include "oracle.hpp"

using namespace knnmt;

namespace {

const BaseModelDims kDims{10, 12, 4, 6};

Corpus small_corpus(std::uint64_t seed, std::size_t n = 40) {
  const DomainPair p = generate_domain_pair(seed, kDims.source_vocab, kDims.target_vocab, 0.3);
  return sample_corpus(p.general, n, 3, 8, seed + 1);
}

}  // namespace

TEST_CASE("zero parameters give a uniform prediction") {
  const BaseModelParams params(kDims);
  const ForwardRecord r = forward_step(params, 3, params.bos());
  REQUIRE(r.probs.size() == kDims.target_vocab);
  for (double p : r.probs) CHECK(std::abs(p - 1.0 / 12.0) < 1e-15);
  for (double h : r.hidden) CHECK(h == 0.0);
}

TEST_CASE("forward step agrees with the straight-line oracle") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    BaseModelParams params = init_base_params(kDims, seed);
    SeededRng rng(seed * 7);
    for (auto& b : params.blocks()) {
      for (double& w : b.values) w = rng.uniform(-1.0, 1.0);
    }
    const Token src = static_cast<Token>(rng.uniform_index(kDims.source_vocab));
    const Token prev = static_cast<Token>(rng.uniform_index(kDims.target_vocab + 1));
    const ForwardRecord r = forward_step(params, src, prev);
    const oracle::Step expected = oracle::base_forward(params, src, prev);
    for (std::size_t i = 0; i < r.hidden.size(); ++i) CHECK(std::abs(r.hidden[i] - expected.hidden[i]) < 1e-12);
    for (std::size_t i = 0; i < r.probs.size(); ++i) CHECK(std::abs(r.probs[i] - expected.probs[i]) < 1e-12);
  }
}

TEST_CASE("out-of-vocabulary tokens are rejected") {
  const BaseModelParams params(kDims);
  CHECK_THROWS_AS(forward_step(params, 10, 0), Error);
  CHECK_THROWS_AS(forward_step(params, 0, 13), Error);
  CHECK_NOTHROW(forward_step(params, 9, params.bos()));
  const ForwardRecord r = forward_step(params, 0, 0);
  CHECK(confidence(r, 11) == doctest::Approx(1.0 / 12.0));
  CHECK_THROWS_AS(confidence(r, 12), Error);
}

TEST_CASE("teacher-forced pass feeds the gold prefix") {
  const BaseModelParams params = init_base_params(kDims, 3);
  const SentencePair pair{{1, 2, 3}, {4, 5, 6}};
  const auto records = teacher_forced_pass(params, pair);
  REQUIRE(records.size() == 3);
  CHECK(records[0].probs == forward_step(params, 1, params.bos()).probs);
  CHECK(records[1].probs == forward_step(params, 2, 4).probs);
  CHECK(records[2].probs == forward_step(params, 3, 5).probs);
  CHECK(records[2].t == 2);
}

TEST_CASE("zero epochs leave the parameters untouched") {
  const BaseModelParams init = init_base_params(kDims, 5);
  BaseTrainReport report;
  const BaseModelParams out = train_base(init, small_corpus(5), {0, 1e-2, 8, 1}, &report);
  CHECK(out == init);
  CHECK(report.epoch_loss.empty());
}

TEST_CASE("training is deterministic per seed") {
  const Corpus c = small_corpus(6);
  const BaseModelParams init = init_base_params(kDims, 6);
  const BaseModelParams a = train_base(init, c, {3, 1e-2, 8, 4});
  const BaseModelParams b = train_base(init, c, {3, 1e-2, 8, 4});
  CHECK(serialize_base_model(a) == serialize_base_model(b));
  const BaseModelParams other = train_base(init, c, {3, 1e-2, 8, 5});
  CHECK(serialize_base_model(other) != serialize_base_model(a));
}

TEST_CASE("training loss decreases") {
  const Corpus c = small_corpus(7, 200);
  BaseTrainReport report;
  train_base(init_base_params(kDims, 7), c, {8, 1e-2, 16, 1}, &report);
  REQUIRE(report.epoch_loss.size() == 8);
  std::size_t non_improving = 0;
  for (std::size_t e = 1; e < report.epoch_loss.size(); ++e) non_improving += report.epoch_loss[e] >= report.epoch_loss[e - 1];
  CHECK(non_improving <= 1);
  CHECK(report.epoch_loss.back() < report.epoch_loss.front());
}

TEST_CASE("training rejects bad input") {
  const BaseModelParams init(kDims);
  CHECK_THROWS_AS(train_base(init, Corpus{}, {}), Error);
  CHECK_THROWS_AS(train_base(init, small_corpus(1), {1, 1e-2, 0, 1}), Error);
  Corpus bad;
  bad.pairs.push_back({{1, 2}, {1, 40}});
  CHECK_THROWS_AS(train_base(init, bad, {}), Error);
}

TEST_CASE("default base model fits the general domain and misses the shift") {
  const harness::ExperimentConfig config;
  const harness::ExperimentData data = harness::generate_data(config);
  const BaseModelParams model = harness::train_base_model(config, data.general_train);
  const double heldout = teacher_forced_accuracy(model, data.general_heldout);
  const double in_domain = teacher_forced_accuracy(model, data.dev);
  CHECK(heldout >= 0.90);
  CHECK(heldout - in_domain >= 0.15);
}

TEST_CASE("greedy decoding feeds back its own predictions") {
  const BaseModelParams params = init_base_params(kDims, 9);
  const Sequence src{1, 2, 3, 4};
  const Sequence out = greedy_decode(params, src);
  REQUIRE(out.size() == src.size());
  Token prev = params.bos();
  for (std::size_t t = 0; t < src.size(); ++t) {
    CHECK(out[t] == argmax(forward_step(params, src[t], prev).probs));
    prev = out[t];
  }
  const Sequence forced = greedy_decode(params, src, [](const ForwardRecord& r) {
    Vector v(r.probs.size(), 0.0);
    v[7] = 1.0;
    return v;
  });
  CHECK(forced == Sequence{7, 7, 7, 7});
}

TEST_CASE("argmax prefers the first maximum") {
  CHECK(argmax(Vector{0.2, 0.5, 0.5, 0.1}) == 1);
  CHECK(argmax(Vector{1.0}) == 0);
}

TEST_CASE("base checkpoint round trip and corruption") {
  const BaseModelParams params = init_base_params(kDims, 11);
  const Bytes bytes = serialize_base_model(params);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "KNBM");
  CHECK(deserialize_base_model(bytes) == params);

  Bytes truncated(bytes.begin(), bytes.end() - 3);
  CHECK_THROWS_AS(deserialize_base_model(truncated), Error);
  Bytes magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_base_model(magic), Error);
  Bytes version = bytes;
  version[4] = 9;
  CHECK_THROWS_AS(deserialize_base_model(version), Error);
  Bytes trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(deserialize_base_model(trailing), Error);

  const auto path = std::filesystem::temp_directory_path() / "knnmt_test_base.knbm";
  save_base_model(params, path);
  CHECK(load_base_model(path) == params);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_base_model(path), Error);
}

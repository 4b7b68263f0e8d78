#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "knnmt/datastore.hpp"
#include "knnmt/error.hpp"
#include "oracle.hpp"

using namespace knnmt;

namespace {

Datastore store_of(const std::vector<std::vector<double>>& keys, const std::vector<double>& confs = {}) {
  Datastore ds(keys.front().size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    ds.append(keys[i], static_cast<Token>(i % 7), confs.empty() ? 0.5 : confs[i]);
  }
  return ds;
}

std::vector<std::size_t> indices(const std::vector<Neighbor>& ns) {
  std::vector<std::size_t> out;
  for (const auto& n : ns) out.push_back(n.index);
  return out;
}

// Keys on a coarse integer grid so that exact distance ties are common.
std::vector<std::vector<double>> random_keys(SeededRng& rng, std::size_t n, std::size_t d, bool grid) {
  std::vector<std::vector<double>> keys(n, std::vector<double>(d));
  for (auto& k : keys) {
    for (double& x : k) x = grid ? static_cast<double>(rng.uniform_index(3)) : rng.normal();
  }
  return keys;
}

Datastore conf_store(const std::vector<double>& confs) {
  std::vector<std::vector<double>> keys;
  for (std::size_t i = 0; i < confs.size(); ++i) keys.push_back({static_cast<double>(i)});
  return store_of(keys, confs);
}

std::multiset<double> confs_of(const Datastore& ds) {
  return {ds.key_confs().begin(), ds.key_confs().end()};
}

}  // namespace

TEST_CASE("datastore holds one entry per target token in corpus order") {
  const DomainPair p = generate_domain_pair(1, 10, 12, 0.3);
  const Corpus c = sample_corpus(p.in_domain, 30, 3, 7, 2);
  const BaseModelParams model = init_base_params({10, 12, 4, 6}, 3);
  const Datastore ds = build_datastore(model, c);
  REQUIRE(ds.size() == c.token_count());
  CHECK(ds.dim() == 6);
  CHECK(ds.manifest().entry_count == ds.size());
  std::size_t i = 0;
  for (const auto& pair : c.pairs) {
    const auto records = teacher_forced_pass(model, pair);
    for (std::size_t t = 0; t < records.size(); ++t, ++i) {
      CHECK(ds.value(i) == pair.target[t]);
      CHECK(ds.key_conf(i) == records[t].probs[pair.target[t]]);
      CHECK(std::equal(ds.key(i).begin(), ds.key(i).end(), records[t].hidden.begin()));
    }
  }
  const Datastore again = build_datastore(model, c);
  CHECK(serialize_datastore(again) == serialize_datastore(ds));
  CHECK(again.manifest().corpus_id == ds.manifest().corpus_id);
  CHECK(again.manifest().model_id == ds.manifest().model_id);
}

TEST_CASE("build rejects inconsistent corpora") {
  const BaseModelParams model = init_base_params({10, 12, 4, 6}, 3);
  Corpus bad;
  bad.pairs.push_back({{1, 2}, {1}});
  CHECK_THROWS_AS(build_datastore(model, bad), Error);
  Corpus oov;
  oov.pairs.push_back({{1, 2}, {1, 12}});
  CHECK_THROWS_AS(build_datastore(model, oov), Error);
}

TEST_CASE("two-dimensional search example") {
  const Datastore ds = store_of({{0, 0}, {1, 0}, {0, 2}, {3, 3}});
  const auto ns = knn_search(ds, Vector{0.1, 0.0}, 2);
  REQUIRE(ns.size() == 2);
  CHECK(ns[0].index == 0);
  CHECK(ns[1].index == 1);
  CHECK(ns[0].distance == doctest::Approx(0.1));
  CHECK(ns[1].distance == doctest::Approx(0.9));
  CHECK(ns[0].value == 0);
  CHECK(ns[1].value == 1);
  const auto sq = knn_search(ds, Vector{0.1, 0.0}, 2, DistanceMode::squared);
  CHECK(sq[1].distance == doctest::Approx(0.81));
}

TEST_CASE("equidistant keys resolve to the smaller index") {
  const Datastore ds = store_of({{1, 0}, {-1, 0}, {0, 1}, {0, -1}});
  CHECK(indices(knn_search(ds, Vector{0, 0}, 3)) == std::vector<std::size_t>{0, 1, 2});
  const Datastore dup = store_of({{5, 5}, {1, 1}, {1, 1}, {1, 1}});
  CHECK(indices(knn_search(dup, Vector{1, 1}, 2)) == std::vector<std::size_t>{1, 2});
}

TEST_CASE("search agrees with the brute-force oracle on random stores") {
  SeededRng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(500);
    const std::size_t d = 1 + rng.uniform_index(16);
    const bool grid = trial % 2 == 0;
    const auto keys = random_keys(rng, n, d, grid);
    const Datastore ds = store_of(keys);
    std::vector<double> query(d);
    for (double& x : query) x = grid ? static_cast<double>(rng.uniform_index(3)) : rng.normal();
    const std::size_t k = 1 + rng.uniform_index(std::min<std::size_t>(n, 32));
    const auto got = knn_search(ds, query, k);
    CHECK(indices(got) == oracle::brute_force_knn(keys, query, k));
    CHECK(std::is_sorted(got.begin(), got.end(), neighbor_less));
  }
}

TEST_CASE("search argument errors") {
  const Datastore ds = store_of({{0, 0}, {1, 0}});
  CHECK_THROWS_AS(knn_search(ds, Vector{0, 0}, 0), Error);
  CHECK_THROWS_AS(knn_search(ds, Vector{0, 0}, 3), Error);
  CHECK_THROWS_AS(knn_search(ds, Vector{0, 0, 0}, 1), Error);
  Datastore empty(2);
  CHECK_THROWS_AS(knn_search(empty, Vector{0, 0}, 1), Error);
}

TEST_CASE("append validates entries") {
  Datastore ds(2);
  CHECK_THROWS_AS(ds.append(Vector{1.0}, 0, 0.5), Error);
  CHECK_THROWS_AS(ds.append(Vector{1.0, NAN}, 0, 0.5), Error);
  CHECK_THROWS_AS(ds.append(Vector{1.0, 2.0}, 0, 0.0), Error);
  CHECK_THROWS_AS(ds.append(Vector{1.0, 2.0}, 0, 1.5), Error);
  CHECK_NOTHROW(ds.append(Vector{1.0, 2.0}, 0, 1.0));
  CHECK(ds.size() == 1);
}

TEST_CASE("confidence pruning examples") {
  const Datastore ds = conf_store({0.9, 0.1, 0.5, 0.7, 0.3});
  CHECK(confs_of(prune_confidence_top(ds, 0.4)) == std::multiset<double>{0.1, 0.5, 0.3});
  CHECK(confs_of(prune_confidence_top(ds, 0.0)) == confs_of(ds));
  CHECK(confs_of(prune_confidence_interval(ds, 0, 20)) == std::multiset<double>{0.1, 0.5, 0.7, 0.3});
  CHECK(confs_of(prune_confidence_interval(ds, 80, 100)) == std::multiset<double>{0.9, 0.5, 0.7, 0.3});
  CHECK(confs_of(prune_confidence_interval(ds, 20, 60)) == std::multiset<double>{0.9, 0.1, 0.3});
  CHECK(confidence_ranking(conf_store({0.5, 0.9, 0.5})) == std::vector<std::size_t>{1, 0, 2});
}

TEST_CASE("pruning keeps the survivors in their original order") {
  const Datastore ds = conf_store({0.9, 0.1, 0.5, 0.7, 0.3});
  const Datastore pruned = prune_confidence_top(ds, 0.4);
  REQUIRE(pruned.size() == 3);
  CHECK(pruned.key(0)[0] == 1.0);
  CHECK(pruned.key(1)[0] == 2.0);
  CHECK(pruned.key(2)[0] == 4.0);
}

TEST_CASE("pruning properties on random stores") {
  SeededRng rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 10 + rng.uniform_index(200);
    std::vector<double> confs(n);
    for (double& c : confs) c = rng.uniform(0.01, 1.0);
    const Datastore ds = conf_store(confs);
    const double f = 0.05 * static_cast<double>(rng.uniform_index(19));
    const auto removed = static_cast<std::size_t>(std::llround(f * static_cast<double>(n)));

    const Datastore top = prune_confidence_top(ds, f);
    CHECK(top.size() == n - removed);
    std::vector<double> sorted = confs;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    if (removed > 0) {
      for (double c : top.key_confs()) CHECK(c <= sorted[removed - 1]);
    }

    const Datastore a = prune_random(ds, f, 5);
    const Datastore b = prune_random(ds, f, 5);
    CHECK(a.size() == n - removed);
    CHECK(a == b);
    for (double c : a.key_confs()) CHECK(std::find(confs.begin(), confs.end(), c) != confs.end());
  }
}

TEST_CASE("pruning argument errors") {
  const Datastore ds = conf_store({0.9, 0.1, 0.5});
  CHECK_THROWS_AS(prune_random(ds, 1.0, 1), Error);
  CHECK_THROWS_AS(prune_random(ds, -0.1, 1), Error);
  CHECK_THROWS_AS(prune_confidence_top(ds, 1.0), Error);
  CHECK_THROWS_AS(prune_confidence_interval(ds, 0, 100), Error);
  CHECK_THROWS_AS(prune_confidence_interval(ds, 50, 50), Error);
  CHECK_THROWS_AS(prune_confidence_interval(ds, -1, 20), Error);
}

TEST_CASE("datastore file round trip and corruption") {
  const DomainPair p = generate_domain_pair(1, 10, 12, 0.3);
  const Corpus c = sample_corpus(p.in_domain, 10, 3, 7, 2);
  const Datastore ds = build_datastore(init_base_params({10, 12, 4, 6}, 3), c);
  const Bytes bytes = serialize_datastore(ds);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "KNDS");
  CHECK(deserialize_datastore(bytes) == ds);
  CHECK_THROWS_AS(deserialize_datastore(bytes, 5), Error);
  CHECK_THROWS_AS(deserialize_datastore(Bytes(bytes.begin(), bytes.end() - 1)), Error);
  Bytes trailing = bytes;
  trailing.push_back(1);
  CHECK_THROWS_AS(deserialize_datastore(trailing), Error);
  Bytes magic = bytes;
  magic[1] = 'Z';
  CHECK_THROWS_AS(deserialize_datastore(magic), Error);

  const auto path = std::filesystem::temp_directory_path() / "knnmt_test_store.knds";
  save_datastore(ds, path);
  const Datastore loaded = load_datastore(path, 6);
  CHECK(loaded == ds);
  CHECK(loaded.manifest().corpus_id == ds.manifest().corpus_id);
  CHECK(loaded.manifest().entry_count == ds.size());

  Manifest wrong = ds.manifest();
  wrong.entry_count += 1;
  write_file_atomic(manifest_path(path), serialize_manifest(wrong));
  CHECK_THROWS_AS(load_datastore(path), Error);
  std::filesystem::remove(manifest_path(path));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_datastore(path), Error);
}

TEST_CASE("manifest text round trip") {
  const Manifest m{"00ab", "ff01", 1700000000, 42};
  const Manifest back = parse_manifest(serialize_manifest(m));
  CHECK(back.corpus_id == m.corpus_id);
  CHECK(back.model_id == m.model_id);
  CHECK(back.build_timestamp == m.build_timestamp);
  CHECK(back.entry_count == m.entry_count);
  CHECK_THROWS_AS(parse_manifest("entry_count 4\n"), Error);
  CHECK_THROWS_AS(parse_manifest("entry_count = many\n"), Error);
}

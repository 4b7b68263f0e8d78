#include <doctest.h>

#include <cmath>
#include <map>

#include "knnmt/error.hpp"
#include "knnmt/toytask.hpp"
#include "oracle.hpp"

using namespace knnmt;

namespace {

std::size_t differing_entries(const DomainPair& p) {
  std::size_t n = 0;
  for (std::size_t s = 0; s < p.general.source_vocab; ++s) n += p.general.table[s] != p.in_domain.table[s];
  return n;
}

std::vector<std::vector<double>> rows_of(const DomainSpec& spec) {
  std::vector<std::vector<double>> rows;
  for (std::size_t r = 0; r < spec.source_vocab; ++r) {
    auto row = spec.transitions.row(r);
    rows.emplace_back(row.begin(), row.end());
  }
  return rows;
}

}  // namespace

TEST_CASE("zero shift keeps the translation tables identical") {
  const DomainPair p = generate_domain_pair(5, 50, 60, 0.0);
  CHECK(p.general.table == p.in_domain.table);
}

TEST_CASE("full shift changes every mapping") {
  const DomainPair p = generate_domain_pair(5, 50, 60, 1.0);
  CHECK(differing_entries(p) == 50);
}

TEST_CASE("shift remaps exactly round(rho * V_s) tokens") {
  for (double rho : {0.1, 0.3, 0.33, 0.5, 0.77}) {
    const DomainPair p = generate_domain_pair(11, 50, 60, rho);
    CHECK(differing_entries(p) == static_cast<std::size_t>(std::llround(rho * 50)));
  }
}

TEST_CASE("domain generation is deterministic per seed") {
  const DomainPair a = generate_domain_pair(99, 20, 25, 0.3);
  const DomainPair b = generate_domain_pair(99, 20, 25, 0.3);
  CHECK(a.general.table == b.general.table);
  CHECK(a.general.transitions == b.general.transitions);
  CHECK(a.in_domain.table == b.in_domain.table);
  CHECK(a.in_domain.transitions == b.in_domain.transitions);
  const DomainPair c = generate_domain_pair(100, 20, 25, 0.3);
  CHECK(c.general.transitions != a.general.transitions);
}

TEST_CASE("domain specs are total and row-stochastic") {
  const DomainPair p = generate_domain_pair(3, 50, 60, 0.3);
  for (const DomainSpec* spec : {&p.general, &p.in_domain}) {
    CHECK(spec->table.size() == 50);
    for (Token t : spec->table) CHECK(t < 60);
    for (std::size_t r = 0; r < 50; ++r) {
      double sum = 0.0;
      for (double v : spec->transitions.row(r)) {
        CHECK(v >= 0.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
  CHECK(p.general.transitions != p.in_domain.transitions);
}

TEST_CASE("invalid domain sizes are rejected") {
  CHECK_THROWS_AS(generate_domain_pair(1, 3, 10, 0.3), Error);
  CHECK_THROWS_AS(generate_domain_pair(1, 10, 9, 0.3), Error);
  CHECK_THROWS_AS(generate_domain_pair(1, 10, 10, -0.1), Error);
  CHECK_THROWS_AS(generate_domain_pair(1, 10, 10, 1.5), Error);
}

TEST_CASE("a single fixed-length sentence") {
  const DomainPair p = generate_domain_pair(1, 8, 8, 0.0);
  const Corpus c = sample_corpus(p.general, 1, 3, 3, 17);
  REQUIRE(c.pairs.size() == 1);
  CHECK(c.pairs[0].source.size() == 3);
  CHECK(c.pairs[0].target.size() == 3);
}

TEST_CASE("corpora are deterministic and purely transduced") {
  const DomainPair p = generate_domain_pair(4, 30, 40, 0.3);
  const Corpus a = sample_corpus(p.in_domain, 50, 5, 15, 8);
  const Corpus b = sample_corpus(p.in_domain, 50, 5, 15, 8);
  CHECK(a == b);
  CHECK(serialize_corpus(a) == serialize_corpus(b));
  const Corpus other = sample_corpus(p.in_domain, 50, 5, 15, 9);
  std::map<Token, Token> seen;
  for (const Corpus* c : {&a, &other}) {
    for (const auto& pair : c->pairs) {
      CHECK(pair.source.size() == pair.target.size());
      CHECK(pair.source.size() >= 5);
      CHECK(pair.source.size() <= 15);
      CHECK(pair.target == p.in_domain.translate(pair.source));
      for (std::size_t t = 0; t < pair.source.size(); ++t) {
        CHECK(pair.source[t] < 30);
        auto [it, inserted] = seen.emplace(pair.source[t], pair.target[t]);
        CHECK(it->second == pair.target[t]);
      }
    }
  }
}

TEST_CASE("sampling rejects invalid lengths") {
  const DomainPair p = generate_domain_pair(4, 10, 10, 0.3);
  CHECK_THROWS_AS(sample_corpus(p.general, 5, 1, 4, 1), Error);
  CHECK_THROWS_AS(sample_corpus(p.general, 5, 6, 4, 1), Error);
  CHECK_THROWS_AS(sample_corpus(p.general, 0, 2, 4, 1), Error);
}

TEST_CASE("stationary distribution agrees with the power-iteration oracle") {
  const DomainPair p = generate_domain_pair(21, 50, 60, 0.3);
  const Vector pi = stationary_distribution(p.in_domain);
  const auto expected = oracle::stationary(rows_of(p.in_domain));
  for (std::size_t i = 0; i < pi.size(); ++i) CHECK(std::abs(pi[i] - expected[i]) < 1e-10);
}

TEST_CASE("token histogram approaches the stationary distribution") {
  const DomainPair p = generate_domain_pair(13, 50, 60, 0.3);
  const Corpus c = sample_corpus(p.general, 10000, 5, 15, 2);
  REQUIRE(c.token_count() >= 100000);
  const auto pi = oracle::stationary(rows_of(p.general));
  std::vector<double> hist(50, 0.0);
  for (const auto& pair : c.pairs) {
    for (Token s : pair.source) hist[s] += 1.0;
  }
  double tv = 0.0;
  for (std::size_t i = 0; i < 50; ++i) tv += std::abs(hist[i] / static_cast<double>(c.token_count()) - pi[i]);
  CHECK(0.5 * tv < 0.05);
}

TEST_CASE("shifted-token rate converges to the stationary mass of remapped tokens") {
  const DomainPair p = generate_domain_pair(8, 50, 60, 0.3);
  const auto pi = oracle::stationary(rows_of(p.in_domain));
  double expected = 0.0;
  for (std::size_t s = 0; s < 50; ++s) {
    if (p.general.table[s] != p.in_domain.table[s]) expected += pi[s];
  }
  const Corpus dev = sample_corpus(p.in_domain, 4000, 5, 15, 31);
  std::size_t shifted = 0;
  for (const auto& pair : dev.pairs) {
    for (Token s : pair.source) shifted += p.general.table[s] != p.in_domain.table[s];
  }
  CHECK(std::abs(static_cast<double>(shifted) / static_cast<double>(dev.token_count()) - expected) < 0.05);
}

TEST_CASE("split examples") {
  const DomainPair p = generate_domain_pair(2, 10, 12, 0.3);
  const Corpus c = sample_corpus(p.general, 10, 2, 6, 3);

  const CorpusSplit all = split_corpus(c, {1.0, 0.0, 0.0});
  CHECK(all.train.pairs == c.pairs);
  CHECK(all.dev.pairs.empty());
  CHECK(all.test.pairs.empty());

  const CorpusSplit s = split_corpus(c, {0.8, 0.1, 0.1});
  CHECK(s.train.pairs.size() == 8);
  CHECK(s.dev.pairs.size() == 1);
  CHECK(s.test.pairs.size() == 1);

  std::vector<SentencePair> joined = s.train.pairs;
  joined.insert(joined.end(), s.dev.pairs.begin(), s.dev.pairs.end());
  joined.insert(joined.end(), s.test.pairs.begin(), s.test.pairs.end());
  CHECK(joined == c.pairs);
}

TEST_CASE("split rejects ratios that do not sum to one") {
  const DomainPair p = generate_domain_pair(2, 10, 12, 0.3);
  const Corpus c = sample_corpus(p.general, 10, 2, 6, 3);
  CHECK_THROWS_AS(split_corpus(c, {0.5, 0.2, 0.2}), Error);
  CHECK_THROWS_AS(split_corpus(c, {1.2, -0.1, -0.1}), Error);
}

TEST_CASE("corpus text round trip") {
  const DomainPair p = generate_domain_pair(2, 10, 12, 0.3);
  const Corpus c = sample_corpus(p.in_domain, 25, 2, 9, 77);
  const std::string text = serialize_corpus(c);
  CHECK(text.rfind("# domain=in_domain seed=77\n", 0) == 0);
  CHECK(text.find('\t') != std::string::npos);
  const Corpus back = parse_corpus(text);
  CHECK(back == c);
  CHECK_THROWS_AS(parse_corpus("1 2 3\t4 5 6\n"), Error);
  CHECK_THROWS_AS(parse_corpus("# domain=x seed=1\n1 2 3 4 5 6\n"), Error);
  CHECK_THROWS_AS(parse_corpus("# domain=x seed=1\n1 2\t3\n"), Error);
}

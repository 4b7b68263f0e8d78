#pragma once

// Synthetic two-domain token transduction task. A domain is a Markov chain
// over source tokens plus a per-token translation table; target sentences are
// the token-by-token image of the source under the table. The in-domain
// variant remaps a fraction of the table and resamples the chain, giving the
// general-domain model something systematic to get wrong.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "knnmt/mathcore.hpp"

namespace knnmt {

using Token = std::uint32_t;
using Sequence = std::vector<Token>;

struct DomainSpec {
  std::size_t source_vocab = 0;
  std::size_t target_vocab = 0;
  std::vector<Token> table;  // source token -> target token
  Matrix transitions;        // row-stochastic, source_vocab x source_vocab
  std::string label;

  Sequence translate(const Sequence& source) const;
};

struct DomainPair {
  DomainSpec general;
  DomainSpec in_domain;
};

// Requires source_vocab >= 4, target_vocab >= source_vocab and
// 0 <= shift_fraction <= 1. Exactly round(shift_fraction * source_vocab)
// table entries differ between the two domains.
DomainPair generate_domain_pair(std::uint64_t seed, std::size_t source_vocab,
                                std::size_t target_vocab, double shift_fraction);

// Stationary distribution of the chain by power iteration.
Vector stationary_distribution(const DomainSpec& spec, std::size_t max_iters = 10000,
                               double tol = 1e-13);

struct SentencePair {
  Sequence source;
  Sequence target;

  friend bool operator==(const SentencePair&, const SentencePair&) = default;
};

struct Corpus {
  std::string label;
  std::uint64_t seed = 0;
  std::vector<SentencePair> pairs;

  std::size_t token_count() const;
  bool empty() const noexcept { return pairs.empty(); }

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

// Sentence i is drawn from its own child stream, so corpora are reproducible
// sentence-by-sentence. The first token comes from the stationary distribution.
Corpus sample_corpus(const DomainSpec& spec, std::size_t n_sentences, std::size_t min_length,
                     std::size_t max_length, std::uint64_t seed);

struct CorpusSplit {
  Corpus train;
  Corpus dev;
  Corpus test;
};

// Contiguous, order-preserving split. Ratios must be non-negative and sum to
// one within 1e-9; train and dev sizes are round(ratio * n), test takes the rest.
CorpusSplit split_corpus(const Corpus& corpus, const std::array<double, 3>& ratios);

// Text format: "# domain=<label> seed=<seed>" header, then one
// "src tokens<TAB>tgt tokens" line per pair.
std::string serialize_corpus(const Corpus& corpus);
Corpus parse_corpus(std::string_view text);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

std::uint64_t corpus_fingerprint(const Corpus& corpus);

}  // namespace knnmt

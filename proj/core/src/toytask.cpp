#include "knnmt/toytask.hpp"

#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "knnmt/binary_io.hpp"
#include "knnmt/error.hpp"

namespace knnmt {

namespace {

// Dirichlet concentration of each transition row. Below one the rows are
// peaked, so sentences have recurring local structure.
constexpr double kTransitionConcentration = 0.5;

// Marsaglia-Tsang, with the alpha < 1 boost.
double sample_gamma(SeededRng& rng, double alpha) {
  if (alpha < 1.0) {
    const double u = 1.0 - rng.uniform();
    return sample_gamma(rng, alpha + 1.0) * std::pow(u, 1.0 / alpha);
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = 0.0;
    double v = 0.0;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - rng.uniform();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
  }
}

Matrix random_transitions(SeededRng& rng, std::size_t n) {
  Matrix t(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = t.row(r);
    double sum = 0.0;
    for (double& w : row) {
      w = sample_gamma(rng, kTransitionConcentration);
      sum += w;
    }
    if (sum <= 0.0) {
      row[rng.uniform_index(n)] = 1.0;
      continue;
    }
    for (double& w : row) w /= sum;
  }
  return t;
}

std::size_t sample_categorical(SeededRng& rng, std::span<const double> probs) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  // Rounding left u above the accumulated mass; take the last non-zero cell.
  for (std::size_t i = probs.size(); i-- > 0;) {
    if (probs[i] > 0.0) return i;
  }
  return probs.size() - 1;
}

}  // namespace

Sequence DomainSpec::translate(const Sequence& source) const {
  Sequence out;
  out.reserve(source.size());
  for (Token s : source) out.push_back(table.at(s));
  return out;
}

DomainPair generate_domain_pair(std::uint64_t seed, std::size_t source_vocab,
                                std::size_t target_vocab, double shift_fraction) {
  if (source_vocab < 4) throw Error(ErrorKind::invalid_argument, "source vocabulary must be >= 4");
  if (target_vocab < source_vocab) {
    throw Error(ErrorKind::invalid_argument, "target vocabulary must be >= source vocabulary");
  }
  if (!(shift_fraction >= 0.0 && shift_fraction <= 1.0)) {
    throw Error(ErrorKind::invalid_argument, "shift fraction must lie in [0, 1]");
  }

  SeededRng root(seed);
  DomainPair pair;

  // General domain: an injective table, source token i -> a distinct target.
  {
    SeededRng rng = root.child("general-table");
    std::vector<Token> targets(target_vocab);
    std::iota(targets.begin(), targets.end(), Token{0});
    for (std::size_t i = 0; i < source_vocab; ++i) {
      const auto j = i + rng.uniform_index(target_vocab - i);
      std::swap(targets[i], targets[j]);
    }
    pair.general.table.assign(targets.begin(), targets.begin() + static_cast<std::ptrdiff_t>(source_vocab));
  }
  {
    SeededRng rng = root.child("general-chain");
    pair.general.transitions = random_transitions(rng, source_vocab);
  }
  pair.general.source_vocab = source_vocab;
  pair.general.target_vocab = target_vocab;
  pair.general.label = "general";

  pair.in_domain = pair.general;
  pair.in_domain.label = "in_domain";
  {
    SeededRng rng = root.child("shift");
    const auto n_shift = static_cast<std::size_t>(std::llround(shift_fraction * static_cast<double>(source_vocab)));
    std::vector<std::size_t> order(source_vocab);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < n_shift; ++i) {
      const auto j = i + rng.uniform_index(source_vocab - i);
      std::swap(order[i], order[j]);
      const std::size_t s = order[i];
      // Uniform over every target except the general one.
      Token t = static_cast<Token>(rng.uniform_index(target_vocab - 1));
      if (t >= pair.general.table[s]) ++t;
      pair.in_domain.table[s] = t;
    }
  }
  {
    SeededRng rng = root.child("in-domain-chain");
    pair.in_domain.transitions = random_transitions(rng, source_vocab);
  }
  return pair;
}

Vector stationary_distribution(const DomainSpec& spec, std::size_t max_iters, double tol) {
  const std::size_t n = spec.source_vocab;
  Vector pi(n, 1.0 / static_cast<double>(n));
  Vector next(n);
  for (std::size_t it = 0; it < max_iters; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) next[c] += pi[r] * spec.transitions(r, c);
    }
    double diff = 0.0;
    for (std::size_t i = 0; i < n; ++i) diff += std::abs(next[i] - pi[i]);
    pi.swap(next);
    if (diff < tol) break;
  }
  return pi;
}

std::size_t Corpus::token_count() const {
  std::size_t n = 0;
  for (const auto& p : pairs) n += p.target.size();
  return n;
}

Corpus sample_corpus(const DomainSpec& spec, std::size_t n_sentences, std::size_t min_length,
                     std::size_t max_length, std::uint64_t seed) {
  if (min_length < 2) throw Error(ErrorKind::invalid_argument, "minimum sentence length must be >= 2");
  if (max_length < min_length) throw Error(ErrorKind::invalid_argument, "max length below min length");
  if (n_sentences < 1) throw Error(ErrorKind::invalid_argument, "corpus needs at least one sentence");

  const Vector start = stationary_distribution(spec);
  SeededRng root(seed);
  Corpus corpus;
  corpus.label = spec.label;
  corpus.seed = seed;
  corpus.pairs.reserve(n_sentences);
  for (std::size_t i = 0; i < n_sentences; ++i) {
    SeededRng rng = root.child(static_cast<std::uint64_t>(i));
    const std::size_t len = min_length + rng.uniform_index(max_length - min_length + 1);
    Sequence src;
    src.reserve(len);
    std::size_t tok = sample_categorical(rng, start);
    src.push_back(static_cast<Token>(tok));
    while (src.size() < len) {
      tok = sample_categorical(rng, spec.transitions.row(tok));
      src.push_back(static_cast<Token>(tok));
    }
    corpus.pairs.push_back({src, spec.translate(src)});
  }
  return corpus;
}

CorpusSplit split_corpus(const Corpus& corpus, const std::array<double, 3>& ratios) {
  double sum = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw Error(ErrorKind::invalid_argument, "split ratios must be non-negative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error(ErrorKind::invalid_argument, "split ratios must sum to 1");

  const std::size_t n = corpus.pairs.size();
  auto count = [n](double r) {
    return static_cast<std::size_t>(std::llround(r * static_cast<double>(n)));
  };
  const std::size_t n_train = std::min(n, count(ratios[0]));
  const std::size_t n_dev = std::min(n - n_train, count(ratios[1]));

  CorpusSplit out;
  for (Corpus* part : {&out.train, &out.dev, &out.test}) {
    part->label = corpus.label;
    part->seed = corpus.seed;
  }
  const auto begin = corpus.pairs.begin();
  const auto mid1 = begin + static_cast<std::ptrdiff_t>(n_train);
  const auto mid2 = mid1 + static_cast<std::ptrdiff_t>(n_dev);
  out.train.pairs.assign(begin, mid1);
  out.dev.pairs.assign(mid1, mid2);
  out.test.pairs.assign(mid2, corpus.pairs.end());
  return out;
}

std::string serialize_corpus(const Corpus& corpus) {
  std::string out = "# domain=" + corpus.label + " seed=" + std::to_string(corpus.seed) + "\n";
  auto put = [&out](const Sequence& seq) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (i) out += ' ';
      out += std::to_string(seq[i]);
    }
  };
  for (const auto& p : corpus.pairs) {
    put(p.source);
    out += '\t';
    put(p.target);
    out += '\n';
  }
  return out;
}

namespace {

Sequence parse_tokens(std::string_view text, std::size_t line_no) {
  Sequence seq;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    if (i >= text.size()) break;
    Token v = 0;
    auto [ptr, ec] = std::from_chars(text.data() + i, text.data() + text.size(), v);
    if (ec != std::errc()) {
      throw Error(ErrorKind::format, "corpus line " + std::to_string(line_no) + ": bad token");
    }
    i = static_cast<std::size_t>(ptr - text.data());
    seq.push_back(v);
  }
  return seq;
}

}  // namespace

Corpus parse_corpus(std::string_view text) {
  Corpus corpus;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (!header_seen) {
        std::istringstream in{std::string(line.substr(1))};
        std::string field;
        while (in >> field) {
          if (field.rfind("domain=", 0) == 0) corpus.label = field.substr(7);
          if (field.rfind("seed=", 0) == 0) corpus.seed = std::stoull(field.substr(5));
        }
        header_seen = true;
      }
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) {
      throw Error(ErrorKind::format, "corpus line " + std::to_string(line_no) + ": missing tab");
    }
    SentencePair p{parse_tokens(line.substr(0, tab), line_no), parse_tokens(line.substr(tab + 1), line_no)};
    if (p.source.size() != p.target.size()) {
      throw Error(ErrorKind::format, "corpus line " + std::to_string(line_no) + ": length mismatch");
    }
    corpus.pairs.push_back(std::move(p));
  }
  if (!header_seen) throw Error(ErrorKind::format, "corpus file lacks its header line");
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_corpus(corpus));
}

Corpus load_corpus(const std::filesystem::path& path) { return parse_corpus(read_text_file(path)); }

std::uint64_t corpus_fingerprint(const Corpus& corpus) { return fnv1a64(serialize_corpus(corpus)); }

}  // namespace knnmt

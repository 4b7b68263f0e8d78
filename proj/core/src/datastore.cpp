#include "knnmt/datastore.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <queue>
#include <sstream>

#include "knnmt/error.hpp"

namespace knnmt {

namespace {

constexpr char kMagic[] = "KNDS";
constexpr std::uint32_t kVersion = 1;

std::int64_t build_time() {
  // Reproducible builds pin the timestamp through SOURCE_DATE_EPOCH.
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) {
    try {
      return std::stoll(env);
    } catch (...) {
    }
  }
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::size_t rounded_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

void check_fraction(double fraction, const char* what) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw Error(ErrorKind::invalid_argument, std::string(what) + ": fraction must lie in [0, 1)");
  }
}

Datastore without(const Datastore& ds, const std::vector<bool>& removed) {
  std::vector<std::size_t> keep;
  keep.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!removed[i]) keep.push_back(i);
  }
  return ds.subset(keep);
}

}  // namespace

Entry Datastore::entry(std::size_t i) const {
  auto k = key(i);
  return {Vector(k.begin(), k.end()), values_[i], confs_[i]};
}

void Datastore::append(std::span<const double> key, Token value, double key_conf) {
  if (key.size() != dim_) {
    throw Error(ErrorKind::dim_mismatch, "datastore entry has dimension " + std::to_string(key.size()) +
                                             ", expected " + std::to_string(dim_));
  }
  if (!all_finite(key)) throw Error(ErrorKind::non_finite, "datastore key is not finite");
  if (!(key_conf > 0.0 && key_conf <= 1.0)) {
    throw Error(ErrorKind::invalid_argument, "datastore key_conf must lie in (0, 1]");
  }
  keys_.insert(keys_.end(), key.begin(), key.end());
  values_.push_back(value);
  confs_.push_back(key_conf);
  manifest_.entry_count = values_.size();
}

void Datastore::reserve(std::size_t n) {
  keys_.reserve(n * dim_);
  values_.reserve(n);
  confs_.reserve(n);
}

Datastore Datastore::subset(std::span<const std::size_t> indices) const {
  Datastore out(dim_);
  out.manifest_ = manifest_;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    auto k = key(i);
    out.keys_.insert(out.keys_.end(), k.begin(), k.end());
    out.values_.push_back(values_[i]);
    out.confs_.push_back(confs_[i]);
  }
  out.manifest_.entry_count = out.values_.size();
  return out;
}

Datastore build_datastore(const BaseModelParams& model, const Corpus& corpus) {
  Datastore ds(model.dims.hidden);
  ds.reserve(corpus.token_count());
  for (const auto& pair : corpus.pairs) {
    if (pair.source.size() != pair.target.size()) {
      throw Error(ErrorKind::shape_mismatch, "build_datastore: source/target length mismatch");
    }
    for (Token y : pair.target) {
      if (y >= model.dims.target_vocab) {
        throw Error(ErrorKind::out_of_range, "build_datastore: target token outside model vocabulary");
      }
    }
    const auto records = teacher_forced_pass(model, pair);
    for (std::size_t t = 0; t < records.size(); ++t) {
      const Token y = pair.target[t];
      // A probability that underflowed to zero is still a real entry.
      const double conf = std::max(records[t].probs[y], std::numeric_limits<double>::min());
      ds.append(records[t].hidden, y, conf);
    }
  }
  Manifest m;
  m.corpus_id = hex64(corpus_fingerprint(corpus));
  m.model_id = hex64(fnv1a64(serialize_base_model(model)));
  m.build_timestamp = build_time();
  m.entry_count = ds.size();
  ds.set_manifest(std::move(m));
  return ds;
}

double distance_between(std::span<const double> a, std::span<const double> b, DistanceMode mode) {
  const double d2 = squared_distance(a, b);
  return mode == DistanceMode::squared ? d2 : std::sqrt(d2);
}

bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  if (a.distance != b.distance) return a.distance < b.distance;
  return a.index < b.index;
}

std::vector<Neighbor> knn_search(const Datastore& ds, std::span<const double> query, std::size_t k,
                                 DistanceMode mode) {
  if (query.size() != ds.dim()) {
    throw Error(ErrorKind::dim_mismatch, "knn_search: query has dimension " + std::to_string(query.size()) +
                                             ", datastore has " + std::to_string(ds.dim()));
  }
  if (k == 0 || k > ds.size()) {
    throw Error(ErrorKind::invalid_argument, "knn_search: K=" + std::to_string(k) + " with " +
                                                 std::to_string(ds.size()) + " entries");
  }

  // Max-heap on (squared distance, index) holding the best k so far.
  using Candidate = std::pair<double, std::size_t>;
  std::priority_queue<Candidate> heap;
  const double* keys = ds.keys().data();
  const std::size_t dim = ds.dim();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double d2 = squared_distance(query, {keys + i * dim, dim});
    if (heap.size() < k) {
      heap.emplace(d2, i);
    } else if (Candidate(d2, i) < heap.top()) {
      heap.pop();
      heap.emplace(d2, i);
    }
  }

  std::vector<Neighbor> out(heap.size());
  for (std::size_t j = heap.size(); j-- > 0;) {
    const auto [d2, idx] = heap.top();
    heap.pop();
    auto key = ds.key(idx);
    out[j] = Neighbor{idx, mode == DistanceMode::squared ? d2 : std::sqrt(d2), ds.value(idx), ds.key_conf(idx),
                      Vector(key.begin(), key.end())};
  }
  return out;
}

std::vector<std::size_t> confidence_ranking(const Datastore& ds) {
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&ds](std::size_t a, std::size_t b) { return ds.key_conf(a) > ds.key_conf(b); });
  return order;
}

Datastore prune_random(const Datastore& ds, double fraction, std::uint64_t seed) {
  check_fraction(fraction, "prune_random");
  const std::size_t n = ds.size();
  const std::size_t n_remove = rounded_count(fraction, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SeededRng rng = SeededRng(seed).child("prune-random");
  for (std::size_t i = 0; i < n_remove; ++i) {
    std::swap(order[i], order[i + rng.uniform_index(n - i)]);
  }
  std::vector<bool> removed(n, false);
  for (std::size_t i = 0; i < n_remove; ++i) removed[order[i]] = true;
  return without(ds, removed);
}

Datastore prune_confidence_top(const Datastore& ds, double fraction) {
  check_fraction(fraction, "prune_confidence_top");
  const auto ranking = confidence_ranking(ds);
  const std::size_t n_remove = rounded_count(fraction, ds.size());
  std::vector<bool> removed(ds.size(), false);
  for (std::size_t r = 0; r < n_remove; ++r) removed[ranking[r]] = true;
  return without(ds, removed);
}

Datastore prune_confidence_interval(const Datastore& ds, double lo_pct, double hi_pct) {
  if (!(lo_pct >= 0.0 && lo_pct < hi_pct && hi_pct <= 100.0)) {
    throw Error(ErrorKind::invalid_argument, "prune_confidence_interval: need 0 <= lo < hi <= 100");
  }
  const std::size_t n = ds.size();
  const std::size_t begin = rounded_count(lo_pct / 100.0, n);
  const std::size_t end = std::min(n, rounded_count(hi_pct / 100.0, n));
  if (end - begin >= n) {
    throw Error(ErrorKind::invalid_argument, "prune_confidence_interval: interval would empty the datastore");
  }
  const auto ranking = confidence_ranking(ds);
  std::vector<bool> removed(n, false);
  for (std::size_t r = begin; r < end; ++r) removed[ranking[r]] = true;
  return without(ds, removed);
}

Bytes serialize_datastore(const Datastore& ds) {
  ByteWriter w;
  w.put_magic(kMagic);
  w.put_u32(kVersion);
  w.put_u32(static_cast<std::uint32_t>(ds.dim()));
  w.put_u64(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    w.put_f64s(ds.key(i));
    w.put_u32(ds.value(i));
    w.put_f64(ds.key_conf(i));
  }
  return w.take();
}

Datastore deserialize_datastore(std::span<const std::uint8_t> bytes, std::optional<std::size_t> expected_dim) {
  ByteReader r(bytes);
  r.expect_magic(kMagic, "datastore");
  const auto version = r.get_u32();
  if (version != kVersion) throw Error(ErrorKind::format, "unsupported datastore version " + std::to_string(version));
  const std::size_t dim = r.get_u32();
  if (expected_dim && *expected_dim != dim) {
    throw Error(ErrorKind::dim_mismatch, "datastore has dimension " + std::to_string(dim) + ", expected " +
                                             std::to_string(*expected_dim));
  }
  const std::uint64_t count = r.get_u64();
  const std::size_t entry_bytes = 8 * dim + 4 + 8;
  if (count > r.remaining() / entry_bytes) {
    throw Error(ErrorKind::truncated, "datastore declares " + std::to_string(count) + " entries but holds " +
                                          std::to_string(r.remaining() / entry_bytes));
  }
  Datastore ds(dim);
  ds.reserve(count);
  Vector key(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    r.get_f64s(key);
    const Token value = r.get_u32();
    const double conf = r.get_f64();
    try {
      ds.append(key, value, conf);
    } catch (const Error& e) {
      throw Error(ErrorKind::format, "datastore entry " + std::to_string(i) + ": " + e.what());
    }
  }
  if (r.remaining() != 0) throw Error(ErrorKind::format, "trailing bytes after datastore entries");
  return ds;
}

std::filesystem::path manifest_path(const std::filesystem::path& datastore_path) {
  auto p = datastore_path;
  p += ".manifest";
  return p;
}

void save_datastore(const Datastore& ds, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_datastore(ds));
  write_file_atomic(manifest_path(path), serialize_manifest(ds.manifest()));
}

Datastore load_datastore(const std::filesystem::path& path, std::optional<std::size_t> expected_dim) {
  Datastore ds = deserialize_datastore(read_file(path), expected_dim);
  const auto mpath = manifest_path(path);
  if (std::filesystem::exists(mpath)) {
    Manifest m = parse_manifest(read_text_file(mpath));
    if (m.entry_count != ds.size()) {
      throw Error(ErrorKind::format, "manifest entry count " + std::to_string(m.entry_count) +
                                         " disagrees with datastore size " + std::to_string(ds.size()));
    }
    ds.set_manifest(std::move(m));
  }
  return ds;
}

std::string serialize_manifest(const Manifest& m) {
  std::ostringstream out;
  out << "format = KNDS\n"
      << "corpus_id = " << m.corpus_id << "\n"
      << "model_id = " << m.model_id << "\n"
      << "build_timestamp = " << m.build_timestamp << "\n"
      << "entry_count = " << m.entry_count << "\n";
  return out.str();
}

Manifest parse_manifest(std::string_view text) {
  Manifest m;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::format, "manifest line without '=': " + line);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "corpus_id") m.corpus_id = value;
      else if (key == "model_id") m.model_id = value;
      else if (key == "build_timestamp") m.build_timestamp = std::stoll(value);
      else if (key == "entry_count") m.entry_count = std::stoull(value);
    } catch (const std::exception&) {
      throw Error(ErrorKind::format, "manifest value for " + key + " is not a number");
    }
  }
  return m;
}

}  // namespace knnmt

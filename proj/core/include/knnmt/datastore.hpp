#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "knnmt/basemodel.hpp"
#include "knnmt/binary_io.hpp"
#include "knnmt/mathcore.hpp"
#include "knnmt/toytask.hpp"

namespace knnmt {

struct Entry {
  Vector key;
  Token value = 0;
  double key_conf = 0.0;  // base-model probability of `value` at build time, in (0, 1]
};

struct Manifest {
  std::string corpus_id;
  std::string model_id;
  std::int64_t build_timestamp = 0;
  std::uint64_t entry_count = 0;
};

// Immutable once built: keys are stored contiguously (row-major, one row per
// entry) for the brute-force scan.
class Datastore {
 public:
  explicit Datastore(std::size_t dim = 0) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<const double> key(std::size_t i) const { return {keys_.data() + i * dim_, dim_}; }
  Token value(std::size_t i) const { return values_[i]; }
  double key_conf(std::size_t i) const { return confs_[i]; }
  Entry entry(std::size_t i) const;

  std::span<const double> keys() const noexcept { return keys_; }
  std::span<const Token> values() const noexcept { return values_; }
  std::span<const double> key_confs() const noexcept { return confs_; }

  // Validates dimension, finiteness and 0 < key_conf <= 1.
  void append(std::span<const double> key, Token value, double key_conf);
  void reserve(std::size_t n);

  // New datastore holding the listed entries, in the given order.
  Datastore subset(std::span<const std::size_t> indices) const;

  const Manifest& manifest() const noexcept { return manifest_; }
  void set_manifest(Manifest m) { manifest_ = std::move(m); }

  friend bool operator==(const Datastore& a, const Datastore& b) {
    return a.dim_ == b.dim_ && a.keys_ == b.keys_ && a.values_ == b.values_ && a.confs_ == b.confs_;
  }

 private:
  std::size_t dim_;
  std::vector<double> keys_;
  std::vector<Token> values_;
  std::vector<double> confs_;
  Manifest manifest_;
};

// Teacher-forced pass over the corpus; one entry per target token, in corpus
// order.
Datastore build_datastore(const BaseModelParams& model, const Corpus& corpus);

enum class DistanceMode {
  euclidean,  // ||q - k||, what the kNN head consumes by default
  squared,    // ||q - k||^2
};

inline constexpr std::size_t kPseudoIndex = std::numeric_limits<std::size_t>::max();

struct Neighbor {
  std::size_t index = 0;  // kPseudoIndex for synthetic training pairs
  double distance = 0.0;
  Token value = 0;
  double key_conf = 0.0;
  Vector key;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

double distance_between(std::span<const double> a, std::span<const double> b, DistanceMode mode);

// Strict weak order used everywhere neighbors are sorted: ascending distance,
// then ascending entry index.
bool neighbor_less(const Neighbor& a, const Neighbor& b);

// Exact K nearest entries, ascending by distance, ties by smaller index.
// Throws ErrorKind::invalid_argument when k is 0 or exceeds the entry count,
// ErrorKind::dim_mismatch for a query of the wrong size.
std::vector<Neighbor> knn_search(const Datastore& ds, std::span<const double> query, std::size_t k,
                                 DistanceMode mode = DistanceMode::euclidean);

// Entry indices ordered by descending key_conf, ties by ascending index.
std::vector<std::size_t> confidence_ranking(const Datastore& ds);

// Removes round(fraction * n) uniformly chosen entries. 0 <= fraction < 1.
Datastore prune_random(const Datastore& ds, double fraction, std::uint64_t seed);
// Removes the round(fraction * n) highest-confidence entries. 0 <= fraction < 1.
Datastore prune_confidence_top(const Datastore& ds, double fraction);
// Removes confidence ranks [round(lo*n/100), round(hi*n/100)). Throws
// ErrorKind::invalid_argument when nothing would remain.
Datastore prune_confidence_interval(const Datastore& ds, double lo_pct, double hi_pct);

// "KNDS", u32 version, u32 dim, u64 count, then per entry: dim f64 key,
// u32 value, f64 key_conf. All little-endian.
Bytes serialize_datastore(const Datastore& ds);
Datastore deserialize_datastore(std::span<const std::uint8_t> bytes,
                                std::optional<std::size_t> expected_dim = std::nullopt);
void save_datastore(const Datastore& ds, const std::filesystem::path& path);
Datastore load_datastore(const std::filesystem::path& path,
                         std::optional<std::size_t> expected_dim = std::nullopt);

// Sidecar "<path>.manifest" in key = value form.
std::filesystem::path manifest_path(const std::filesystem::path& datastore_path);
std::string serialize_manifest(const Manifest& m);
Manifest parse_manifest(std::string_view text);

}  // namespace knnmt

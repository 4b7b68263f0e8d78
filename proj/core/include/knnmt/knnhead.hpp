#pragma once

// Confidence-aware kNN head.
//
// Given a query step (hidden state + base distribution) and its K retrieved
// neighbors, the head builds a kNN distribution
//
//     p_knn(w) ∝ Σ_{k: v_k = w} exp(-d_k / T + c_k)
//
// where T comes from a small network over the distance/diversity features and
// c_k is a per-neighbor calibration term computed from the base model's
// log-confidence in v_k (at the query and at the stored key). The mixing
// weight λ is a two-way softmax between a kNN score (distance features) and a
// base-model score (log-confidences plus the base model's top-K log-probs):
//
//     p = λ p_knn + (1 - λ) p_base
//
// Three variants share this code path:
//   vanilla  - fixed λ and T, no calibration, nothing trainable
//   adaptive - learned T and kNN score from distance features only; the
//              base-model score is a single learned scalar, c = 0
//   robust   - the full confidence-aware head

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "knnmt/basemodel.hpp"
#include "knnmt/binary_io.hpp"
#include "knnmt/datastore.hpp"
#include "knnmt/mathcore.hpp"

namespace knnmt {

enum class Variant : std::uint8_t { vanilla = 0, adaptive = 1, robust = 2 };

std::string_view to_string(Variant v);
// Throws ErrorKind::invalid_argument for unknown names.
Variant parse_variant(std::string_view name);

inline constexpr double kTemperatureFloor = 1e-3;
inline constexpr double kProbabilityFloor = 1e-10;

struct HeadShape {
  std::size_t k = 8;
  std::size_t wp_hidden = 4;   // distance-feature encoder width
  std::size_t dc_hidden = 32;  // per-pair calibration encoder width

  friend bool operator==(const HeadShape&, const HeadShape&) = default;
};

// Non-trainable switches. The ablations flip these on a robust head.
struct HeadOptions {
  // The temperature and kNN-score heads read the same distance encoder; when
  // false the kNN score gets an encoder of its own.
  bool shared_encoder = true;
  bool use_calibration = true;        // false: c = 0
  bool use_weight_prediction = true;  // false: λ = fixed_lambda
  double fixed_lambda = 0.5;          // vanilla, or robust without weight prediction
  double fixed_temperature = 10.0;    // vanilla only

  friend bool operator==(const HeadOptions&, const HeadOptions&) = default;
};

struct HeadParams {
  Variant variant = Variant::robust;
  HeadShape shape;
  HeadOptions options;

  Affine temperature_out;   // wp_hidden -> 1
  Affine distance_encoder;  // 2K -> wp_hidden, over [d; r]
  Affine calib_out;         // dc_hidden -> 1
  Affine calib_encoder;     // 2 -> dc_hidden, over [log p(v_k|query); log p(v_k|key)]
  Affine knn_score_out;     // wp_hidden -> 1
  Affine nmt_score;         // 3K -> 1, over [logp_query; logp_key; logp_top]
  Affine score_encoder;     // 2K -> wp_hidden; used only when !shared_encoder
  Vector nmt_bias;          // size 1; the adaptive variant's constant base-model score

  // Zero parameters with the right shapes.
  HeadParams(Variant variant, const HeadShape& shape, const HeadOptions& options = {});

  // Blocks that receive gradient for this variant/options, in checkpoint order.
  // Empty for vanilla.
  std::vector<ParamBlock> trainable_blocks();
  // Every block, in checkpoint order.
  std::vector<ParamBlock> all_blocks();

  friend bool operator==(const HeadParams&, const HeadParams&) = default;
};

// Output layers start at zero (T = softplus(0) + floor, c = 0, λ = 0.5);
// encoders are uniform(-0.1, 0.1) from per-layer seeded streams.
HeadParams init_head_params(Variant variant, const HeadShape& shape, const HeadOptions& options,
                            std::uint64_t seed);

struct FeatureBundle {
  Vector distances;        // d_k, ascending
  Vector distinct_counts;  // r_k: distinct values among the first k neighbors
  Vector logp_query;       // log p_base(v_k) at the query step
  Vector logp_key;         // log key_conf_k
  Vector logp_top;         // log of the K largest base probabilities, descending
  std::vector<Token> values;

  std::size_t k() const noexcept { return distances.size(); }
  Vector distance_input() const;  // [d; r]
  Vector score_input() const;     // [logp_query; logp_key; logp_top]
};

// Throws ErrorKind::invalid_argument when neighbors are not sorted by
// (distance, index) or empty.
FeatureBundle extract_features(const ForwardRecord& record, std::span<const Neighbor> neighbors);

double temperature(const HeadParams& params, const FeatureBundle& features);
Vector calibration(const HeadParams& params, const FeatureBundle& features);

// Throws ErrorKind::invalid_argument for T <= 0 or a size mismatch, and
// ErrorKind::numerical when the masses cannot be normalized.
Vector knn_distribution(std::span<const Neighbor> neighbors, double temperature, std::span<const double> c,
                        std::size_t target_vocab);

struct LambdaResult {
  double lambda = 0.5;
  double knn_score = 0.0;
  double nmt_score = 0.0;
};

LambdaResult lambda_weight(const HeadParams& params, const FeatureBundle& features);

// λ p_knn + (1 - λ) p_base with λ in [0, 1].
Vector interpolate(std::span<const double> p_knn, std::span<const double> p_base, double lambda);

// Intermediate activations kept for the backward pass.
struct HeadActivations {
  Vector distance_input;
  Vector distance_hidden;  // tanh(distance_encoder(x))
  Vector score_hidden;     // tanh(score_encoder(x)) when the encoder is not shared
  std::vector<Vector> calib_inputs;
  std::vector<Vector> calib_hidden;
  Vector score_input;
  Vector pair_weights;     // softmax over pairs of -d_k/T + c_k
  double raw_temperature = 0.0;
};

struct InterpolationTrace {
  FeatureBundle features;
  double temperature = 0.0;
  Vector calibration;
  double knn_score = 0.0;
  double nmt_score = 0.0;
  double lambda = 0.5;
  Vector p_knn;
  Vector p_base;
  Vector p_final;
  std::optional<bool> gold_retrieved;
  HeadActivations activations;
};

// Throws ErrorKind::invalid_argument when the neighbor count differs from
// params.shape.k.
InterpolationTrace head_forward(const HeadParams& params, const ForwardRecord& record,
                                std::span<const Neighbor> neighbors, std::optional<Token> gold = std::nullopt);

// Accumulates scale * d(-log max(p_final(gold), floor))/dθ into `grads`,
// which must have been created with the same variant/shape/options.
void head_backward(const HeadParams& params, const InterpolationTrace& trace, Token gold, double scale,
                   HeadParams& grads);

// "KNHD", u32 version, u8 variant tag, u32 K, u32 wp_hidden, u32 dc_hidden,
// u8 option flags, then every block of all_blocks() followed by the fixed
// λ and T as little-endian f64.
Bytes serialize_head(const HeadParams& params);
HeadParams deserialize_head(std::span<const std::uint8_t> bytes);
void save_head(const HeadParams& params, const std::filesystem::path& path);
HeadParams load_head(const std::filesystem::path& path);

}  // namespace knnmt

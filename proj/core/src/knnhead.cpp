#include "knnmt/knnhead.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "knnmt/error.hpp"

namespace knnmt {

namespace {

constexpr char kMagic[] = "KNHD";
constexpr std::uint32_t kVersion = 1;

constexpr std::uint8_t kFlagSharedEncoder = 1u << 0;
constexpr std::uint8_t kFlagCalibration = 1u << 1;
constexpr std::uint8_t kFlagWeightPrediction = 1u << 2;

double floored_log(double p) { return std::log(std::max(p, kProbabilityFloor)); }

bool learns_temperature(const HeadParams& p) { return p.variant != Variant::vanilla; }
bool learns_calibration(const HeadParams& p) {
  return p.variant == Variant::robust && p.options.use_calibration;
}
bool learns_lambda(const HeadParams& p) {
  return p.variant == Variant::adaptive || (p.variant == Variant::robust && p.options.use_weight_prediction);
}

Vector encode(const Affine& encoder, std::span<const double> x) {
  Vector h = affine(encoder, x);
  tanh_inplace(h);
  return h;
}

double scalar_out(const Affine& layer, std::span<const double> h) { return affine(layer, h)[0]; }

Vector calib_input(const FeatureBundle& f, std::size_t k) { return {f.logp_query[k], f.logp_key[k]}; }

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::vanilla: return "vanilla";
    case Variant::adaptive: return "adaptive";
    case Variant::robust: return "robust";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  if (name == "vanilla") return Variant::vanilla;
  if (name == "adaptive") return Variant::adaptive;
  if (name == "robust") return Variant::robust;
  throw Error(ErrorKind::invalid_argument, "unknown head variant '" + std::string(name) + "'");
}

HeadParams::HeadParams(Variant v, const HeadShape& s, const HeadOptions& o)
    : variant(v),
      shape(s),
      options(o),
      temperature_out(1, s.wp_hidden),
      distance_encoder(s.wp_hidden, 2 * s.k),
      calib_out(1, s.dc_hidden),
      calib_encoder(s.dc_hidden, 2),
      knn_score_out(1, s.wp_hidden),
      nmt_score(1, 3 * s.k),
      score_encoder(s.wp_hidden, 2 * s.k),
      nmt_bias(1, 0.0) {
  if (s.k == 0 || s.wp_hidden == 0 || s.dc_hidden == 0) {
    throw Error(ErrorKind::invalid_argument, "head shape dimensions must be positive");
  }
}

std::vector<ParamBlock> HeadParams::all_blocks() {
  const std::pair<std::string_view, Affine*> layers[] = {
      {"temperature_out", &temperature_out}, {"distance_encoder", &distance_encoder},
      {"calib_out", &calib_out},             {"calib_encoder", &calib_encoder},
      {"knn_score_out", &knn_score_out},     {"nmt_score", &nmt_score},
      {"score_encoder", &score_encoder},
  };
  std::vector<ParamBlock> out;
  for (const auto& [name, layer] : layers) {
    for (auto& b : affine_blocks(name, *layer)) out.push_back(b);
  }
  out.push_back({"nmt_bias", nmt_bias});
  return out;
}

std::vector<ParamBlock> HeadParams::trainable_blocks() {
  std::vector<ParamBlock> out;
  if (variant == Variant::vanilla) return out;
  auto add = [&out](std::string_view name, Affine& layer) {
    for (auto& b : affine_blocks(name, layer)) out.push_back(b);
  };
  add("temperature_out", temperature_out);
  add("distance_encoder", distance_encoder);
  if (learns_calibration(*this)) {
    add("calib_out", calib_out);
    add("calib_encoder", calib_encoder);
  }
  if (learns_lambda(*this)) {
    add("knn_score_out", knn_score_out);
    if (variant == Variant::robust) add("nmt_score", nmt_score);
    if (!options.shared_encoder) add("score_encoder", score_encoder);
    if (variant == Variant::adaptive) out.push_back({"nmt_bias", nmt_bias});
  }
  return out;
}

HeadParams init_head_params(Variant variant, const HeadShape& shape, const HeadOptions& options,
                            std::uint64_t seed) {
  HeadParams p(variant, shape, options);
  SeededRng root(seed);
  auto fill = [&root](Affine& layer, std::string_view label) {
    SeededRng rng = root.child(label);
    for (double& w : layer.weight.data()) w = rng.uniform(-0.1, 0.1);
  };
  fill(p.distance_encoder, "distance_encoder");
  fill(p.calib_encoder, "calib_encoder");
  fill(p.score_encoder, "score_encoder");
  return p;
}

Vector FeatureBundle::distance_input() const {
  Vector x(distances);
  x.insert(x.end(), distinct_counts.begin(), distinct_counts.end());
  return x;
}

Vector FeatureBundle::score_input() const {
  Vector x(logp_query);
  x.insert(x.end(), logp_key.begin(), logp_key.end());
  x.insert(x.end(), logp_top.begin(), logp_top.end());
  return x;
}

FeatureBundle extract_features(const ForwardRecord& record, std::span<const Neighbor> neighbors) {
  const std::size_t k = neighbors.size();
  if (k == 0) throw Error(ErrorKind::invalid_argument, "extract_features: no neighbors");
  for (std::size_t i = 1; i < k; ++i) {
    if (neighbor_less(neighbors[i], neighbors[i - 1])) {
      throw Error(ErrorKind::invalid_argument, "extract_features: neighbors are not sorted by distance");
    }
  }
  if (record.probs.size() < k) {
    throw Error(ErrorKind::invalid_argument, "extract_features: vocabulary smaller than K");
  }

  FeatureBundle f;
  f.distances.reserve(k);
  f.distinct_counts.reserve(k);
  f.logp_query.reserve(k);
  f.logp_key.reserve(k);
  std::vector<Token> seen;
  for (const auto& n : neighbors) {
    if (n.value >= record.probs.size()) {
      throw Error(ErrorKind::out_of_range, "extract_features: neighbor value outside vocabulary");
    }
    if (std::find(seen.begin(), seen.end(), n.value) == seen.end()) seen.push_back(n.value);
    f.distances.push_back(n.distance);
    f.distinct_counts.push_back(static_cast<double>(seen.size()));
    f.logp_query.push_back(floored_log(record.probs[n.value]));
    f.logp_key.push_back(floored_log(n.key_conf));
    f.values.push_back(n.value);
  }
  Vector top(k);
  std::partial_sort_copy(record.probs.begin(), record.probs.end(), top.begin(), top.end(), std::greater<>());
  f.logp_top.reserve(k);
  for (double p : top) f.logp_top.push_back(floored_log(p));
  return f;
}

double temperature(const HeadParams& params, const FeatureBundle& features) {
  if (!learns_temperature(params)) return params.options.fixed_temperature;
  const Vector h = encode(params.distance_encoder, features.distance_input());
  return softplus(scalar_out(params.temperature_out, h)) + kTemperatureFloor;
}

Vector calibration(const HeadParams& params, const FeatureBundle& features) {
  Vector c(features.k(), 0.0);
  if (!learns_calibration(params)) return c;
  for (std::size_t k = 0; k < c.size(); ++k) {
    c[k] = scalar_out(params.calib_out, encode(params.calib_encoder, calib_input(features, k)));
  }
  return c;
}

Vector knn_distribution(std::span<const Neighbor> neighbors, double temperature, std::span<const double> c,
                        std::size_t target_vocab) {
  if (!(temperature > 0.0)) throw Error(ErrorKind::invalid_argument, "knn_distribution: temperature must be > 0");
  if (c.size() != neighbors.size() || neighbors.empty()) {
    throw Error(ErrorKind::invalid_argument, "knn_distribution: need one calibration term per neighbor");
  }
  Vector logits(neighbors.size());
  for (std::size_t k = 0; k < neighbors.size(); ++k) logits[k] = -neighbors[k].distance / temperature + c[k];
  if (!all_finite(logits)) throw Error(ErrorKind::numerical, "knn_distribution: non-finite pair scores");
  const Vector weights = softmax(logits);
  Vector p(target_vocab, 0.0);
  for (std::size_t k = 0; k < neighbors.size(); ++k) {
    if (neighbors[k].value >= target_vocab) {
      throw Error(ErrorKind::out_of_range, "knn_distribution: neighbor value outside vocabulary");
    }
    p[neighbors[k].value] += weights[k];
  }
  return p;
}

LambdaResult lambda_weight(const HeadParams& params, const FeatureBundle& features) {
  LambdaResult r;
  if (!learns_lambda(params)) {
    r.lambda = params.options.fixed_lambda;
    return r;
  }
  const Vector x = features.distance_input();
  const Vector h = encode(params.options.shared_encoder ? params.distance_encoder : params.score_encoder, x);
  r.knn_score = scalar_out(params.knn_score_out, h);
  r.nmt_score = params.variant == Variant::adaptive ? params.nmt_bias[0]
                                                    : scalar_out(params.nmt_score, features.score_input());
  r.lambda = sigmoid(r.knn_score - r.nmt_score);
  return r;
}

Vector interpolate(std::span<const double> p_knn, std::span<const double> p_base, double lambda) {
  if (p_knn.size() != p_base.size()) throw Error(ErrorKind::shape_mismatch, "interpolate: size mismatch");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorKind::invalid_argument, "interpolate: λ outside [0, 1]");
  Vector out(p_knn.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = lambda * p_knn[i] + (1.0 - lambda) * p_base[i];
  return out;
}

InterpolationTrace head_forward(const HeadParams& params, const ForwardRecord& record,
                                std::span<const Neighbor> neighbors, std::optional<Token> gold) {
  if (neighbors.size() != params.shape.k) {
    throw Error(ErrorKind::invalid_argument, "head_forward: expected " + std::to_string(params.shape.k) +
                                                 " neighbors, got " + std::to_string(neighbors.size()));
  }
  InterpolationTrace tr;
  tr.features = extract_features(record, neighbors);
  auto& act = tr.activations;
  act.distance_input = tr.features.distance_input();

  if (learns_temperature(params)) {
    act.distance_hidden = encode(params.distance_encoder, act.distance_input);
    act.raw_temperature = scalar_out(params.temperature_out, act.distance_hidden);
    tr.temperature = softplus(act.raw_temperature) + kTemperatureFloor;
  } else {
    tr.temperature = params.options.fixed_temperature;
  }

  tr.calibration.assign(params.shape.k, 0.0);
  if (learns_calibration(params)) {
    for (std::size_t k = 0; k < params.shape.k; ++k) {
      act.calib_inputs.push_back(calib_input(tr.features, k));
      act.calib_hidden.push_back(encode(params.calib_encoder, act.calib_inputs.back()));
      tr.calibration[k] = scalar_out(params.calib_out, act.calib_hidden.back());
    }
  }

  if (learns_lambda(params)) {
    const Vector* h = &act.distance_hidden;
    if (!params.options.shared_encoder) {
      act.score_hidden = encode(params.score_encoder, act.distance_input);
      h = &act.score_hidden;
    }
    tr.knn_score = scalar_out(params.knn_score_out, *h);
    if (params.variant == Variant::adaptive) {
      tr.nmt_score = params.nmt_bias[0];
    } else {
      act.score_input = tr.features.score_input();
      tr.nmt_score = scalar_out(params.nmt_score, act.score_input);
    }
    tr.lambda = sigmoid(tr.knn_score - tr.nmt_score);
  } else {
    tr.lambda = params.options.fixed_lambda;
  }

  Vector logits(params.shape.k);
  for (std::size_t k = 0; k < params.shape.k; ++k) {
    logits[k] = -tr.features.distances[k] / tr.temperature + tr.calibration[k];
  }
  if (!all_finite(logits)) throw Error(ErrorKind::numerical, "head_forward: non-finite pair scores");
  act.pair_weights = softmax(logits);
  tr.p_knn.assign(record.probs.size(), 0.0);
  for (std::size_t k = 0; k < params.shape.k; ++k) tr.p_knn[neighbors[k].value] += act.pair_weights[k];

  tr.p_base = record.probs;
  tr.p_final = interpolate(tr.p_knn, tr.p_base, tr.lambda);
  if (gold) {
    tr.gold_retrieved = std::any_of(neighbors.begin(), neighbors.end(),
                                    [g = *gold](const Neighbor& n) { return n.value == g; });
  }
  return tr;
}

void head_backward(const HeadParams& params, const InterpolationTrace& tr, Token gold, double scale,
                   HeadParams& grads) {
  if (params.variant == Variant::vanilla) return;
  const double p_gold = tr.p_final.at(gold);
  if (p_gold <= kProbabilityFloor) return;  // the loss is clamped flat there

  const auto& act = tr.activations;
  const std::size_t K = params.shape.k;
  const double dp = -scale / p_gold;  // dL/dp_final(gold)
  const double a = tr.p_knn[gold];
  const double b = tr.p_base[gold];
  const double lambda = tr.lambda;

  // Mixing weight: λ = sigmoid(knn_score - nmt_score).
  double ds = 0.0;
  Vector d_hidden(params.shape.wp_hidden, 0.0);
  if (learns_lambda(params)) {
    ds = dp * (a - b) * lambda * (1.0 - lambda);
    const double gk[1] = {ds};
    const Vector& h = params.options.shared_encoder ? act.distance_hidden : act.score_hidden;
    affine_grad_accumulate(grads.knn_score_out, gk, h);
    if (params.variant == Variant::adaptive) {
      grads.nmt_bias[0] -= ds;
    } else {
      const double gn[1] = {-ds};
      affine_grad_accumulate(grads.nmt_score, gn, act.score_input);
    }
    if (params.options.shared_encoder) {
      affine_transpose_accumulate(params.knn_score_out.weight, gk, d_hidden);
    } else {
      Vector dh(params.shape.wp_hidden, 0.0);
      affine_transpose_accumulate(params.knn_score_out.weight, gk, dh);
      for (std::size_t j = 0; j < dh.size(); ++j) dh[j] *= 1.0 - h[j] * h[j];
      affine_grad_accumulate(grads.score_encoder, dh, act.distance_input);
    }
  }

  // kNN distribution: a = Σ_{v_k = gold} q_k, q = softmax(-d/T + c).
  const double da = dp * lambda;
  Vector dlogit(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double indicator = tr.features.values[k] == gold ? 1.0 : 0.0;
    dlogit[k] = da * act.pair_weights[k] * (indicator - a);
  }

  // Temperature: logit_k = -d_k / T + c_k, T = softplus(raw) + floor.
  double dT = 0.0;
  for (std::size_t k = 0; k < K; ++k) dT += dlogit[k] * tr.features.distances[k] / (tr.temperature * tr.temperature);
  const double draw[1] = {dT * sigmoid(act.raw_temperature)};
  affine_grad_accumulate(grads.temperature_out, draw, act.distance_hidden);
  affine_transpose_accumulate(params.temperature_out.weight, draw, d_hidden);

  for (std::size_t j = 0; j < d_hidden.size(); ++j) {
    const double h = act.distance_hidden[j];
    d_hidden[j] *= 1.0 - h * h;
  }
  affine_grad_accumulate(grads.distance_encoder, d_hidden, act.distance_input);

  // Per-pair calibration with shared weights.
  if (learns_calibration(params)) {
    Vector dz(params.shape.dc_hidden);
    for (std::size_t k = 0; k < K; ++k) {
      if (dlogit[k] == 0.0) continue;
      const double gc[1] = {dlogit[k]};
      const Vector& h = act.calib_hidden[k];
      affine_grad_accumulate(grads.calib_out, gc, h);
      std::fill(dz.begin(), dz.end(), 0.0);
      affine_transpose_accumulate(params.calib_out.weight, gc, dz);
      for (std::size_t j = 0; j < dz.size(); ++j) dz[j] *= 1.0 - h[j] * h[j];
      affine_grad_accumulate(grads.calib_encoder, dz, act.calib_inputs[k]);
    }
  }
}

Bytes serialize_head(const HeadParams& params) {
  HeadParams copy = params;
  ByteWriter w;
  w.put_magic(kMagic);
  w.put_u32(kVersion);
  w.put_u8(static_cast<std::uint8_t>(params.variant));
  w.put_u32(static_cast<std::uint32_t>(params.shape.k));
  w.put_u32(static_cast<std::uint32_t>(params.shape.wp_hidden));
  w.put_u32(static_cast<std::uint32_t>(params.shape.dc_hidden));
  std::uint8_t flags = 0;
  if (params.options.shared_encoder) flags |= kFlagSharedEncoder;
  if (params.options.use_calibration) flags |= kFlagCalibration;
  if (params.options.use_weight_prediction) flags |= kFlagWeightPrediction;
  w.put_u8(flags);
  for (const auto& block : copy.all_blocks()) w.put_f64s(block.values);
  w.put_f64(params.options.fixed_lambda);
  w.put_f64(params.options.fixed_temperature);
  return w.take();
}

HeadParams deserialize_head(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic(kMagic, "head checkpoint");
  const auto version = r.get_u32();
  if (version != kVersion) throw Error(ErrorKind::format, "unsupported head checkpoint version " + std::to_string(version));
  const auto tag = r.get_u8();
  if (tag > static_cast<std::uint8_t>(Variant::robust)) {
    throw Error(ErrorKind::format, "unknown head variant tag " + std::to_string(tag));
  }
  HeadShape shape;
  shape.k = r.get_u32();
  shape.wp_hidden = r.get_u32();
  shape.dc_hidden = r.get_u32();
  const auto flags = r.get_u8();
  HeadOptions options;
  options.shared_encoder = flags & kFlagSharedEncoder;
  options.use_calibration = flags & kFlagCalibration;
  options.use_weight_prediction = flags & kFlagWeightPrediction;
  if (shape.k == 0 || shape.wp_hidden == 0 || shape.dc_hidden == 0 || shape.k > (1u << 16) ||
      shape.wp_hidden > (1u << 16) || shape.dc_hidden > (1u << 16)) {
    throw Error(ErrorKind::format, "implausible head dimensions");
  }
  HeadParams params(static_cast<Variant>(tag), shape, options);
  for (auto& block : params.all_blocks()) r.get_f64s(block.values);
  params.options.fixed_lambda = r.get_f64();
  params.options.fixed_temperature = r.get_f64();
  if (r.remaining() != 0) throw Error(ErrorKind::format, "trailing bytes after head checkpoint");
  return params;
}

void save_head(const HeadParams& params, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_head(params));
}

HeadParams load_head(const std::filesystem::path& path) { return deserialize_head(read_file(path)); }

}  // namespace knnmt

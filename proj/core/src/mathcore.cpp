#include "knnmt/mathcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "knnmt/binary_io.hpp"
#include "knnmt/error.hpp"

namespace knnmt {

Vector softmax(std::span<const double> logits) {
  if (logits.empty()) throw Error(ErrorKind::invalid_argument, "softmax of an empty vector");
  if (!all_finite(logits)) throw Error(ErrorKind::non_finite, "softmax input is not finite");
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vector out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - mx);
  return mx + std::log(sum);
}

Vector affine(const Matrix& w, std::span<const double> b, std::span<const double> x) {
  if (w.cols() != x.size() || w.rows() != b.size()) {
    throw Error(ErrorKind::shape_mismatch,
                "affine: W is " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                    ", b has " + std::to_string(b.size()) + ", x has " + std::to_string(x.size()));
  }
  Vector y(b.begin(), b.end());
  for (std::size_t r = 0; r < w.rows(); ++r) y[r] += dot(w.row(r), x);
  return y;
}

Vector affine(const Affine& layer, std::span<const double> x) {
  return affine(layer.weight, layer.bias, x);
}

void affine_transpose_accumulate(const Matrix& w, std::span<const double> g, std::span<double> y) {
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double gr = g[r];
    if (gr == 0.0) continue;
    auto row = w.row(r);
    for (std::size_t c = 0; c < w.cols(); ++c) y[c] += gr * row[c];
  }
}

void affine_grad_accumulate(Affine& grad, std::span<const double> g, std::span<const double> x) {
  for (std::size_t r = 0; r < grad.weight.rows(); ++r) {
    const double gr = g[r];
    grad.bias[r] += gr;
    if (gr == 0.0) continue;
    auto row = grad.weight.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += gr * x[c];
  }
}

double softplus(double x) {
  // log(1 + e^x) without overflow for large x or cancellation for small x.
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void tanh_inplace(std::span<double> v) {
  for (double& x : v) x = std::tanh(x);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::vector<ParamBlock> affine_blocks(std::string_view name, Affine& layer) {
  return {{std::string(name) + ".weight", layer.weight.data()},
          {std::string(name) + ".bias", layer.bias}};
}

AdamState make_adam_state(std::span<const ParamBlock> params) {
  AdamState state;
  for (const auto& block : params) {
    state.first_moment.emplace_back(block.values.size(), 0.0);
    state.second_moment.emplace_back(block.values.size(), 0.0);
  }
  return state;
}

void adam_step(std::span<const ParamBlock> params, std::span<const ParamBlock> grads,
               AdamState& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw Error(ErrorKind::shape_mismatch, "adam_step: parameter/gradient/state block count differs");
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].values.size() != grads[b].values.size() ||
        params[b].values.size() != state.first_moment[b].size()) {
      throw Error(ErrorKind::shape_mismatch, "adam_step: shape mismatch in block " + params[b].name);
    }
    if (!all_finite(grads[b].values)) {
      throw Error(ErrorKind::non_finite, "adam_step: non-finite gradient in block " + params[b].name);
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto p = params[b].values;
    auto g = grads[b].values;
    auto& m = state.first_moment[b];
    auto& v = state.second_moment[b];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  return splitmix64(splitmix64(seed) ^ splitmix64(salt + 0x632be59bd9b4e019ULL));
}

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

SeededRng SeededRng::child(std::string_view label) const {
  return SeededRng(mix_seed(seed_, fnv1a64(label)));
}

SeededRng SeededRng::child(std::uint64_t index) const {
  return SeededRng(mix_seed(seed_, splitmix64(index ^ 0xa0761d6478bd642fULL)));
}

double SeededRng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t SeededRng::uniform_index(std::uint64_t n) {
  if (n == 0) throw Error(ErrorKind::invalid_argument, "uniform_index: empty range");
  // Rejection sampling keeps the draw exactly uniform.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

double SeededRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * 3.14159265358979323846 * u2;
  spare_normal_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

Vector finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                        std::span<const double> params, double eps) {
  Vector x(params.begin(), params.end());
  Vector grad(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double up = f(x);
    x[i] = orig - eps;
    const double down = f(x);
    x[i] = orig;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

}  // namespace knnmt

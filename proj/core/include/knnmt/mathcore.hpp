#pragma once

// Small dense linear algebra, activations, Adam and seeded randomness.
// Everything is 64-bit floating point; shapes are tiny (tens to hundreds of
// elements) so the routines favour clarity over blocking or SIMD tricks.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace knnmt {

using Vector = std::vector<double>;

// Row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// W x + b. A layer with a bias is the building block of every learned map.
struct Affine {
  Matrix weight;
  Vector bias;

  Affine() = default;
  Affine(std::size_t out, std::size_t in) : weight(out, in), bias(out, 0.0) {}

  std::size_t in_dim() const noexcept { return weight.cols(); }
  std::size_t out_dim() const noexcept { return weight.rows(); }

  friend bool operator==(const Affine&, const Affine&) = default;
};

// Max-subtracted softmax. Throws on empty or non-finite input.
Vector softmax(std::span<const double> logits);

double log_sum_exp(std::span<const double> values);

// W x + b; throws ErrorKind::shape_mismatch on incompatible shapes.
Vector affine(const Matrix& w, std::span<const double> b, std::span<const double> x);
Vector affine(const Affine& layer, std::span<const double> x);

// y[i] += W^T g  (the input gradient of an affine map).
void affine_transpose_accumulate(const Matrix& w, std::span<const double> g, std::span<double> y);
// dW += g x^T, db += g.
void affine_grad_accumulate(Affine& grad, std::span<const double> g, std::span<const double> x);

double softplus(double x);
double sigmoid(double x);
void tanh_inplace(std::span<double> v);

double dot(std::span<const double> a, std::span<const double> b);
double squared_distance(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> v);

// A named view into one parameter tensor; optimizers and checkpoints walk
// lists of these in declaration order.
struct ParamBlock {
  std::string name;
  std::span<double> values;
};

std::vector<ParamBlock> affine_blocks(std::string_view name, Affine& layer);

struct AdamState {
  std::vector<Vector> first_moment;
  std::vector<Vector> second_moment;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

AdamState make_adam_state(std::span<const ParamBlock> params);

// Bias-corrected Adam update of `params` in place. `grads` must mirror the
// block structure of `params`; a non-finite gradient throws
// ErrorKind::non_finite naming the offending block and leaves params intact.
void adam_step(std::span<const ParamBlock> params, std::span<const ParamBlock> grads,
               AdamState& state, double lr);

// Deterministic generator: mt19937_64 for the raw stream, with hand-written
// uniform/normal transforms so draws do not depend on the standard library's
// distribution implementations.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }

  // Independent stream keyed by (seed, label). Does not advance *this.
  SeededRng child(std::string_view label) const;
  SeededRng child(std::uint64_t index) const;

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n); n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  // Standard normal via Box-Muller.
  double normal();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

// Central differences, one coordinate at a time.
Vector finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                        std::span<const double> params, double eps);

}  // namespace knnmt

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "knnmt/basemodel.hpp"
#include "knnmt/datastore.hpp"
#include "knnmt/knnhead.hpp"
#include "knnmt/robusttrain.hpp"

namespace knnmt::harness {

struct ExperimentConfig {
  std::uint64_t seed = 1;

  // Task.
  std::size_t source_vocab = 50;
  std::size_t target_vocab = 60;
  double shift_fraction = 0.3;
  std::size_t general_sentences = 2000;
  double general_heldout_fraction = 0.1;
  std::size_t train_sentences = 2000;
  std::size_t dev_sentences = 200;
  std::size_t test_sentences = 200;
  std::size_t min_length = 5;
  std::size_t max_length = 15;

  // Base model.
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 32;
  std::size_t base_epochs = 10;
  std::size_t base_batch_size = 32;
  double base_lr = 1e-2;

  // Head and robust training.
  std::size_t k = 8;
  std::size_t wp_hidden = 4;
  std::size_t dc_hidden = 32;
  bool shared_encoder = true;
  bool squared_distance = false;
  double alpha0 = 1.0;
  double beta = 1000.0;
  double sigma = 0.01;
  double head_lr = 3e-4;
  std::size_t batch_size = 32;
  std::size_t steps = 5000;

  // Vanilla grid search.
  std::vector<double> lambda_grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<double> temperature_grid{1.0, 10.0, 100.0};

  // Studies.
  std::vector<double> prune_fractions{0.0, 0.2, 0.4, 0.6, 0.8};
  std::vector<std::pair<double, double>> prelim_intervals{{0, 20}, {20, 40}, {40, 60}, {60, 80}, {80, 100}};
  double prelim_random_fraction = 0.2;
  std::vector<double> confidence_bins{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<std::string> variants{"base", "vanilla", "adaptive", "robust"};

  // Throws ErrorKind::config describing the first invalid field.
  void validate() const;

  DistanceMode distance_mode() const {
    return squared_distance ? DistanceMode::squared : DistanceMode::euclidean;
  }
  BaseModelDims base_dims() const { return {source_vocab, target_vocab, embed_dim, hidden_dim}; }
  HeadShape head_shape() const { return {k, wp_hidden, dc_hidden}; }
  TrainConfig train_config(Variant variant) const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// "key = value" lines; '#' starts a comment; lists are comma-separated and
// intervals are written lo:hi. Unknown keys, duplicate keys and malformed
// values throw ErrorKind::config naming the line.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical rendering of every key, parseable by parse_config.
std::string render_config(const ExperimentConfig& config);

}  // namespace knnmt::harness

#include "knnmt/harness/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "knnmt/binary_io.hpp"
#include "knnmt/error.hpp"

namespace knnmt::harness {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  for (;;) {
    const auto next = s.find(sep, pos);
    out.push_back(trim(s.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos)));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw Error(ErrorKind::config, "config key '" + std::string(key) + "': cannot parse '" + std::string(value) +
                                     "' as " + std::string(expected));
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, "a number");
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, "a non-negative integer");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, v, "true/false");
}

std::vector<double> parse_doubles(std::string_view key, std::string_view v) {
  std::vector<double> out;
  for (auto item : split(v, ',')) out.push_back(parse_double(key, item));
  return out;
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& f) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += f(items[i]);
  }
  return out;
}

using Setter = std::function<void(ExperimentConfig&, std::string_view key, std::string_view value)>;

template <typename T>
Setter size_field(T ExperimentConfig::*field) {
  return [field](ExperimentConfig& c, std::string_view k, std::string_view v) {
    c.*field = static_cast<T>(parse_u64(k, v));
  };
}

Setter double_field(double ExperimentConfig::*field) {
  return [field](ExperimentConfig& c, std::string_view k, std::string_view v) { c.*field = parse_double(k, v); };
}

Setter bool_field(bool ExperimentConfig::*field) {
  return [field](ExperimentConfig& c, std::string_view k, std::string_view v) { c.*field = parse_bool(k, v); };
}

Setter doubles_field(std::vector<double> ExperimentConfig::*field) {
  return [field](ExperimentConfig& c, std::string_view k, std::string_view v) { c.*field = parse_doubles(k, v); };
}

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"seed", size_field(&ExperimentConfig::seed)},
      {"source_vocab", size_field(&ExperimentConfig::source_vocab)},
      {"target_vocab", size_field(&ExperimentConfig::target_vocab)},
      {"shift_fraction", double_field(&ExperimentConfig::shift_fraction)},
      {"general_sentences", size_field(&ExperimentConfig::general_sentences)},
      {"general_heldout_fraction", double_field(&ExperimentConfig::general_heldout_fraction)},
      {"train_sentences", size_field(&ExperimentConfig::train_sentences)},
      {"dev_sentences", size_field(&ExperimentConfig::dev_sentences)},
      {"test_sentences", size_field(&ExperimentConfig::test_sentences)},
      {"min_length", size_field(&ExperimentConfig::min_length)},
      {"max_length", size_field(&ExperimentConfig::max_length)},
      {"embed_dim", size_field(&ExperimentConfig::embed_dim)},
      {"hidden_dim", size_field(&ExperimentConfig::hidden_dim)},
      {"base_epochs", size_field(&ExperimentConfig::base_epochs)},
      {"base_batch_size", size_field(&ExperimentConfig::base_batch_size)},
      {"base_lr", double_field(&ExperimentConfig::base_lr)},
      {"k", size_field(&ExperimentConfig::k)},
      {"wp_hidden", size_field(&ExperimentConfig::wp_hidden)},
      {"dc_hidden", size_field(&ExperimentConfig::dc_hidden)},
      {"shared_encoder", bool_field(&ExperimentConfig::shared_encoder)},
      {"squared_distance", bool_field(&ExperimentConfig::squared_distance)},
      {"alpha0", double_field(&ExperimentConfig::alpha0)},
      {"beta", double_field(&ExperimentConfig::beta)},
      {"sigma", double_field(&ExperimentConfig::sigma)},
      {"head_lr", double_field(&ExperimentConfig::head_lr)},
      {"batch_size", size_field(&ExperimentConfig::batch_size)},
      {"steps", size_field(&ExperimentConfig::steps)},
      {"lambda_grid", doubles_field(&ExperimentConfig::lambda_grid)},
      {"temperature_grid", doubles_field(&ExperimentConfig::temperature_grid)},
      {"prune_fractions", doubles_field(&ExperimentConfig::prune_fractions)},
      {"prelim_random_fraction", double_field(&ExperimentConfig::prelim_random_fraction)},
      {"confidence_bins", doubles_field(&ExperimentConfig::confidence_bins)},
      {"prelim_intervals",
       [](ExperimentConfig& c, std::string_view k, std::string_view v) {
         c.prelim_intervals.clear();
         for (auto item : split(v, ',')) {
           auto parts = split(item, ':');
           if (parts.size() != 2) bad_value(k, item, "lo:hi");
           c.prelim_intervals.emplace_back(parse_double(k, parts[0]), parse_double(k, parts[1]));
         }
       }},
      {"variants",
       [](ExperimentConfig& c, std::string_view, std::string_view v) {
         c.variants.clear();
         for (auto item : split(v, ',')) c.variants.emplace_back(item);
       }},
  };
  return table;
}

}  // namespace

TrainConfig ExperimentConfig::train_config(Variant variant) const {
  TrainConfig t;
  t.k = k;
  t.alpha0 = alpha0;
  t.beta = beta;
  t.sigma = sigma;
  t.lr = head_lr;
  t.batch_size = batch_size;
  t.steps = steps;
  t.variant = variant;
  t.distance = distance_mode();
  // Only the robust head is trained with perturbations.
  t.key_noise = t.pseudo_pair = variant == Variant::robust;
  t.decay = true;
  return t;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::config, "invalid config: " + msg); };
  if (source_vocab < 4) fail("source_vocab must be >= 4");
  if (target_vocab < source_vocab) fail("target_vocab must be >= source_vocab");
  if (!(shift_fraction >= 0.0 && shift_fraction <= 1.0)) fail("shift_fraction must lie in [0, 1]");
  if (general_sentences < 2) fail("general_sentences must be >= 2");
  if (!(general_heldout_fraction > 0.0 && general_heldout_fraction < 1.0)) fail("general_heldout_fraction must lie in (0, 1)");
  if (train_sentences < 1 || dev_sentences < 1 || test_sentences < 1) fail("corpus splits must be non-empty");
  if (min_length < 2 || max_length < min_length) fail("need 2 <= min_length <= max_length");
  if (embed_dim < 1 || hidden_dim < 1) fail("model dimensions must be positive");
  if (base_batch_size < 1 || batch_size < 1) fail("batch sizes must be positive");
  if (k < 1 || wp_hidden < 1 || dc_hidden < 1) fail("head dimensions must be positive");
  if (k > target_vocab) fail("k must not exceed target_vocab");
  if (!(alpha0 >= 0.0 && alpha0 <= 1.0)) fail("alpha0 must lie in [0, 1]");
  if (!(beta > 0.0)) fail("beta must be > 0");
  if (!(sigma >= 0.0)) fail("sigma must be >= 0");
  if (lambda_grid.empty() || temperature_grid.empty()) fail("vanilla grids must be non-empty");
  for (double l : lambda_grid) {
    if (!(l >= 0.0 && l <= 1.0)) fail("lambda_grid values must lie in [0, 1]");
  }
  for (double t : temperature_grid) {
    if (!(t > 0.0)) fail("temperature_grid values must be > 0");
  }
  for (double f : prune_fractions) {
    if (!(f >= 0.0 && f < 1.0)) fail("prune_fractions must lie in [0, 1)");
  }
  for (auto [lo, hi] : prelim_intervals) {
    if (!(lo >= 0.0 && lo < hi && hi <= 100.0)) fail("prelim_intervals need 0 <= lo < hi <= 100");
  }
  if (!(prelim_random_fraction >= 0.0 && prelim_random_fraction < 1.0)) fail("prelim_random_fraction must lie in [0, 1)");
  if (confidence_bins.size() < 2) fail("confidence_bins needs at least two edges");
  for (std::size_t i = 1; i < confidence_bins.size(); ++i) {
    if (!(confidence_bins[i] > confidence_bins[i - 1])) fail("confidence_bins must be increasing");
  }
  static const std::set<std::string, std::less<>> known{"base", "vanilla", "adaptive", "robust"};
  for (const auto& v : variants) {
    if (!known.contains(v)) fail("unknown variant '" + v + "'");
  }
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig config;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorKind::config, "config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw Error(ErrorKind::config, "config line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
    }
    if (!seen.insert(std::string(key)).second) {
      throw Error(ErrorKind::config, "config line " + std::to_string(line_no) + ": duplicate key '" + std::string(key) + "'");
    }
    it->second(config, key, value);
  }
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) { return parse_config(read_text_file(path)); }

std::string render_config(const ExperimentConfig& c) {
  std::ostringstream out;
  auto b = [](bool v) { return v ? "true" : "false"; };
  out << "seed = " << c.seed << "\n"
      << "source_vocab = " << c.source_vocab << "\n"
      << "target_vocab = " << c.target_vocab << "\n"
      << "shift_fraction = " << fmt(c.shift_fraction) << "\n"
      << "general_sentences = " << c.general_sentences << "\n"
      << "general_heldout_fraction = " << fmt(c.general_heldout_fraction) << "\n"
      << "train_sentences = " << c.train_sentences << "\n"
      << "dev_sentences = " << c.dev_sentences << "\n"
      << "test_sentences = " << c.test_sentences << "\n"
      << "min_length = " << c.min_length << "\n"
      << "max_length = " << c.max_length << "\n"
      << "embed_dim = " << c.embed_dim << "\n"
      << "hidden_dim = " << c.hidden_dim << "\n"
      << "base_epochs = " << c.base_epochs << "\n"
      << "base_batch_size = " << c.base_batch_size << "\n"
      << "base_lr = " << fmt(c.base_lr) << "\n"
      << "k = " << c.k << "\n"
      << "wp_hidden = " << c.wp_hidden << "\n"
      << "dc_hidden = " << c.dc_hidden << "\n"
      << "shared_encoder = " << b(c.shared_encoder) << "\n"
      << "squared_distance = " << b(c.squared_distance) << "\n"
      << "alpha0 = " << fmt(c.alpha0) << "\n"
      << "beta = " << fmt(c.beta) << "\n"
      << "sigma = " << fmt(c.sigma) << "\n"
      << "head_lr = " << fmt(c.head_lr) << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "steps = " << c.steps << "\n"
      << "lambda_grid = " << join(c.lambda_grid, fmt) << "\n"
      << "temperature_grid = " << join(c.temperature_grid, fmt) << "\n"
      << "prune_fractions = " << join(c.prune_fractions, fmt) << "\n"
      << "prelim_intervals = "
      << join(c.prelim_intervals, [](const auto& p) { return fmt(p.first) + ":" + fmt(p.second); }) << "\n"
      << "prelim_random_fraction = " << fmt(c.prelim_random_fraction) << "\n"
      << "confidence_bins = " << join(c.confidence_bins, fmt) << "\n"
      << "variants = " << join(c.variants, [](const std::string& s) { return s; }) << "\n";
  return out.str();
}

}  // namespace knnmt::harness

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "knnmt/error.hpp"
#include "knnmt/harness/evaluation.hpp"
#include "knnmt/robusttrain.hpp"

using namespace knnmt;

namespace {

Neighbor nb(std::size_t index, Vector key, Token value, std::span<const double> query) {
  Neighbor n{index, 0.0, value, 0.5, std::move(key)};
  n.distance = distance_between(query, n.key, DistanceMode::euclidean);
  return n;
}

std::vector<Neighbor> line_neighbors(const Vector& query) {
  return {nb(3, {1.0, 0.0}, 1, query), nb(1, {2.0, 0.0}, 2, query), nb(0, {3.0, 0.0}, 3, query)};
}

std::vector<fixtures::HeadCase> batch_of(std::uint64_t seed, std::size_t n, Variant v = Variant::robust,
                                         bool zero_outputs = false) {
  std::vector<fixtures::HeadCase> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(fixtures::random_case(seed * 1000 + i, v, {}, zero_outputs));
  return out;
}

std::vector<TrainingExample> examples_of(const std::vector<fixtures::HeadCase>& cases) {
  std::vector<TrainingExample> out;
  for (const auto& c : cases) out.push_back(fixtures::as_example(c));
  return out;
}

TrainConfig small_config(Variant v = Variant::robust) {
  TrainConfig c;
  c.variant = v;
  c.k = 8;
  c.steps = 30;
  c.batch_size = 4;
  c.report_interval = 10;
  c.beta = 10.0;
  c.lr = 1e-2;
  return c;
}

}  // namespace

TEST_CASE("decay schedule") {
  CHECK(alpha_schedule(0, 0.7, 1000.0) == 0.7);
  CHECK(std::abs(alpha_schedule(1000, 1.0, 1000.0) - std::exp(-1.0)) < 1e-12);
  CHECK(std::abs(alpha_schedule(10, 0.5, 10.0) - 0.5 * std::exp(-1.0)) < 1e-12);
  for (std::size_t s = 0; s < 50; ++s) CHECK(alpha_schedule(s + 1, 1.0, 10.0) < alpha_schedule(s, 1.0, 10.0));
}

TEST_CASE("key noise with zero rate or zero scale changes nothing") {
  const Vector q{0.0, 0.0};
  SeededRng rng(1);
  auto ns = line_neighbors(q);
  CHECK_FALSE(perturb_keys(ns, q, 0.0, 0.5, rng));
  CHECK(ns[0].key == Vector{1.0, 0.0});
  auto zs = line_neighbors(q);
  CHECK(perturb_keys(zs, q, 1.0, 0.0, rng));
  for (std::size_t i = 0; i < zs.size(); ++i) {
    CHECK(zs[i].key == line_neighbors(q)[i].key);
    CHECK(zs[i].distance == line_neighbors(q)[i].distance);
  }
}

TEST_CASE("key noise moves keys only and keeps the order") {
  const Vector q{0.0, 0.0};
  SeededRng rng(2);
  auto ns = line_neighbors(q);
  CHECK(perturb_keys(ns, q, 1.0, 2.0, rng));
  CHECK(std::is_sorted(ns.begin(), ns.end(), neighbor_less));
  for (const auto& n : ns) {
    CHECK(n.key_conf == 0.5);
    CHECK(n.value == static_cast<Token>(n.index == 3 ? 1 : n.index == 1 ? 2 : 3));
    CHECK(std::abs(n.distance - distance_between(q, n.key, DistanceMode::euclidean)) < 1e-15);
  }
}

TEST_CASE("key noise has the expected squared displacement") {
  SeededRng rng(3);
  const Vector q(32, 0.0);
  double total = 0.0;
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    std::vector<Neighbor> ns{Neighbor{0, 0.0, 0, 0.5, Vector(32, 0.0)}};
    perturb_keys(ns, q, 1.0, 0.01, rng);
    total += squared_distance(ns[0].key, q);
  }
  const double mean = total / trials;
  CHECK(std::abs(mean - 0.0032) < 0.1 * 0.0032);
}

TEST_CASE("pseudo pair is skipped when the gold token was retrieved") {
  const Vector q{0.0, 0.0};
  SeededRng rng(4);
  auto ns = line_neighbors(q);
  CHECK_FALSE(inject_pseudo_pair(ns, q, 2, 0.3, 1.0, 0.01, rng));
  CHECK(ns == line_neighbors(q));
}

TEST_CASE("pseudo pair without noise becomes the nearest neighbor") {
  const Vector q{0.0, 0.0};
  SeededRng rng(5);
  auto ns = line_neighbors(q);
  CHECK(inject_pseudo_pair(ns, q, 9, 0.3, 1.0, 0.0, rng));
  REQUIRE(ns.size() == 3);
  CHECK(ns[0].index == kPseudoIndex);
  CHECK(ns[0].distance == 0.0);
  CHECK(ns[0].value == 9);
  CHECK(ns[0].key_conf == 0.3);
  CHECK(ns[1].index == 3);
  CHECK(ns[2].index == 1);
}

TEST_CASE("pseudo pair keeps K sorted neighbors") {
  SeededRng rng(6);
  std::size_t applied = 0;
  for (int t = 0; t < 500; ++t) {
    const Vector q{rng.uniform(), rng.uniform()};
    auto ns = line_neighbors(q);
    std::sort(ns.begin(), ns.end(), neighbor_less);
    applied += inject_pseudo_pair(ns, q, 7, 0.5, 0.5, 0.1, rng);
    CHECK(ns.size() == 3);
    CHECK(std::is_sorted(ns.begin(), ns.end(), neighbor_less));
  }
  CHECK(applied > 150);
  CHECK(applied < 350);
}

TEST_CASE("pseudo pair draw is taken even when nothing is inserted") {
  const Vector q{0.0, 0.0};
  SeededRng a(8);
  SeededRng b(8);
  for (int t = 0; t < 100; ++t) {
    auto retrieved = line_neighbors(q);
    auto missed = line_neighbors(q);
    CHECK_FALSE(inject_pseudo_pair(retrieved, q, 2, 0.5, 1.0, 0.1, a));
    CHECK_FALSE(inject_pseudo_pair(missed, q, 7, 0.5, 0.0, 0.1, b));
  }
  CHECK(a.uniform() == b.uniform());
}

TEST_CASE("head loss examples") {
  InterpolationTrace tr;
  tr.p_final = {1.0, 0.0};
  CHECK(head_loss(tr, 0) == 0.0);
  CHECK(head_loss(tr, 1) == doctest::Approx(-std::log(1e-10)));
  tr.p_final = {std::exp(-1.0), 1.0 - std::exp(-1.0)};
  CHECK(head_loss(tr, 0) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("zero training steps leave the head untouched") {
  const auto cases = batch_of(1, 6, Variant::robust, true);
  const auto examples = examples_of(cases);
  TrainConfig config = small_config();
  config.steps = 0;
  const TrainResult r = train_head(cases[0].params, examples, config);
  CHECK(r.params == cases[0].params);
  CHECK(r.report.step_loss.empty());
}

TEST_CASE("head training is deterministic per seed") {
  const auto cases = batch_of(2, 10, Variant::robust, true);
  const auto examples = examples_of(cases);
  const TrainConfig config = small_config();
  const TrainResult a = train_head(cases[0].params, examples, config);
  const TrainResult b = train_head(cases[0].params, examples, config);
  CHECK(serialize_head(a.params) == serialize_head(b.params));
  CHECK(a.report.step_loss == b.report.step_loss);
  CHECK(a.report.events.size() == b.report.events.size());
  REQUIRE(a.report.intervals.size() == 3);
  CHECK(a.report.intervals[0].first_step == 0);
  CHECK(a.report.intervals[0].last_step == 9);
  CHECK(a.report.intervals[0].alpha == 1.0);
  CHECK(a.report.key_noise_total > 0);
}

TEST_CASE("head training argument errors") {
  const auto cases = batch_of(3, 4, Variant::robust, true);
  const auto examples = examples_of(cases);
  TrainConfig config = small_config();
  CHECK_THROWS_AS(train_head(cases[0].params, std::span<const TrainingExample>{}, config), Error);
  config.variant = Variant::adaptive;
  CHECK_THROWS_AS(train_head(cases[0].params, examples, config), Error);
  config = small_config();
  config.k = 4;
  CHECK_THROWS_AS(train_head(cases[0].params, examples, config), Error);
  config = small_config();
  config.alpha0 = 1.5;
  CHECK_THROWS_AS(train_head(cases[0].params, examples, config), Error);

  Datastore tiny(4);
  tiny.append(Vector{0, 0, 0, 0}, 0, 0.5);
  const BaseModelParams model = init_base_params({10, 12, 4, 4}, 1);
  Corpus dev;
  dev.pairs.push_back({{1, 2}, {3, 4}});
  CHECK_THROWS_AS(train_head(cases[0].params, model, tiny, dev, small_config()), Error);
}

TEST_CASE("vanilla training has no parameters to move") {
  const auto cases = batch_of(4, 4, Variant::vanilla);
  const auto examples = examples_of(cases);
  const TrainResult r = train_head(cases[0].params, examples, small_config(Variant::vanilla));
  CHECK(r.params == cases[0].params);
  const GradCheckResult g = grad_check(cases[0].params, examples);
  CHECK(g.checked == 0);
}

TEST_CASE("gradient check on zero-initialized output layers") {
  const auto cases = batch_of(5, 8, Variant::robust, true);
  const GradCheckResult g = grad_check(cases[0].params, examples_of(cases));
  CHECK(g.checked > 0);
  CHECK(g.max_rel_error < 1e-4);
}

TEST_CASE("gradient check on random parameters") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto cases = batch_of(100 + seed, 8);
    const GradCheckResult g = grad_check(cases[0].params, examples_of(cases));
    INFO("seed " << seed << " worst block " << g.worst_block);
    CHECK(g.max_rel_error < 1e-4);
  }
}

TEST_CASE("gradient check covers the ablated and adaptive heads") {
  HeadOptions separate;
  separate.shared_encoder = false;
  HeadOptions no_wp;
  no_wp.use_weight_prediction = false;
  HeadOptions no_dc;
  no_dc.use_calibration = false;
  for (const auto& [variant, options] : std::vector<std::pair<Variant, HeadOptions>>{
           {Variant::robust, separate}, {Variant::robust, no_wp}, {Variant::robust, no_dc}, {Variant::adaptive, {}}}) {
    std::vector<TrainingExample> examples;
    fixtures::HeadCase first = fixtures::random_case(900, variant, options);
    for (std::uint64_t i = 0; i < 6; ++i) examples.push_back(fixtures::as_example(fixtures::random_case(900 + i, variant, options)));
    const GradCheckResult g = grad_check(first.params, examples);
    INFO("worst block " << g.worst_block);
    CHECK(g.checked > 0);
    CHECK(g.max_rel_error < 1e-4);
  }
}

TEST_CASE("disabling one perturbation leaves the other's draws unchanged") {
  const auto cases = batch_of(6, 10, Variant::robust, true);
  const auto examples = examples_of(cases);
  TrainConfig both = small_config();
  TrainConfig noise_only = both;
  noise_only.pseudo_pair = false;
  const TrainResult a = train_head(cases[0].params, examples, both);
  const TrainResult b = train_head(cases[0].params, examples, noise_only);
  auto noise_events = [](const TrainReport& r) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const auto& e : r.events) {
      if (e.kind == PerturbationKind::key_noise) out.emplace_back(e.step, e.timestep);
    }
    return out;
  };
  CHECK(noise_events(a.report) == noise_events(b.report));
  CHECK(b.report.pseudo_pair_total == 0);
}

TEST_CASE("key-noise frequency follows the schedule") {
  SeededRng rng(7);
  const Vector q{0.0, 0.0};
  for (double alpha : {alpha_schedule(0, 1.0, 1000.0), alpha_schedule(500, 1.0, 1000.0),
                       alpha_schedule(2000, 1.0, 1000.0), 0.05}) {
    const int trials = 10000;
    int hits = 0;
    for (int t = 0; t < trials; ++t) {
      auto ns = line_neighbors(q);
      hits += perturb_keys(ns, q, alpha, 0.01, rng);
    }
    const double se = std::sqrt(std::max(alpha * (1.0 - alpha), 1e-12) / trials);
    CHECK(std::abs(static_cast<double>(hits) / trials - alpha) <= 3.0 * se + 1e-12);
  }
}

TEST_CASE("default robust training lowers the loss on the default task") {
  const harness::ExperimentConfig config;
  const harness::ExperimentData data = harness::generate_data(config);
  const BaseModelParams model = harness::train_base_model(config, data.general_train);
  const Datastore ds = build_datastore(model, data.train);
  const harness::RetrievalCache dev = harness::make_cache(model, ds, data.dev, config.k, config.distance_mode());
  const TrainResult r =
      harness::train_recipe(config, harness::default_recipe(config, Variant::robust), dev);
  REQUIRE(r.report.step_loss.size() == config.steps);
  const auto& l = r.report.step_loss;
  const double first = std::accumulate(l.begin(), l.begin() + 500, 0.0) / 500.0;
  const double last = std::accumulate(l.end() - 500, l.end(), 0.0) / 500.0;
  CHECK(last < first);
  CHECK(std::all_of(l.begin(), l.end(), [](double x) { return std::isfinite(x) && x >= 0.0; }));
}

#include <catch_amalgamated.hpp>

#include <algorithm>

#include "support.hpp"

using namespace apiroute;
using Catch::Approx;

namespace {

SyntheticCorpus corpus(std::uint64_t seed, std::size_t K = 3, std::size_t L = 2, std::size_t N = 300) {
  return generate_synthetic_corpus(random_spec(seed, K, L, N), seed + 77);
}

GFunction hand_g(std::size_t base, std::vector<std::pair<double, double>> pts) {
  std::vector<GKnot> knots;
  for (auto [t, v] : pts) knots.push_back(GKnot{t, v, true, std::nullopt});
  return GFunction(base, pts.front().first, std::move(knots));
}

// Best p1 g1(b1 / p1) + p2 g2(b2 / p2) with b1 + b2 <= b. For fixed p1 the
// objective is piecewise linear in b1, so only the breakpoints matter; p1
// runs over a 0.01 grid plus every ratio that puts both branches on knots.
double mixture_oracle(const std::vector<std::optional<GFunction>>& g, double b) {
  double best = 0.0;
  const std::size_t K = g.size();
  for (std::size_t i = 0; i < K; ++i) {
    if (g[i] && g[i]->base_cost() <= b) best = std::max(best, (*g[i])(b));
  }
  for (std::size_t i1 = 0; i1 < K; ++i1) {
    for (std::size_t i2 = 0; i2 < K; ++i2) {
      if (i1 == i2 || !g[i1] || !g[i2]) continue;
      std::vector<double> ps;
      for (int s = 1; s < 100; ++s) ps.push_back(s / 100.0);
      for (const auto* a : g[i1]->feasible_knots()) {
        for (const auto* c : g[i2]->feasible_knots()) {
          if (a->theta != c->theta) {
            const double p = (c->theta - b) / (c->theta - a->theta);
            if (p > 0.0 && p < 1.0) ps.push_back(p);
          }
        }
      }
      for (double p1 : ps) {
        const double p2 = 1.0 - p1;
        const double lo = p1 * g[i1]->base_cost();
        const double hi = b - p2 * g[i2]->base_cost();
        if (lo > hi) continue;
        std::vector<double> b1s{lo, hi};
        for (const auto* a : g[i1]->feasible_knots()) b1s.push_back(p1 * a->theta);
        for (const auto* c : g[i2]->feasible_knots()) b1s.push_back(b - p2 * c->theta);
        for (double b1 : b1s) {
          if (b1 < lo || b1 > hi) continue;
          best = std::max(best, p1 * (*g[i1])(b1 / p1) + p2 * (*g[i2])((b - b1) / p2));
        }
      }
    }
  }
  return best;
}

}  // namespace

TEST_CASE("a single service is the only base", "[master]") {
  const auto cat = fixtures::catalog({4});
  std::vector<AnnotatedSample> rows;
  for (int i = 0; i < 10; ++i) {
    rows.push_back(fixtures::sample("r" + std::to_string(i), static_cast<std::size_t>(i % 2), {0}, {0.1 * i}));
  }
  const AnnotatedDataset data(rows, cat);
  SolverConfig cfg;
  cfg.grid = 4;
  cfg.budget = 6e-4;
  const auto r = train_detailed(data, cat, cfg);
  CHECK(r.master.i1 == 0);
  CHECK(r.master.i2 == 0);
  CHECK(r.master.p1 == 1.0);
  // Every budget in [c, b] is optimal here; ties go to the smallest.
  CHECK(r.master.b1 == Approx(4e-4));
  CHECK(r.master.objective == Approx(0.5));
  CHECK(r.strategy.base_mixture == std::vector<double>{1.0});
  CHECK(r.strategy.meta.predicted_accuracy == Approx(0.5));
  CHECK(r.strategy.meta.predicted_cost == Approx(4e-4));
}

TEST_CASE("a pointwise dominating value function wins outright", "[master]") {
  std::vector<std::optional<GFunction>> g;
  g.push_back(hand_g(0, {{1.0, 0.6}, {2.0, 0.7}, {4.0, 0.8}, {6.0, 0.9}}));
  g.push_back(hand_g(1, {{2.0, 0.55}, {4.0, 0.65}, {6.0, 0.85}}));
  g.push_back(hand_g(2, {{3.0, 0.5}, {6.0, 0.88}}));
  const auto m = solve_master(g, 6.0);
  CHECK(m.single());
  CHECK(m.i1 == 0);
  CHECK(m.b1 == 6.0);
  CHECK(m.objective == 0.9);
}

TEST_CASE("master handles budget edges", "[master]") {
  std::vector<std::optional<GFunction>> g;
  g.push_back(hand_g(0, {{1.0, 0.6}, {3.0, 0.7}}));
  g.push_back(hand_g(1, {{2.0, 0.8}, {3.0, 0.9}}));
  CHECK_THROWS_AS(solve_master(g, 0.5), InfeasibleBudgetError);
  // Halfway between the two base costs the best plan mixes both.
  const auto m = solve_master(g, 1.5);
  CHECK_FALSE(m.single());
  CHECK(m.p1 + m.p2 == Approx(1.0));
  CHECK(m.b1 + m.b2 <= 1.5 * (1 + 1e-12));
  CHECK(m.objective == Approx(0.5 * 0.6 + 0.5 * 0.8));
  // Flat beyond the last knot.
  CHECK(solve_master(g, 100.0).objective == 0.9);
}

TEST_CASE("master optimum matches a dense mixture search", "[master]") {
  for (std::uint64_t seed = 40; seed < 52; ++seed) {
    const auto c = corpus(seed);
    for (double f : {1.05, 1.3, 1.7, 2.4}) {
      SolverConfig cfg;
      cfg.grid = 4;
      cfg.budget = c.catalog.min_cost() * f + (f - 1.0) * 0.3 * c.catalog.max_cost();
      const auto r = train_detailed(c.data, c.catalog, cfg);
      const double oracle = mixture_oracle(r.g, cfg.budget);
      CAPTURE(seed, f, r.master.objective, oracle);
      CHECK(std::abs(r.master.objective - oracle) <= 1e-9);
      CHECK(r.strategy.meta.predicted_accuracy == Approx(r.master.objective).epsilon(1e-12));
      CHECK(r.strategy.meta.predicted_cost <= cfg.budget + 1e-9);
      CHECK(validate_strategy(r.strategy, c.catalog).empty());
    }
  }
}

TEST_CASE("no add-on budget gives a never-escalating strategy", "[master]") {
  const auto c = corpus(60);
  const auto model = estimate_model(c.data, 5);
  for (std::size_t k = 0; k < 3; ++k) {
    MasterSolution ms;
    ms.i1 = ms.i2 = k;
    ms.b1 = ms.r1 = c.catalog.cost(k);
    const auto s = assemble_strategy(ms, model, c.catalog, SolverConfig{});
    for (std::size_t l = 0; l < 2; ++l) CHECK(s.threshold_levels(k, l) == 0.0);
    CHECK(s.meta.predicted_cost == c.catalog.cost(k));
    CHECK(s.meta.predicted_accuracy == Approx(c.data.service_accuracy(k)).epsilon(1e-12));
    CHECK(validate_strategy(s, c.catalog).empty());
  }
}

TEST_CASE("a perfect cheapest service is used alone", "[master]") {
  const auto cat = fixtures::catalog({1, 5, 9});
  std::vector<AnnotatedSample> rows;
  Rng rng(5);
  for (int i = 0; i < 60; ++i) {
    const std::size_t y = static_cast<std::size_t>(i % 2);
    rows.push_back(fixtures::sample("r" + std::to_string(i), y, {y, uniform_index(rng, 2), uniform_index(rng, 2)},
                                    {uniform01(rng), uniform01(rng), uniform01(rng)}));
  }
  const AnnotatedDataset data(rows, cat);
  SolverConfig cfg;
  cfg.budget = cat.max_cost() * 2.0;
  const auto s = train(data, cat, cfg);
  CHECK(s.base_mixture == std::vector<double>{1, 0, 0});
  CHECK(s.meta.predicted_accuracy == 1.0);
  CHECK(s.meta.predicted_cost == cat.cost(0));
}

TEST_CASE("restriction modes", "[master]") {
  const auto c = corpus(61, 3, 3, 400);
  SolverConfig cfg;
  cfg.budget = c.catalog.max_cost();

  SECTION("fixed base") {
    cfg.fixed_base = 1;
    const auto s = train(c.data, c.catalog, cfg);
    CHECK(s.base_mixture[1] == 1.0);
    CHECK(validate_strategy(s, c.catalog).empty());
    cfg.budget = c.catalog.cost(1) * 0.5;
    CHECK_THROWS_AS(train(c.data, c.catalog, cfg), InfeasibleBudgetError);
  }
  SECTION("one threshold per base") {
    cfg.uniform_threshold = true;
    const auto s = train(c.data, c.catalog, cfg);
    CHECK(s.meta.uniform_threshold);
    CHECK(validate_strategy(s, c.catalog).empty());
    for (std::size_t k = 0; k < 3; ++k) {
      for (std::size_t l = 1; l < 3; ++l) {
        CHECK(s.thresholds(k, l) == s.thresholds(k, 0));
        CHECK(s.threshold_levels(k, l) == s.threshold_levels(k, 0));
      }
    }
  }
  SECTION("thread count does not change the result") {
    const auto a = train(c.data, c.catalog, cfg);
    cfg.threads = 4;
    CHECK(train(c.data, c.catalog, cfg) == a);
  }
  SECTION("infeasible budget") {
    cfg.budget = c.catalog.min_cost() * 0.5;
    CHECK_THROWS_AS(train(c.data, c.catalog, cfg), InfeasibleBudgetError);
  }
}

// Two samples, hand-enumerated:
//   s1: truth a; service 0 says a @0.3, service 1 says b @0.8
//   s2: truth b; service 0 says a @0.6, service 1 says b @0.9
// Base 0 (weight 1/2) escalates its bottom half to service 1; base 1 (weight
// 1/2) escalates its bottom half and sends half of those to service 0.
TEST_CASE("expected accuracy and cost by hand on two samples", "[master]") {
  const auto cat = fixtures::catalog({1, 2});
  const AnnotatedDataset data({fixtures::sample("s1", 0, {0, 1}, {0.3, 0.8}),
                               fixtures::sample("s2", 1, {0, 1}, {0.6, 0.9})},
                              cat);
  const auto model = estimate_model(data, 2);
  auto s = Strategy::canonical(2, 2);
  s.base_mixture = {0.5, 0.5};
  s.threshold_levels(0, 0) = 0.5;
  s.thresholds(0, 0) = threshold_for_level(model, 0, 0, 0.5);
  s.addon(0, 0, 0) = 0.0;
  s.addon(0, 0, 1) = 1.0;
  s.threshold_levels(1, 1) = 0.5;
  s.thresholds(1, 1) = threshold_for_level(model, 1, 1, 0.5);
  s.addon(1, 1, 0) = 0.5;
  s.addon(1, 1, 1) = 0.5;
  CHECK(s.thresholds(0, 0) == 0.3);
  CHECK(s.thresholds(1, 1) == 0.8);

  // Base 0: accuracy 1/2 + 1/2 (0 - 1) = 0, cost c0 + c1/2.
  // Base 1: accuracy 1/2 + 1/2 * 1/2 * (1 - 0) = 3/4, cost c1 + c0/4.
  const auto p = predict_performance(s, model, cat.costs());
  CHECK(p.accuracy == Approx(0.375).epsilon(1e-14));
  CHECK(p.cost == Approx(0.625 * 1e-4 + 0.75 * 2e-4).epsilon(1e-14));
  const auto e = exact_replay_expectation(s, data, cat.costs());
  CHECK(e.accuracy == Approx(p.accuracy).epsilon(1e-14));
  CHECK(e.mean_cost == Approx(p.cost).epsilon(1e-14));
}

TEST_CASE("always escalating to one add-on costs both calls", "[master]") {
  const auto c = corpus(62);
  const auto model = estimate_model(c.data, 5);
  auto s = Strategy::canonical(3, 2);
  s.base_mixture = {0, 1, 0};
  for (std::size_t l = 0; l < 2; ++l) {
    s.threshold_levels(1, l) = 1.0;
    s.thresholds(1, l) = threshold_for_level(model, 1, l, 1.0);
    s.addon(1, l, 1) = 0.0;
    s.addon(1, l, 2) = 1.0;
  }
  const auto p = predict_performance(s, model, c.catalog.costs());
  CHECK(p.cost == Approx(c.catalog.cost(1) + c.catalog.cost(2)).epsilon(1e-14));
  CHECK(p.accuracy == Approx(c.data.service_accuracy(2)).epsilon(1e-12));
}

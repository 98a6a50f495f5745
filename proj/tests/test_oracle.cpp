#include <catch_amalgamated.hpp>

#include <cmath>

#include "support.hpp"

using namespace apiroute;
using Catch::Approx;

namespace {

SyntheticCorpus corpus(std::uint64_t seed, std::size_t K = 3, std::size_t L = 2, std::size_t N = 200) {
  return generate_synthetic_corpus(random_spec(seed, K, L, N), seed);
}

std::size_t choose(std::size_t n, std::size_t k) {
  std::size_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace

TEST_CASE("single-service market", "[oracle]") {
  SyntheticSpec spec;
  spec.services = 1;
  spec.labels = 3;
  spec.samples = 150;
  spec.costs_per_10k = {3.0};
  spec.accuracy = {{0.7, 0.5, 0.9}};
  spec.informativeness = {0.8};
  const auto c = generate_synthetic_corpus(spec, 2);
  const double b = c.catalog.cost(0) * 2.0;
  const auto r = brute_force_optimal(c.data, c.catalog, b, 3, 10);
  CHECK(r.strategy.base_mixture == std::vector<double>{1.0});
  CHECK(r.predicted_accuracy == Approx(c.data.service_accuracy(0)).epsilon(1e-12));
  CHECK(r.predicted_cost == c.catalog.cost(0));
  SolverConfig cfg;
  cfg.grid = 3;
  cfg.budget = b;
  CHECK(train(c.data, c.catalog, cfg).meta.predicted_accuracy == Approx(r.predicted_accuracy).margin(1e-6));
}

TEST_CASE("oracle rejects budgets below every price and oversize problems", "[oracle]") {
  const auto c = corpus(1);
  CHECK_THROWS_AS(brute_force_optimal(c.data, c.catalog, c.catalog.min_cost() * 0.9, 2, 10), InfeasibleBudgetError);
  SolverConfig cfg;
  cfg.budget = c.catalog.min_cost() * 0.9;
  CHECK_THROWS_AS(train(c.data, c.catalog, cfg), InfeasibleBudgetError);
  const auto big = corpus(1, 5, 2, 50);
  CHECK_THROWS_AS(brute_force_optimal(big.data, big.catalog, big.catalog.max_cost(), 2, 10), ValidationError);
  CHECK_THROWS_AS(brute_force_optimal(c.data, c.catalog, c.catalog.max_cost(), 5, 10), ValidationError);
}

TEST_CASE("enumeration counts follow from the family size", "[oracle]") {
  const auto c = corpus(3, 3, 3, 120);
  const int M = 3;
  const int steps = 8;
  const double b = c.catalog.max_cost() * 0.9;
  const auto r = brute_force_optimal(c.data, c.catalog, b, M, steps);

  std::vector<std::vector<double>> levels;
  std::size_t singles = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    levels.push_back(oracle_budget_levels(c.catalog.costs(), k, M, b));
    singles += levels.back().size();
  }
  std::size_t pairs = 0;
  for (std::size_t i1 = 0; i1 < 3; ++i1) {
    for (std::size_t i2 = i1 + 1; i2 < 3; ++i2) {
      for (double r1 : levels[i1]) {
        for (double r2 : levels[i2]) {
          pairs += static_cast<std::size_t>(steps) + 1;
          if (std::min(r1, r2) < b && b < std::max(r1, r2)) ++pairs;
        }
      }
    }
  }
  CHECK(r.enumeration_size == singles + pairs);
  CHECK(r.allocation_candidates == singles * choose(static_cast<std::size_t>(M) + 2, 2));
}

TEST_CASE("oracle budget levels", "[oracle]") {
  const std::vector<double> costs{1.0, 2.0};
  // Grid 0, 1, 2, 3, 4 (M = 4, top 2 max c); base 1 keeps its own cost, the grid above it, and b.
  const auto r = oracle_budget_levels(costs, 1, 4, 2.5);
  CHECK(r == std::vector<double>{2.0, 2.5, 3.0, 4.0});
  CHECK(oracle_budget_levels(costs, 0, 4, 3.0) == std::vector<double>{1.0, 2.0, 3.0, 4.0});
}

TEST_CASE("oracle and trainer agree on small markets", "[oracle]") {
  for (std::uint64_t seed = 70; seed < 74; ++seed) {
    const auto c = corpus(seed);
    const double b = c.catalog.min_cost() + 0.4 * (c.catalog.max_cost() - c.catalog.min_cost()) + 1e-6;
    const int M = seed % 2 == 0 ? 2 : 4;
    const auto o = brute_force_optimal(c.data, c.catalog, b, M, 10);
    SolverConfig cfg;
    cfg.grid = M;
    cfg.budget = b;
    const auto s = train(c.data, c.catalog, cfg);
    CAPTURE(seed);
    CHECK(std::abs(s.meta.predicted_accuracy - o.predicted_accuracy) <= 1e-6);
    CHECK(o.predicted_cost <= b + 1e-9);
    CHECK(validate_strategy(o.strategy, c.catalog).empty());
    // Oracle optimum is at least every affordable single service.
    for (std::size_t k = 0; k < 3; ++k) {
      if (c.catalog.cost(k) <= b) CHECK(o.predicted_accuracy >= c.data.service_accuracy(k) - 1e-12);
    }
  }
}

TEST_CASE("uninformative scores are uncorrelated with correctness", "[generator]") {
  SyntheticSpec spec;
  spec.services = 2;
  spec.labels = 2;
  spec.samples = 20000;
  spec.costs_per_10k = {1, 2};
  spec.accuracy = {{0.7, 0.6}, {0.8, 0.8}};
  spec.informativeness = {0.0, 1.0};
  const auto c = generate_synthetic_corpus(spec, 12);
  const auto corr = [&](std::size_t k) {
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    const double n = static_cast<double>(c.data.size());
    for (const auto& x : c.data.samples()) {
      const double a = x.scores[k];
      const double y = x.correct(k) ? 1.0 : 0.0;
      sx += a;
      sy += y;
      sxx += a * a;
      syy += y * y;
      sxy += a * y;
    }
    const double cov = sxy / n - (sx / n) * (sy / n);
    return cov / std::sqrt((sxx / n - (sx / n) * (sx / n)) * (syy / n - (sy / n) * (sy / n)));
  };
  CHECK(std::abs(corr(0)) < 4.0 / std::sqrt(20000.0));
  CHECK(corr(1) > 0.3);
}

TEST_CASE("per-label accuracy lands within three sigma", "[generator]") {
  SyntheticSpec spec;
  spec.services = 1;
  spec.labels = 2;
  spec.samples = 20000;
  spec.costs_per_10k = {1};
  spec.accuracy = {{0.9, 0.9}};
  spec.informativeness = {0.5};
  const auto c = generate_synthetic_corpus(spec, 13);
  const auto m = estimate_model(c.data, 4);
  for (std::size_t l = 0; l < 2; ++l) {
    // Symmetric errors and a uniform prior make precision equal to accuracy.
    const double n = static_cast<double>(m.count(0, l));
    const double sigma = std::sqrt(0.9 * 0.1 / n);
    CHECK(std::abs(m.psi(0, 0, l, 1.0) - 0.9) < 3.0 * sigma);
  }
}

TEST_CASE("generator is deterministic per seed", "[generator]") {
  const auto spec = fer_like_spec(500);
  const auto a = generate_synthetic_corpus(spec, 9);
  const auto b = generate_synthetic_corpus(spec, 9);
  const auto d = generate_synthetic_corpus(spec, 10);
  CHECK(dataset_to_csv(a.data, a.catalog) == dataset_to_csv(b.data, b.catalog));
  CHECK(dataset_to_csv(a.data, a.catalog) != dataset_to_csv(d.data, d.catalog));
  CHECK(a.catalog.fingerprint() == d.catalog.fingerprint());
  CHECK(a.catalog.service(0).name == "opensource");
  CHECK(a.catalog.cost(0) == 0.0);

  SyntheticSpec bad = spec;
  bad.accuracy[0][0] = 1.2;
  CHECK_THROWS_AS(generate_synthetic_corpus(bad, 1), ValidationError);
}

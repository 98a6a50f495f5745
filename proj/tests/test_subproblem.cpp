#include <catch_amalgamated.hpp>

#include <algorithm>
#include <functional>

#include "support.hpp"

using namespace apiroute;
using Catch::Approx;

namespace {

SyntheticCorpus corpus(std::uint64_t seed, std::size_t K = 3, std::size_t L = 2, std::size_t N = 240) {
  return generate_synthetic_corpus(random_spec(seed, K, L, N), seed + 1000);
}

// Best objective over (mu, pi) by brute force: mu on a uniform grid of
// `steps` points plus every knot and every beta / c_j boundary; for fixed mu
// the best pi is a vertex of {simplex, spend <= beta / mu}, so every single
// add-on and every budget-tight pair is scored.
double dense_oracle(const EstimatedModel& model, std::size_t k, std::size_t g, double beta,
                    const std::vector<double>& costs, int steps) {
  const std::size_t K = costs.size();
  std::vector<double> c = costs;
  c[k] = 0.0;
  std::vector<double> mus;
  for (int s = 0; s <= steps; ++s) mus.push_back(static_cast<double>(s) / steps);
  for (int m = 0; m <= model.grid(); ++m) mus.push_back(model.knot_level(m));
  for (double cj : c) {
    if (cj > 0.0 && beta / cj < 1.0) mus.push_back(beta / cj);
  }
  const double base = model.base_accuracy(k, g);
  double best = base;
  for (double mu : mus) {
    if (mu <= 0.0) continue;
    const double cap = beta / mu;
    std::vector<double> gain(K);
    for (std::size_t j = 0; j < K; ++j) gain[j] = model.psi(k, j, g, mu) - model.psi(k, k, g, mu);
    gain[k] = 0.0;
    for (std::size_t a = 0; a < K; ++a) {
      if (c[a] <= cap) best = std::max(best, base + mu * gain[a]);
      for (std::size_t b = 0; b < K; ++b) {
        if (c[a] <= c[b]) continue;
        const double w = (cap - c[b]) / (c[a] - c[b]);
        if (w < 0.0 || w > 1.0) continue;
        best = std::max(best, base + mu * (w * gain[a] + (1.0 - w) * gain[b]));
      }
    }
  }
  return best;
}

void enumerate(std::size_t L, int left, std::vector<int>& cur, const std::function<void(const std::vector<int>&)>& fn) {
  if (cur.size() + 1 == L) {
    cur.push_back(left);
    fn(cur);
    cur.pop_back();
    return;
  }
  for (int t = left; t >= 0; --t) {
    cur.push_back(t);
    enumerate(L, left - t, cur, fn);
    cur.pop_back();
  }
}

}  // namespace

TEST_CASE("zero add-on budget keeps the base answer", "[subproblem]") {
  const auto c = corpus(1);
  const auto m = estimate_model(c.data, 5);
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t g = 0; g < 2; ++g) {
      const auto s = solve_fixed_base_label(m, k, g, 0.0, c.catalog.costs());
      CHECK(s.rho == 0.0);
      std::vector<double> ek(3, 0.0);
      ek[k] = 1.0;
      CHECK(s.pi == ek);
      CHECK(s.value == m.base_accuracy(k, g));
    }
  }
}

TEST_CASE("no profitable add-on means never escalate", "[subproblem]") {
  // Service 0 is always right, so every gain is <= 0.
  const auto cat = fixtures::catalog({1, 2, 3});
  std::vector<AnnotatedSample> rows;
  for (int i = 0; i < 40; ++i) {
    const std::size_t y = static_cast<std::size_t>(i % 2);
    rows.push_back(fixtures::sample("r" + std::to_string(i), y, {y, static_cast<std::size_t>((i / 2) % 2), 1 - y},
                                    {0.025 * i, 0.5, 0.9}));
  }
  const auto m = estimate_model(AnnotatedDataset(rows, cat), 4);
  for (double beta : {0.0, 1e-5, 1e-4, 1.0}) {
    const auto s = solve_fixed_base_label(m, 0, 1, beta, cat.costs());
    CHECK(s.value == m.base_accuracy(0, 1));
    CHECK(s.value == 1.0);
  }
}

TEST_CASE("closed-form label solution matches a dense grid search", "[subproblem]") {
  for (std::uint64_t seed : {3u, 4u, 5u, 6u, 7u}) {
    const auto c = corpus(seed);
    const auto m = estimate_model(c.data, 2);
    const auto& costs = c.catalog.costs();
    for (std::size_t k = 0; k < 3; ++k) {
      double cheapest_addon = 1e300;
      for (std::size_t j = 0; j < 3; ++j) {
        if (j != k) cheapest_addon = std::min(cheapest_addon, costs[j]);
      }
      for (double f : {0.7, 0.3, 1.4, 2.5}) {
        const double beta = f * cheapest_addon;
        for (std::size_t g = 0; g < 2; ++g) {
          const auto s = solve_fixed_base_label(m, k, g, beta, costs);
          const double oracle = dense_oracle(m, k, g, beta, costs, 10000);
          CAPTURE(seed, k, g, f, s.rho, s.value, oracle);
          CHECK(s.value >= oracle - 1e-12);
          CHECK(s.value <= oracle + 1e-6);
          CHECK(s.addon_cost(costs, k) <= beta * (1.0 + 1e-12));
          const auto fam = classify_addon_slice(s.pi, k);
          CHECK(fam.has_value());
        }
      }
    }
  }
}

TEST_CASE("one merged group takes the whole budget", "[subproblem]") {
  const auto c = corpus(8);
  const auto m = estimate_model(c.data, EstimateOptions{.grid = 6, .collapse_labels = true});
  const auto& costs = c.catalog.costs();
  const double b = costs[0] + 0.8 * c.catalog.max_cost();
  const auto a = allocate_label_budgets(m, 0, b, costs);
  REQUIRE(a.units.size() == 1);
  CHECK(a.units[0] == 6);
  CHECK(a.value == Approx(m.label_share(0, 0) * solve_fixed_base_label(m, 0, 0, b - costs[0], costs).value)
                       .epsilon(1e-14));
}

TEST_CASE("flat per-label values allocate everything to the first label", "[subproblem]") {
  const std::vector<double> share{0.2, 0.5, 0.3};
  const std::vector<std::vector<double>> h(3, std::vector<double>(5, 0.7));
  CHECK(best_allocation(share, h, 4) == std::vector<int>{4, 0, 0});

  // Same through the full pipeline: the base is always right.
  const auto cat = fixtures::catalog({1, 2, 3}, 3);
  std::vector<AnnotatedSample> rows;
  for (int i = 0; i < 30; ++i) {
    const std::size_t y = static_cast<std::size_t>(i % 3);
    rows.push_back(fixtures::sample("r" + std::to_string(i), y, {y, (y + 1) % 3, y}, {0.03 * i, 0.4, 0.6}));
  }
  const auto m = estimate_model(AnnotatedDataset(rows, cat), 5);
  const auto a = allocate_label_budgets(m, 0, 4e-4, cat.costs());
  CHECK(a.units == std::vector<int>{5, 0, 0});
  CHECK(a.value == Approx(1.0));
}

TEST_CASE("allocation equals exhaustive enumeration", "[subproblem]") {
  for (std::uint64_t seed = 20; seed < 26; ++seed) {
    const auto c = corpus(seed, 3, 2, 300);
    const auto m = estimate_model(c.data, 4);
    const auto& costs = c.catalog.costs();
    for (std::size_t k = 0; k < 3; ++k) {
      const double b = costs[k] + 0.9 * c.catalog.max_cost();
      const auto a = allocate_label_budgets(m, k, b, costs);
      std::vector<int> best;
      double best_v = -1.0;
      std::vector<std::vector<int>> all;
      std::vector<double> vals;
      std::vector<int> cur;
      enumerate(2, 4, cur, [&](const std::vector<int>& t) {
        double v = 0.0;
        for (std::size_t g = 0; g < 2; ++g) {
          v += m.label_share(k, g) *
               solve_fixed_base_label(m, k, g, (b - costs[k]) * t[g] / 4.0, costs).value;
        }
        all.push_back(t);
        vals.push_back(v);
      });
      best_v = *std::max_element(vals.begin(), vals.end());
      for (std::size_t n = 0; n < all.size(); ++n) {
        if (vals[n] >= best_v - kTieTolerance) {
          best = all[n];
          break;
        }
      }
      CAPTURE(seed, k);
      CHECK(a.units == best);
      CHECK(a.value == Approx(best_v).epsilon(1e-14));
    }
  }
  const auto c = corpus(20);
  const auto m = estimate_model(c.data, 4);
  CHECK_THROWS_AS(allocate_label_budgets(m, 2, c.catalog.cost(2) * 0.5, c.catalog.costs()), ValidationError);
}

TEST_CASE("value function anchor, interpolation and monotonicity", "[subproblem]") {
  const auto c = corpus(31);
  const auto m = estimate_model(c.data, 4);
  const auto& costs = c.catalog.costs();
  for (std::size_t k = 0; k < 3; ++k) {
    const auto g = build_g_function(m, k, costs);
    // At its own cost the base cannot escalate: the value is its plain accuracy.
    CHECK(g(costs[k]) == Approx(c.data.service_accuracy(k)).epsilon(1e-12));
    CHECK(g(costs[k] * 0.5) == 0.0);
    const auto fk = g.feasible_knots();
    REQUIRE(fk.size() >= 2);
    CHECK(fk.front()->theta == costs[k]);
    for (std::size_t a = 0; a + 1 < fk.size(); ++a) {
      const double mid = 0.5 * (fk[a]->theta + fk[a + 1]->theta);
      CHECK(g(mid) == Approx(0.5 * (fk[a]->value + fk[a + 1]->value)).epsilon(1e-14));
      CHECK(fk[a + 1]->value >= fk[a]->value);
    }
    CHECK(g(1.0) == fk.back()->value);

    // Each knot value against allocation enumeration at that budget.
    for (const auto* knot : fk) {
      double best = -1.0;
      std::vector<int> cur;
      enumerate(2, 4, cur, [&](const std::vector<int>& t) {
        double v = 0.0;
        for (std::size_t grp = 0; grp < 2; ++grp) {
          v += m.label_share(k, grp) *
               solve_fixed_base_label(m, k, grp, (knot->theta - costs[k]) * t[grp] / 4.0, costs).value;
        }
        best = std::max(best, v);
      });
      CHECK(knot->value == Approx(best).epsilon(1e-14));
    }
  }
}

TEST_CASE("uniform budget grid spans twice the top price", "[subproblem]") {
  const std::vector<double> costs{1e-4, 3e-4};
  const auto t = uniform_budget_knots(costs, 3);
  REQUIRE(t.size() == 4);
  CHECK(t.front() == 0.0);
  CHECK(t.back() == Approx(6e-4));
  CHECK(t[1] == Approx(2e-4));
}

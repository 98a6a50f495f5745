#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "apiroute/catalog.hpp"
#include "apiroute/dataset.hpp"
#include "apiroute/error.hpp"
#include "apiroute/estimation.hpp"
#include "apiroute/parallel.hpp"
#include "apiroute/strategy.hpp"
#include "apiroute/subproblem.hpp"

namespace apiroute {

// Mixture of at most two bases with their per-branch budgets. A single-base
// solution has i2 == i1, p1 == 1, b2 == 0.
struct MasterSolution {
  std::size_t i1 = 0;
  std::size_t i2 = 0;
  double p1 = 1.0;
  double p2 = 0.0;
  double b1 = 0.0;  // budget share of branch 1 (= p1 * r1)
  double b2 = 0.0;
  double r1 = 0.0;  // per-call budget of branch 1 (= b1 / p1)
  double r2 = 0.0;
  double objective = 0.0;

  [[nodiscard]] bool single() const noexcept { return p2 == 0.0; }
};

struct SolverConfig {
  int grid = 10;
  std::uint64_t seed = 0;
  std::optional<std::size_t> fixed_base;
  bool uniform_threshold = false;
  double budget = 0.0;  // per query
  unsigned threads = 1;
};

namespace detail {

struct Segment {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();  // infinite for the flat tail
  double value = 0.0;                                   // g at lo
  double slope = 0.0;

  [[nodiscard]] double at(double theta) const { return theta == lo ? value : value + slope * (theta - lo); }
};

// Linear pieces of g between consecutive feasible knots, plus the flat tail.
inline std::vector<Segment> segments_of(const GFunction& g) {
  const auto knots = g.feasible_knots();
  std::vector<Segment> out;
  for (std::size_t a = 0; a + 1 < knots.size(); ++a) {
    const double dx = knots[a + 1]->theta - knots[a]->theta;
    out.push_back({knots[a]->theta, knots[a + 1]->theta, knots[a]->value, (knots[a + 1]->value - knots[a]->value) / dx});
  }
  if (!knots.empty()) out.push_back({knots.back()->theta, std::numeric_limits<double>::infinity(), knots.back()->value, 0.0});
  return out;
}

// Solves the 3x3 system A x = d with partial pivoting; nullopt if singular.
inline std::optional<std::array<double, 3>> solve3(std::array<std::array<double, 4>, 3> m) {
  for (std::size_t c = 0; c < 3; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < 3; ++r) {
      if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
    }
    if (std::abs(m[piv][c]) < 1e-12) return std::nullopt;
    std::swap(m[c], m[piv]);
    for (std::size_t r = 0; r < 3; ++r) {
      if (r == c) continue;
      const double f = m[r][c] / m[c][c];
      for (std::size_t k = c; k < 4; ++k) m[r][k] -= f * m[c][k];
    }
  }
  return std::array<double, 3>{m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]};
}

// Canonical order: higher objective beyond the tie tolerance, then smaller i1,
// smaller i2, larger p1, smaller b1.
inline bool better(const MasterSolution& a, const MasterSolution& b) {
  if (a.objective > b.objective + kTieTolerance) return true;
  if (a.objective < b.objective - kTieTolerance) return false;
  if (a.i1 != b.i1) return a.i1 < b.i1;
  if (a.i2 != b.i2) return a.i2 < b.i2;
  if (std::abs(a.p1 - b.p1) > kTieTolerance) return a.p1 > b.p1;
  return a.b1 < b.b1 - kTieTolerance * std::max(1.0, std::abs(b.b1));
}

inline double snap_to_knot(double r, const GFunction& g) {
  for (const auto* k : g.feasible_knots()) {
    if (std::abs(r - k->theta) <= 1e-9 * std::max(std::abs(k->theta), 1e-300)) return k->theta;
  }
  return r;
}

inline MasterSolution make_single(std::size_t i, double r, double value) {
  MasterSolution s;
  s.i1 = s.i2 = i;
  s.p1 = 1.0;
  s.p2 = 0.0;
  s.b1 = s.r1 = r;
  s.b2 = s.r2 = 0.0;
  s.objective = value;
  return s;
}

}  // namespace detail

// Maximizes p1 g_i1(b1/p1) + p2 g_i2(b2/p2) over two bases, p1 + p2 = 1 and
// b1 + b2 <= b. `g` holds one entry per service; services without a value
// function are not eligible as bases. On a pair of linear pieces the
// objective is linear in (p1, b1, b2), so every cell is a 7-constraint LP
// whose vertices are enumerated exactly.
inline MasterSolution solve_master(std::span<const std::optional<GFunction>> g, double budget) {
  double min_cost = std::numeric_limits<double>::infinity();
  for (const auto& gi : g) {
    if (gi) min_cost = std::min(min_cost, gi->base_cost());
  }
  if (!std::isfinite(min_cost)) throw ValidationError("no eligible base service");
  if (budget < min_cost * (1.0 - 1e-12)) {
    throw InfeasibleBudgetError(fmt::format("budget {:.6g} per 10k queries is below the cheapest eligible base ({:.6g})",
                                            per_10k_from_per_query(budget), per_10k_from_per_query(min_cost)));
  }
  const std::size_t K = g.size();
  std::vector<std::vector<detail::Segment>> segs(K);
  double scale = budget;
  for (std::size_t i = 0; i < K; ++i) {
    if (!g[i]) continue;
    segs[i] = detail::segments_of(*g[i]);
    for (const auto& s : segs[i]) scale = std::max(scale, s.lo);
  }
  const double btol = 1e-12 * scale;

  std::optional<MasterSolution> best;
  const auto offer = [&](MasterSolution s) {
    if (!best || detail::better(s, *best)) best = s;
  };

  // Single bases: the best point of each piece that fits the budget.
  for (std::size_t i = 0; i < K; ++i) {
    for (const auto& s : segs[i]) {
      if (s.lo > budget + btol) continue;
      offer(detail::make_single(i, s.lo, s.value));
      const double top = std::min(s.hi, budget);
      if (top > s.lo) offer(detail::make_single(i, top, s.at(top)));
    }
  }

  // Pairs of distinct bases.
  for (std::size_t i1 = 0; i1 < K; ++i1) {
    for (std::size_t i2 = i1 + 1; i2 < K; ++i2) {
      for (const auto& s1 : segs[i1]) {
        for (const auto& s2 : segs[i2]) {
          // x = (p1, b1, b2); rows are a.x <= d.
          std::vector<std::array<double, 4>> rows;
          rows.push_back({-1.0, 0.0, 0.0, 0.0});
          rows.push_back({1.0, 0.0, 0.0, 1.0});
          rows.push_back({s1.lo, -1.0, 0.0, 0.0});
          if (std::isfinite(s1.hi)) rows.push_back({-s1.hi, 1.0, 0.0, 0.0});
          rows.push_back({-s2.lo, 0.0, -1.0, -s2.lo});
          if (std::isfinite(s2.hi)) rows.push_back({s2.hi, 0.0, 1.0, s2.hi});
          rows.push_back({0.0, 1.0, 1.0, budget});
          // Normalize rows so the singularity test is scale-free.
          for (auto& r : rows) {
            const double n = std::max({std::abs(r[0]), std::abs(r[1]), std::abs(r[2])});
            for (auto& v : r) v /= n;
          }
          const std::size_t R = rows.size();
          for (std::size_t a = 0; a < R; ++a) {
            for (std::size_t b = a + 1; b < R; ++b) {
              for (std::size_t c = b + 1; c < R; ++c) {
                const auto x = detail::solve3({rows[a], rows[b], rows[c]});
                if (!x) continue;
                const double p1 = (*x)[0];
                const double b1 = (*x)[1];
                const double b2 = (*x)[2];
                bool feasible = true;
                for (const auto& r : rows) {
                  const double lhs = r[0] * p1 + r[1] * b1 + r[2] * b2;
                  const double tol =
                      1e-12 * (std::abs(r[0]) + (std::abs(r[1]) + std::abs(r[2])) * scale + std::abs(r[3]));
                  if (lhs > r[3] + tol) {
                    feasible = false;
                    break;
                  }
                }
                if (!feasible) continue;
                const double pc = std::clamp(p1, 0.0, 1.0);
                if (pc < 1e-12) {
                  const double r2 = detail::snap_to_knot(b2, *g[i2]);
                  offer(detail::make_single(i2, r2, (*g[i2])(r2)));
                  continue;
                }
                if (1.0 - pc < 1e-12) {
                  const double r1 = detail::snap_to_knot(b1, *g[i1]);
                  offer(detail::make_single(i1, r1, (*g[i1])(r1)));
                  continue;
                }
                MasterSolution s;
                s.i1 = i1;
                s.i2 = i2;
                s.p1 = pc;
                s.p2 = 1.0 - pc;
                s.r1 = detail::snap_to_knot(b1 / s.p1, *g[i1]);
                s.r2 = detail::snap_to_knot(b2 / s.p2, *g[i2]);
                s.b1 = s.p1 * s.r1;
                s.b2 = s.p2 * s.r2;
                s.objective = s.p1 * (*g[i1])(s.r1) + s.p2 * (*g[i2])(s.r2);
                offer(s);
              }
            }
          }
        }
      }
    }
  }
  if (!best) throw InfeasibleBudgetError("no feasible base mixture for this budget");
  return *best;
}

// ---------------------------------------------------------------------------

// Threshold realizing escalation level rho for base k on group g: the
// nearest-rank quantile of the training scores. Level 0 stores 0 and is
// never consulted (the executor checks the level first).
inline double threshold_for_level(const EstimatedModel& model, std::size_t k, std::size_t g, double rho) {
  if (rho <= 0.0 || model.count(k, g) == 0) return 0.0;
  const double t = rho * model.grid();
  const double r = std::round(t);
  if (std::abs(t - r) <= 1e-12 * std::max(1.0, t)) return model.quantile(k, g, static_cast<int>(r));
  return quantile_of_sorted(model.sorted_scores(k, g), rho);
}

// Expected accuracy and per-query cost of a strategy under the estimated
// model: for each base i and group g, a rho fraction escalates and earns
// psi(i, j, g, rho) under add-on j, while the rest keeps the base answer.
struct Performance {
  double accuracy = 0.0;
  double cost = 0.0;
};

inline Performance predict_performance(const Strategy& s, const EstimatedModel& model, std::span<const double> costs) {
  const std::size_t K = model.num_services();
  const std::size_t L = model.num_labels();
  if (s.num_services() != K || s.num_labels() != L || costs.size() != K) {
    throw DimensionError("strategy, model and costs disagree on dimensions");
  }
  std::vector<std::size_t> rep(model.num_groups(), L);
  for (std::size_t l = 0; l < L; ++l) {
    auto& r = rep[model.group_of_label(l)];
    if (r == L) r = l;
  }
  Performance out;
  for (std::size_t i = 0; i < K; ++i) {
    const double p = s.base_mixture[i];
    if (p == 0.0) continue;
    double acc = 0.0;
    double extra = 0.0;
    for (std::size_t g = 0; g < model.num_groups(); ++g) {
      const double share = model.label_share(i, g);
      const std::size_t l = rep[g];
      const double rho = s.threshold_levels(i, l);
      double value = model.base_accuracy(i, g);
      if (rho > 0.0) {
        const auto gain = model.r_tilde(i, g, rho);
        const auto pi = s.addon.slice(i, l);
        double mix = 0.0;
        double c = 0.0;
        for (std::size_t j = 0; j < K; ++j) {
          mix += pi[j] * gain[j];
          if (j != i) c += pi[j] * costs[j];
        }
        value += rho * mix;
        extra += share * rho * c;
      }
      acc += share * value;
    }
    out.accuracy += p * acc;
    out.cost += p * (costs[i] + extra);
  }
  return out;
}

// Writes the branch (base, weight, allocation) into the strategy.
inline void write_branch(Strategy& s, const EstimatedModel& model, std::size_t base, double weight,
                         const BaseAllocation& alloc) {
  s.base_mixture[base] = weight;
  for (std::size_t l = 0; l < model.num_labels(); ++l) {
    const std::size_t g = model.group_of_label(l);
    const auto& sol = alloc.solutions[g];
    s.threshold_levels(base, l) = sol.rho;
    s.thresholds(base, l) = threshold_for_level(model, base, g, sol.rho);
    auto slice = s.addon.slice(base, l);
    std::copy(sol.pi.begin(), sol.pi.end(), slice.begin());
  }
}

inline BaseAllocation allocation_at(const EstimatedModel& model, std::size_t base, double r,
                                    std::span<const double> costs, const GFunction* g) {
  if (g != nullptr) {
    for (const auto& k : g->knots()) {
      if (k.feasible && k.theta == r && k.allocation) return *k.allocation;
    }
  }
  return allocate_label_budgets(model, base, r, costs);
}

inline Strategy assemble_strategy(const MasterSolution& master, const EstimatedModel& model,
                                  const ServiceCatalog& catalog, const SolverConfig& config,
                                  std::span<const std::optional<GFunction>> g = {}) {
  const auto& costs = catalog.costs();
  Strategy s = Strategy::canonical(catalog.num_services(), catalog.num_labels());
  const auto gptr = [&](std::size_t i) -> const GFunction* {
    return (i < g.size() && g[i]) ? &*g[i] : nullptr;
  };
  write_branch(s, model, master.i1, master.p1, allocation_at(model, master.i1, master.r1, costs, gptr(master.i1)));
  if (!master.single()) {
    write_branch(s, model, master.i2, master.p2, allocation_at(model, master.i2, master.r2, costs, gptr(master.i2)));
  }
  const auto perf = predict_performance(s, model, costs);
  s.meta.budget = config.budget;
  s.meta.grid = model.grid();
  s.meta.predicted_accuracy = perf.accuracy;
  s.meta.predicted_cost = perf.cost;
  s.meta.catalog_fingerprint = catalog.fingerprint();
  s.meta.uniform_threshold = config.uniform_threshold;
  return s;
}

struct TrainingResult {
  EstimatedModel model;
  std::vector<std::optional<GFunction>> g;  // one per service; empty if not an eligible base
  MasterSolution master;
  Strategy strategy;
};

inline TrainingResult train_detailed(const AnnotatedDataset& data, const ServiceCatalog& catalog,
                                     const SolverConfig& config) {
  if (config.grid < 1) throw ValidationError("grid resolution must be at least 1");
  if (!(config.budget >= 0.0) || !std::isfinite(config.budget)) throw ValidationError("budget must be finite and nonnegative");
  if (data.size() == 0) throw ValidationError("training set is empty");
  data.require_catalog(catalog);
  const std::size_t K = catalog.num_services();
  if (config.fixed_base && *config.fixed_base >= K) throw ValidationError("fixed base index out of range");

  std::vector<std::size_t> bases;
  for (std::size_t i = 0; i < K; ++i) {
    if (!config.fixed_base || *config.fixed_base == i) bases.push_back(i);
  }
  double min_cost = std::numeric_limits<double>::infinity();
  for (auto i : bases) min_cost = std::min(min_cost, catalog.cost(i));
  if (config.budget < min_cost * (1.0 - 1e-12)) {
    throw InfeasibleBudgetError(fmt::format("budget {:.6g} per 10k queries is below the cheapest eligible base ({:.6g})",
                                            per_10k_from_per_query(config.budget), per_10k_from_per_query(min_cost)));
  }

  TrainingResult out;
  out.model = estimate_model(data, EstimateOptions{.grid = config.grid, .collapse_labels = config.uniform_threshold});
  out.g.assign(K, std::nullopt);
  const std::array<double, 1> extra{config.budget};
  std::vector<GFunction> built(bases.size());
  parallel_for(bases.size(), config.threads, [&](std::size_t n) {
    built[n] = build_g_function(out.model, bases[n], catalog.costs(), extra);
  });
  for (std::size_t n = 0; n < bases.size(); ++n) out.g[bases[n]] = std::move(built[n]);

  out.master = solve_master(out.g, config.budget);
  out.strategy = assemble_strategy(out.master, out.model, catalog, config, out.g);
  return out;
}

inline Strategy train(const AnnotatedDataset& data, const ServiceCatalog& catalog, const SolverConfig& config) {
  return train_detailed(data, catalog, config).strategy;
}

inline nlohmann::json master_to_json(const MasterSolution& m) {
  return {{"i1", m.i1}, {"i2", m.i2}, {"p1", m.p1}, {"p2", m.p2}, {"b1", m.b1},
          {"b2", m.b2}, {"r1", m.r1}, {"r2", m.r2}, {"objective", m.objective}};
}

}  // namespace apiroute

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "apiroute/error.hpp"
#include "apiroute/estimation.hpp"

namespace apiroute {

// Objective values closer than this are treated as ties and resolved by the
// documented canonical order instead of by floating-point noise.
inline constexpr double kTieTolerance = 1e-12;

// Optimal escalation for one (base, predicted label) pair at add-on budget beta.
struct LabelSolution {
  double rho = 0.0;         // fraction of this label's samples that escalate
  std::vector<double> pi;   // add-on mixture; pi[base] is "keep the base answer"
  double value = 0.0;       // accuracy on this label's samples
  double beta = 0.0;

  // Expected add-on spend per sample carrying this label.
  [[nodiscard]] double addon_cost(std::span<const double> costs, std::size_t base) const {
    double c = 0.0;
    for (std::size_t j = 0; j < pi.size(); ++j) {
      if (j != base) c += pi[j] * costs[j];
    }
    return rho * c;
  }
};

// The fixed-(base, label) escalation problem
//
//   max  base_acc + rho * sum_j pi_j * r_tilde_j(rho)
//   s.t. rho * sum_{j != base} pi_j c_j <= beta,  rho in [0,1],  pi on the simplex
//
// An optimum always puts pi in one of three shapes: all mass on one add-on
// (case A, mu <= beta/c_i), one add-on plus the base remainder (case A,
// mu > beta/c_i), or two add-ons with the budget tight (case B). r_tilde is
// linear between quantile knots, so each shape's objective is quadratic on a
// knot interval and is maximized in closed form there.
class LabelProblem {
 public:
  LabelProblem(const EstimatedModel& model, std::size_t base, std::size_t group, std::span<const double> costs)
      : model_(&model), base_(base), group_(group), M_(model.grid()) {
    const std::size_t K = model.num_services();
    if (costs.size() != K) throw DimensionError("cost vector does not match the model's service count");
    cost_.assign(costs.begin(), costs.end());
    cost_[base] = 0.0;  // keeping the base answer costs nothing extra
    base_value_ = model.base_accuracy(base, group);
    gain_.assign(static_cast<std::size_t>(M_) + 1, std::vector<double>(K, 0.0));
    for (int m = 0; m <= M_; ++m) {
      const double own = model.psi_knot(base, base, group, m);
      for (std::size_t j = 0; j < K; ++j) {
        gain_[static_cast<std::size_t>(m)][j] = (j == base) ? 0.0 : model.psi_knot(base, j, group, m) - own;
      }
    }
  }

  [[nodiscard]] double base_value() const noexcept { return base_value_; }

  // Objective of an arbitrary (rho, pi), evaluated through the interpolated model.
  [[nodiscard]] double objective(double rho, std::span<const double> pi) const {
    if (rho == 0.0) return base_value_;
    const auto gain = model_->r_tilde(base_, group_, rho);
    double acc = 0.0;
    for (std::size_t j = 0; j < pi.size(); ++j) acc += pi[j] * gain[j];
    return base_value_ + rho * acc;
  }

  [[nodiscard]] LabelSolution solve(double beta) const {
    if (!(beta >= 0.0)) throw ValidationError(fmt::format("add-on budget {} must be nonnegative", beta));
    const std::size_t K = cost_.size();
    Best best;
    best.mu = 0.0;
    best.value = base_value_;
    best.first = best.second = base_;

    const double inf = std::numeric_limits<double>::infinity();
    for (int m = 0; m < M_; ++m) {
      const double lo = model_->knot_level(m);
      const double hi = model_->knot_level(m + 1);
      // Case A: add-on i alone, or i plus the base remainder once the budget binds.
      for (std::size_t i = 0; i < K; ++i) {
        if (i == base_) continue;
        const double cap = cost_[i] > 0.0 ? beta / cost_[i] : inf;
        if (cap == 0.0) continue;  // nothing affordable
        const double s = slope(m, i);
        const double a = gain_at(m, i, lo) - s * lo;
        std::vector<double> cands{lo, hi};
        if (cap > lo && cap < hi) cands.push_back(cap);
        if (s < 0.0) {
          const double stat = -a / (2.0 * s);
          if (stat > lo && stat < std::min(hi, cap)) cands.push_back(stat);
        }
        for (double mu : cands) {
          if (mu <= 0.0) continue;
          const double v = base_value_ + std::min(mu, cap) * gain_at(m, i, mu);
          consider(best, v, mu, Shape::kSingleOrRemainder, i, base_);
        }
      }
      // Case B: two add-ons i, j with c_i > c_j sharing the mass, budget tight.
      if (beta <= 0.0) continue;
      for (std::size_t i = 0; i < K; ++i) {
        if (i == base_) continue;
        for (std::size_t j = 0; j < K; ++j) {
          if (j == base_ || j == i || !(cost_[i] > cost_[j])) continue;
          const double from = std::max(lo, beta / cost_[i]);
          const double to = std::min({hi, cost_[j] > 0.0 ? beta / cost_[j] : inf, 1.0});
          if (from > to) continue;
          const double d = cost_[i] - cost_[j];
          const double si = slope(m, i);
          const double sj = slope(m, j);
          const double ai = gain_at(m, i, lo) - si * lo;
          const double aj = gain_at(m, j, lo) - sj * lo;
          const double q2 = cost_[i] * sj - cost_[j] * si;
          const double q1 = beta * si - cost_[j] * ai + cost_[i] * aj - beta * sj;
          std::vector<double> cands{from, to};
          if (q2 < 0.0) {
            const double stat = -q1 / (2.0 * q2);
            if (stat > from && stat < to) cands.push_back(stat);
          }
          for (double mu : cands) {
            if (mu <= 0.0) continue;
            const double v = base_value_ + ((beta - mu * cost_[j]) * gain_at(m, i, mu) +
                                            (mu * cost_[i] - beta) * gain_at(m, j, mu)) / d;
            consider(best, v, mu, Shape::kPair, i, j);
          }
        }
      }
    }

    LabelSolution sol;
    sol.beta = beta;
    sol.pi.assign(K, 0.0);
    if (best.mu == 0.0) {
      sol.pi[base_] = 1.0;
      sol.value = base_value_;
      return sol;
    }
    sol.rho = best.mu;
    if (best.shape == Shape::kSingleOrRemainder) {
      const std::size_t i = best.first;
      const double cap = cost_[i] > 0.0 ? beta / cost_[i] : inf;
      if (best.mu <= cap) {
        sol.pi[i] = 1.0;
      } else {
        sol.pi[i] = cap / best.mu;
        sol.pi[base_] = 1.0 - sol.pi[i];
      }
    } else {
      const std::size_t i = best.first;
      const std::size_t j = best.second;
      const double wi = std::clamp((beta / best.mu - cost_[j]) / (cost_[i] - cost_[j]), 0.0, 1.0);
      if (wi >= 1.0) {
        sol.pi[i] = 1.0;
      } else if (wi <= 0.0) {
        sol.pi[j] = 1.0;
      } else {
        sol.pi[i] = wi;
        sol.pi[j] = 1.0 - wi;
      }
    }
    sol.value = objective(sol.rho, sol.pi);
    return sol;
  }

 private:
  enum class Shape { kSingleOrRemainder, kPair };
  struct Best {
    double value = 0.0;
    double mu = 0.0;
    Shape shape = Shape::kSingleOrRemainder;
    std::size_t first = 0;
    std::size_t second = 0;
  };

  // Strictly better beyond the tie tolerance wins; ties go to the smaller mu.
  // Candidates arrive in increasing add-on index, so equal mu keeps the earlier one.
  static void consider(Best& best, double v, double mu, Shape shape, std::size_t i, std::size_t j) {
    if (v > best.value + kTieTolerance || (v >= best.value - kTieTolerance && mu < best.mu)) {
      best = Best{v, mu, shape, i, j};
    }
  }

  [[nodiscard]] double slope(int m, std::size_t j) const {
    const auto mu = static_cast<std::size_t>(m);
    return (gain_[mu + 1][j] - gain_[mu][j]) * M_;
  }

  // r_tilde_j at mu inside knot interval m; exact at the knots.
  [[nodiscard]] double gain_at(int m, std::size_t j, double mu) const {
    const auto mi = static_cast<std::size_t>(m);
    const double lo = model_->knot_level(m);
    const double hi = model_->knot_level(m + 1);
    if (mu == lo) return gain_[mi][j];
    if (mu == hi) return gain_[mi + 1][j];
    return gain_[mi][j] + (mu - lo) * slope(m, j);
  }

  const EstimatedModel* model_;
  std::size_t base_;
  std::size_t group_;
  int M_;
  std::vector<double> cost_;
  double base_value_ = 0.0;
  std::vector<std::vector<double>> gain_;  // [knot][add-on]
};

inline LabelSolution solve_fixed_base_label(const EstimatedModel& model, std::size_t base, std::size_t group,
                                            double beta, std::span<const double> costs) {
  return LabelProblem(model, base, group, costs).solve(beta);
}

// ---------------------------------------------------------------------------
// Budget allocation across labels for one base service.

struct BaseAllocation {
  std::size_t base = 0;
  double budget = 0.0;                  // per-call budget b' including the base call
  std::vector<double> betas;            // beta_m = (m/M)(b' - c_base), m = 0..M
  std::vector<int> units;               // t_g per group, summing to M
  std::vector<LabelSolution> solutions; // chosen solution per group
  double value = 0.0;                   // sum_g share(base, g) * h_g(beta_{t_g})
};

// Exact maximizer of sum_g share_g * h_g(beta_{t_g}) subject to sum_g t_g = M,
// via dynamic programming over groups. Among near-optimal allocations
// (within kTieTolerance) the lexicographically largest t is returned, so a
// flat objective yields (M, 0, ..., 0).
inline std::vector<int> best_allocation(std::span<const double> share, const std::vector<std::vector<double>>& h,
                                        int M) {
  const std::size_t G = share.size();
  const auto Mu = static_cast<std::size_t>(M);
  const double neg_inf = -std::numeric_limits<double>::infinity();
  // tail[g][u]: best value of groups g..G-1 using exactly u units.
  std::vector<std::vector<double>> tail(G + 1, std::vector<double>(Mu + 1, neg_inf));
  tail[G][0] = 0.0;
  for (std::size_t g = G; g-- > 0;) {
    for (std::size_t u = 0; u <= Mu; ++u) {
      double best = neg_inf;
      for (std::size_t t = 0; t <= u; ++t) {
        const double rest = tail[g + 1][u - t];
        if (rest == neg_inf) continue;
        best = std::max(best, share[g] * h[g][t] + rest);
      }
      tail[g][u] = best;
    }
  }
  const double target = tail[0][Mu] - kTieTolerance;
  std::vector<int> units(G, 0);
  double partial = 0.0;
  std::size_t left = Mu;
  for (std::size_t g = 0; g < G; ++g) {
    for (std::size_t t = left + 1; t-- > 0;) {
      const double rest = tail[g + 1][left - t];
      if (rest == neg_inf) continue;
      if (partial + share[g] * h[g][t] + rest >= target) {
        units[g] = static_cast<int>(t);
        partial += share[g] * h[g][t];
        left -= t;
        break;
      }
    }
  }
  return units;
}

inline BaseAllocation allocate_label_budgets(const EstimatedModel& model, std::size_t base, double budget,
                                             std::span<const double> costs) {
  const double base_cost = costs[base];
  if (budget < base_cost * (1.0 - 1e-12)) {
    throw ValidationError(fmt::format("per-call budget {} cannot cover base service {} (cost {})", budget, base,
                                      base_cost));
  }
  const int M = model.grid();
  const std::size_t G = model.num_groups();
  BaseAllocation out;
  out.base = base;
  out.budget = budget;
  out.betas.resize(static_cast<std::size_t>(M) + 1);
  const double spare = std::max(0.0, budget - base_cost);
  for (int m = 0; m <= M; ++m) out.betas[static_cast<std::size_t>(m)] = spare * m / M;

  std::vector<double> share(G);
  std::vector<std::vector<double>> h(G);
  std::vector<std::vector<LabelSolution>> sols(G);
  for (std::size_t g = 0; g < G; ++g) {
    share[g] = model.label_share(base, g);
    const LabelProblem problem(model, base, g, costs);
    for (int m = 0; m <= M; ++m) {
      sols[g].push_back(problem.solve(out.betas[static_cast<std::size_t>(m)]));
      h[g].push_back(sols[g].back().value);
    }
  }
  out.units = best_allocation(share, h, M);
  for (std::size_t g = 0; g < G; ++g) {
    const auto t = static_cast<std::size_t>(out.units[g]);
    out.solutions.push_back(sols[g][t]);
    out.value += share[g] * h[g][t];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-base value function g_i(theta): best accuracy with base i at per-call budget theta.

struct GKnot {
  double theta = 0.0;
  double value = 0.0;
  bool feasible = false;  // theta covers the base call
  std::optional<BaseAllocation> allocation;
};

// Piecewise-linear value function of one base service. Knots sit on the
// uniform grid theta_m = m * 2 max(c) / M, at the base's own cost c_i, and at
// any extra budgets requested by the caller. Below c_i no strategy with this
// base is affordable and the function is 0; beyond the last knot it is flat.
class GFunction {
 public:
  GFunction() = default;
  GFunction(std::size_t base, double base_cost, std::vector<GKnot> knots)
      : base_(base), base_cost_(base_cost), knots_(std::move(knots)) {}

  [[nodiscard]] std::size_t base() const noexcept { return base_; }
  [[nodiscard]] double base_cost() const noexcept { return base_cost_; }
  [[nodiscard]] const std::vector<GKnot>& knots() const noexcept { return knots_; }

  [[nodiscard]] std::vector<const GKnot*> feasible_knots() const {
    std::vector<const GKnot*> out;
    for (const auto& k : knots_) {
      if (k.feasible) out.push_back(&k);
    }
    return out;
  }

  [[nodiscard]] double operator()(double theta) const {
    if (theta < base_cost_ * (1.0 - 1e-12)) return 0.0;
    const GKnot* prev = nullptr;
    for (const auto& k : knots_) {
      if (!k.feasible) continue;
      if (theta == k.theta) return k.value;
      if (theta < k.theta) {
        if (prev == nullptr) return k.value;
        const double w = (theta - prev->theta) / (k.theta - prev->theta);
        return prev->value + w * (k.value - prev->value);
      }
      prev = &k;
    }
    return prev != nullptr ? prev->value : 0.0;
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j;
    j["base"] = base_;
    j["base_cost"] = base_cost_;
    j["knots"] = nlohmann::json::array();
    for (const auto& k : knots_) {
      nlohmann::json kj{{"theta", k.theta}, {"value", k.value}, {"feasible", k.feasible}};
      if (k.allocation) {
        kj["units"] = k.allocation->units;
        nlohmann::json sols = nlohmann::json::array();
        for (const auto& s : k.allocation->solutions) {
          sols.push_back({{"rho", s.rho}, {"pi", s.pi}, {"value", s.value}, {"beta", s.beta}});
        }
        kj["solutions"] = sols;
      }
      j["knots"].push_back(std::move(kj));
    }
    return j;
  }

 private:
  std::size_t base_ = 0;
  double base_cost_ = 0.0;
  std::vector<GKnot> knots_;
};

inline std::vector<double> uniform_budget_knots(std::span<const double> costs, int M) {
  const double top = 2.0 * *std::max_element(costs.begin(), costs.end());
  std::vector<double> out(static_cast<std::size_t>(M) + 1);
  for (int m = 0; m <= M; ++m) out[static_cast<std::size_t>(m)] = top * m / M;
  return out;
}

inline GFunction build_g_function(const EstimatedModel& model, std::size_t base, std::span<const double> costs,
                                  std::span<const double> extra_knots = {}) {
  const double c = costs[base];
  std::vector<double> thetas = uniform_budget_knots(costs, model.grid());
  thetas.push_back(c);
  for (double t : extra_knots) {
    if (t >= c) thetas.push_back(t);
  }
  std::sort(thetas.begin(), thetas.end());
  std::vector<double> unique;
  for (double t : thetas) {
    if (unique.empty() || std::abs(t - unique.back()) > 1e-12 * std::max(1e-300, std::abs(t))) {
      unique.push_back(t);
    } else if (t == c) {
      unique.back() = c;  // keep the exact base cost as the anchor
    }
  }

  std::vector<GKnot> knots;
  knots.reserve(unique.size());
  for (double theta : unique) {
    GKnot k;
    k.theta = theta;
    k.feasible = theta >= c;
    if (k.feasible) {
      k.allocation = allocate_label_budgets(model, base, theta, costs);
      k.value = k.allocation->value;
    }
    knots.push_back(std::move(k));
  }
  return GFunction(base, c, std::move(knots));
}

}  // namespace apiroute

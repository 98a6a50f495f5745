#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "apiroute/catalog.hpp"
#include "apiroute/dataset.hpp"
#include "apiroute/error.hpp"
#include "apiroute/estimation.hpp"
#include "apiroute/executor.hpp"
#include "apiroute/random.hpp"
#include "apiroute/strategy.hpp"

// Brute-force reference optimizer. It searches the same discretized family
// as the trainer (per-base budgets on the knot grid, allocations of M budget
// units across labels, escalation shapes of the fixed-label problem) by
// plain enumeration and dense 1-D search. Nothing here reuses the trainer's
// optimization code; only estimation and replay are shared.

namespace apiroute {

struct OracleResult {
  Strategy strategy;
  double predicted_accuracy = 0.0;
  double predicted_cost = 0.0;
  double replay_accuracy = 0.0;
  double replay_cost = 0.0;
  std::size_t enumeration_size = 0;       // mixture candidates examined
  std::size_t allocation_candidates = 0;  // label allocations scored across all (base, budget)
};

namespace oracle_detail {

struct Escalation {
  double rho = 0.0;
  std::vector<double> pi;
  double value = 0.0;
};

// One escalation shape as a function of the escalated fraction mu.
struct Shape {
  std::size_t i = 0;
  std::optional<std::size_t> j;  // second add-on for budget-tight pairs
  double lo = 0.0;
  double hi = 1.0;
};

class LabelSearch {
 public:
  LabelSearch(const EstimatedModel& model, std::size_t k, std::size_t l, const std::vector<double>& costs)
      : model_(model), k_(k), l_(l), costs_(costs) {}

  [[nodiscard]] std::vector<double> mixture(const Shape& s, double mu, double beta) const {
    std::vector<double> pi(costs_.size(), 0.0);
    if (!s.j) {
      const double full = mu * costs_[s.i];
      if (costs_[s.i] == 0.0 || full <= beta) {
        pi[s.i] = 1.0;
      } else {
        pi[s.i] = beta / full;
        pi[k_] = 1.0 - pi[s.i];
      }
    } else {
      const double ci = costs_[s.i];
      const double cj = costs_[*s.j];
      const double w = std::clamp((beta / mu - cj) / (ci - cj), 0.0, 1.0);
      pi[s.i] = w;
      pi[*s.j] = 1.0 - w;
    }
    return pi;
  }

  // Accuracy on this label's samples when a fraction mu escalates per pi.
  [[nodiscard]] double value(double mu, const std::vector<double>& pi) const {
    const double keep = model_.psi(k_, k_, l_, 1.0);
    if (mu == 0.0) return keep;
    const double own = model_.psi(k_, k_, l_, mu);
    double gain = 0.0;
    for (std::size_t j = 0; j < pi.size(); ++j) {
      if (pi[j] != 0.0) gain += pi[j] * (model_.psi(k_, j, l_, mu) - own);
    }
    return keep + mu * gain;
  }

  [[nodiscard]] Escalation solve(double beta, int M) const {
    const std::size_t K = costs_.size();
    Escalation best;
    best.pi.assign(K, 0.0);
    best.pi[k_] = 1.0;
    best.value = value(0.0, best.pi);
    if (beta <= 0.0 && std::none_of(costs_.begin(), costs_.end(), [&](double c) { return c == 0.0; })) return best;

    std::vector<double> points;
    for (int n = 0; n <= 200; ++n) points.push_back(n / 200.0);
    for (int m = 0; m <= M; ++m) points.push_back(static_cast<double>(m) / M);
    for (std::size_t i = 0; i < K; ++i) {
      if (i != k_ && costs_[i] > 0.0 && beta / costs_[i] <= 1.0) points.push_back(beta / costs_[i]);
    }

    std::vector<Shape> shapes;
    for (std::size_t i = 0; i < K; ++i) {
      if (i != k_) shapes.push_back({i, std::nullopt, 0.0, 1.0});
    }
    if (beta > 0.0) {
      for (std::size_t i = 0; i < K; ++i) {
        for (std::size_t j = 0; j < K; ++j) {
          if (i == k_ || j == k_ || !(costs_[i] > costs_[j])) continue;
          const double lo = beta / costs_[i];
          const double hi = std::min(costs_[j] > 0.0 ? beta / costs_[j] : 1.0, 1.0);
          if (lo <= hi) shapes.push_back({i, j, lo, hi});
        }
      }
    }

    const auto consider = [&](const Shape& s, double mu) {
      if (mu <= 0.0) return;
      auto pi = mixture(s, mu, beta);
      const double v = value(mu, pi);
      if (v > best.value) best = Escalation{mu, std::move(pi), v};
    };

    for (const auto& s : shapes) {
      std::vector<double> xs{s.lo, s.hi};
      for (double p : points) {
        if (p > s.lo && p < s.hi) xs.push_back(p);
      }
      std::sort(xs.begin(), xs.end());
      xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
      std::vector<double> vs(xs.size());
      for (std::size_t n = 0; n < xs.size(); ++n) {
        vs[n] = xs[n] > 0.0 ? value(xs[n], mixture(s, xs[n], beta)) : best.value;
        consider(s, xs[n]);
      }
      // Refine around every grid-local maximum; between adjacent points the
      // objective is a single quadratic, so golden-section search is exact.
      for (std::size_t n = 0; n < xs.size(); ++n) {
        const bool left_ok = n == 0 || vs[n] >= vs[n - 1];
        const bool right_ok = n + 1 == xs.size() || vs[n] >= vs[n + 1];
        if (!(left_ok && right_ok)) continue;
        if (n > 0) golden(s, xs[n - 1], xs[n], beta, consider);
        if (n + 1 < xs.size()) golden(s, xs[n], xs[n + 1], beta, consider);
      }
    }
    return best;
  }

 private:
  template <class Consider>
  void golden(const Shape& s, double a, double b, double beta, Consider& consider) const {
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    const auto f = [&](double mu) { return mu > 0.0 ? value(mu, mixture(s, mu, beta)) : -1.0; };
    double x1 = b - phi * (b - a);
    double x2 = a + phi * (b - a);
    double f1 = f(x1);
    double f2 = f(x2);
    for (int it = 0; it < 80 && b - a > 1e-13; ++it) {
      if (f1 < f2) {
        a = x1;
        x1 = x2;
        f1 = f2;
        x2 = a + phi * (b - a);
        f2 = f(x2);
      } else {
        b = x2;
        x2 = x1;
        f2 = f1;
        x1 = b - phi * (b - a);
        f1 = f(x1);
      }
    }
    consider(s, x1);
    consider(s, x2);
  }

  const EstimatedModel& model_;
  std::size_t k_;
  std::size_t l_;
  const std::vector<double>& costs_;
};

struct BaseChoice {
  double budget = 0.0;
  double value = 0.0;
  std::vector<Escalation> labels;
};

// All compositions of M units into L parts, in lexicographic order.
inline void compositions(int M, std::size_t L, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
  if (cur.size() + 1 == L) {
    int used = 0;
    for (int t : cur) used += t;
    cur.push_back(M - used);
    out.push_back(cur);
    cur.pop_back();
    return;
  }
  int used = 0;
  for (int t : cur) used += t;
  for (int t = 0; t <= M - used; ++t) {
    cur.push_back(t);
    compositions(M, L, cur, out);
    cur.pop_back();
  }
}

}  // namespace oracle_detail

// Per-call budgets the family allows for base k: its own cost, the uniform
// grid m * 2 max(c) / M at or above it, and the user budget when affordable.
inline std::vector<double> oracle_budget_levels(const std::vector<double>& costs, std::size_t k, int M, double b) {
  const double top = 2.0 * *std::max_element(costs.begin(), costs.end());
  std::vector<double> r{costs[k]};
  for (int m = 0; m <= M; ++m) {
    const double theta = top * m / M;
    if (theta >= costs[k]) r.push_back(theta);
  }
  if (b >= costs[k]) r.push_back(b);
  std::sort(r.begin(), r.end());
  std::vector<double> out;
  for (double x : r) {
    if (out.empty() || std::abs(x - out.back()) > 1e-12 * std::max(1e-300, std::abs(x))) out.push_back(x);
  }
  return out;
}

inline OracleResult brute_force_optimal(const AnnotatedDataset& data, const ServiceCatalog& catalog, double b, int M,
                                        int p_grid_steps) {
  const std::size_t K = catalog.num_services();
  const std::size_t L = catalog.num_labels();
  if (K > 4 || L > 3 || M < 1 || M > 4 || p_grid_steps < 1 || p_grid_steps > 20) {
    throw ValidationError("brute-force search is limited to K <= 4, L <= 3, 1 <= M <= 4, 1 <= p_grid_steps <= 20");
  }
  data.require_catalog(catalog);
  const auto& costs = catalog.costs();
  if (b < catalog.min_cost() * (1.0 - 1e-12)) throw InfeasibleBudgetError("budget below the cheapest service");

  const EstimatedModel model = estimate_model(data, M);
  OracleResult result;

  std::vector<std::vector<int>> allocs;
  std::vector<int> cur;
  oracle_detail::compositions(M, L, cur, allocs);

  // Best value of each base at each allowed per-call budget.
  std::vector<std::vector<oracle_detail::BaseChoice>> choices(K);
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<oracle_detail::LabelSearch> search;
    for (std::size_t l = 0; l < L; ++l) search.emplace_back(model, k, l, costs);
    for (double r : oracle_budget_levels(costs, k, M, b)) {
      std::vector<std::vector<oracle_detail::Escalation>> h(L);
      for (std::size_t l = 0; l < L; ++l) {
        for (int t = 0; t <= M; ++t) h[l].push_back(search[l].solve(std::max(0.0, r - costs[k]) * t / M, M));
      }
      oracle_detail::BaseChoice best;
      best.budget = r;
      best.value = -1.0;
      for (const auto& a : allocs) {
        ++result.allocation_candidates;
        double v = 0.0;
        for (std::size_t l = 0; l < L; ++l) v += model.label_share(k, l) * h[l][static_cast<std::size_t>(a[l])].value;
        if (v > best.value) {
          best.value = v;
          best.labels.clear();
          for (std::size_t l = 0; l < L; ++l) best.labels.push_back(h[l][static_cast<std::size_t>(a[l])]);
        }
      }
      choices[k].push_back(std::move(best));
    }
  }

  struct Pick {
    std::size_t i1 = 0, i2 = 0;
    std::size_t r1 = 0, r2 = 0;
    double p1 = 1.0;
    double value = -1.0;
  } pick;
  const double slack = 1e-12 * std::max(b, 1e-300);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t r = 0; r < choices[k].size(); ++r) {
      ++result.enumeration_size;
      const auto& c = choices[k][r];
      if (c.budget <= b + slack && c.value > pick.value) pick = {k, k, r, r, 1.0, c.value};
    }
  }
  for (std::size_t i1 = 0; i1 < K; ++i1) {
    for (std::size_t i2 = i1 + 1; i2 < K; ++i2) {
      for (std::size_t r1 = 0; r1 < choices[i1].size(); ++r1) {
        for (std::size_t r2 = 0; r2 < choices[i2].size(); ++r2) {
          const auto& c1 = choices[i1][r1];
          const auto& c2 = choices[i2][r2];
          std::vector<double> ps;
          for (int s = 0; s <= p_grid_steps; ++s) ps.push_back(static_cast<double>(s) / p_grid_steps);
          if (std::min(c1.budget, c2.budget) < b && b < std::max(c1.budget, c2.budget)) {
            ps.push_back((c2.budget - b) / (c2.budget - c1.budget));
          }
          for (double p1 : ps) {
            ++result.enumeration_size;
            const double spend = p1 * c1.budget + (1.0 - p1) * c2.budget;
            if (spend > b + slack) continue;
            const double v = p1 * c1.value + (1.0 - p1) * c2.value;
            if (v > pick.value) pick = {i1, i2, r1, r2, p1, v};
          }
        }
      }
    }
  }
  if (pick.value < 0.0) throw InfeasibleBudgetError("no affordable strategy in the family");

  // Materialize the chosen member.
  Strategy s = Strategy::canonical(K, L);
  double cost = 0.0;
  const auto write = [&](std::size_t k, double p, const oracle_detail::BaseChoice& c) {
    if (p <= 0.0) return;
    s.base_mixture[k] = p;
    double extra = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      const auto& e = c.labels[l];
      s.threshold_levels(k, l) = e.rho;
      if (e.rho > 0.0 && model.count(k, l) > 0) {
        std::vector<double> scores;
        for (const auto& x : data.samples()) {
          if (x.predicted[k] == l) scores.push_back(x.scores[k]);
        }
        s.thresholds(k, l) = empirical_quantile(scores, e.rho);
      }
      auto slice = s.addon.slice(k, l);
      std::fill(slice.begin(), slice.end(), 0.0);
      double c_add = 0.0;
      for (std::size_t j = 0; j < K; ++j) {
        slice[j] = e.pi[j];
        if (j != k) c_add += e.pi[j] * costs[j];
      }
      extra += model.label_share(k, l) * e.rho * c_add;
    }
    cost += p * (costs[k] + extra);
  };
  if (pick.i1 == pick.i2) {
    write(pick.i1, 1.0, choices[pick.i1][pick.r1]);
  } else {
    write(pick.i1, pick.p1, choices[pick.i1][pick.r1]);
    write(pick.i2, 1.0 - pick.p1, choices[pick.i2][pick.r2]);
  }
  s.meta.budget = b;
  s.meta.grid = M;
  s.meta.predicted_accuracy = pick.value;
  s.meta.predicted_cost = cost;
  s.meta.catalog_fingerprint = catalog.fingerprint();

  const auto replay = exact_replay_expectation(s, data, costs);
  result.strategy = std::move(s);
  result.predicted_accuracy = pick.value;
  result.predicted_cost = cost;
  result.replay_accuracy = replay.accuracy;
  result.replay_cost = replay.mean_cost;
  return result;
}

// ---------------------------------------------------------------------------
// Synthetic replay corpora

struct SyntheticSpec {
  std::size_t services = 3;
  std::size_t labels = 2;
  std::size_t samples = 1000;
  std::vector<std::string> service_names;    // default svc0, svc1, ...
  std::vector<std::string> label_names;      // default c0, c1, ...
  std::vector<double> costs_per_10k;         // one per service
  std::vector<std::vector<double>> accuracy; // [service][true label]: P(correct)
  std::vector<double> informativeness;       // per service in [0,1]; 0 = score independent of correctness
  std::vector<double> label_prior;           // empty = uniform
};

struct SyntheticCorpus {
  ServiceCatalog catalog;
  AnnotatedDataset data;
};

// Score density is 1 + kappa(2s - 1) on [0,1] when the service is right and
// 1 - kappa(2s - 1) when it is wrong; sampled by inverting the CDF.
inline double draw_score(Rng& rng, bool correct, double kappa) {
  const double u = uniform01(rng);
  double s = u;
  if (kappa > 0.0) {
    if (correct) {
      s = (-(1.0 - kappa) + std::sqrt((1.0 - kappa) * (1.0 - kappa) + 4.0 * kappa * u)) / (2.0 * kappa);
    } else {
      s = ((1.0 + kappa) - std::sqrt((1.0 + kappa) * (1.0 + kappa) - 4.0 * kappa * u)) / (2.0 * kappa);
    }
  }
  return std::clamp(std::round(s * 1e6) / 1e6, 0.0, 1.0);
}

inline SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed) {
  const std::size_t K = spec.services;
  const std::size_t L = spec.labels;
  if (K < 1 || L < 2 || spec.samples < 1) throw ValidationError("synthetic corpus needs K >= 1, L >= 2, N >= 1");
  if (spec.costs_per_10k.size() != K) throw ValidationError("need one cost per service");
  if (spec.accuracy.size() != K || spec.informativeness.size() != K) {
    throw ValidationError("need accuracy and informativeness for every service");
  }
  const auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  for (std::size_t k = 0; k < K; ++k) {
    if (spec.accuracy[k].size() != L) throw ValidationError("accuracy rows must have one entry per label");
    if (!std::all_of(spec.accuracy[k].begin(), spec.accuracy[k].end(), in_unit) || !in_unit(spec.informativeness[k])) {
      throw ValidationError("accuracies and informativeness must lie in [0,1]");
    }
  }
  std::vector<double> prior = spec.label_prior.empty() ? std::vector<double>(L, 1.0 / static_cast<double>(L))
                                                        : spec.label_prior;
  if (prior.size() != L || !std::all_of(prior.begin(), prior.end(), in_unit)) {
    throw ValidationError("label prior must have one probability per label");
  }

  std::vector<Service> services;
  for (std::size_t k = 0; k < K; ++k) {
    services.push_back({k < spec.service_names.size() ? spec.service_names[k] : fmt::format("svc{}", k),
                        Money::from_per_10k(spec.costs_per_10k[k])});
  }
  std::vector<std::string> labels;
  for (std::size_t l = 0; l < L; ++l) {
    labels.push_back(l < spec.label_names.size() ? spec.label_names[l] : fmt::format("c{}", l));
  }
  ServiceCatalog catalog(std::move(services), std::move(labels));

  Rng rng(seed);
  std::vector<AnnotatedSample> samples;
  samples.reserve(spec.samples);
  const int width = static_cast<int>(std::to_string(spec.samples).size());
  for (std::size_t n = 0; n < spec.samples; ++n) {
    AnnotatedSample x;
    x.sample_id = fmt::format("s{:0{}}", n, width);
    x.true_label = sample_categorical(rng, prior);
    x.predicted.resize(K);
    x.scores.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      const bool correct = uniform01(rng) < spec.accuracy[k][x.true_label];
      if (correct) {
        x.predicted[k] = x.true_label;
      } else {
        const auto other = static_cast<std::size_t>(uniform_index(rng, L - 1));
        x.predicted[k] = other >= x.true_label ? other + 1 : other;
      }
      x.scores[k] = draw_score(rng, correct, spec.informativeness[k]);
    }
    samples.push_back(std::move(x));
  }
  AnnotatedDataset data(std::move(samples), catalog);
  return {std::move(catalog), std::move(data)};
}

// Market shaped like a facial-emotion task: a free open-source model with
// very informative scores, and three paid services of which the priciest is
// the most accurate.
inline SyntheticSpec fer_like_spec(std::size_t samples = 4000) {
  SyntheticSpec s;
  s.services = 4;
  s.labels = 4;
  s.samples = samples;
  s.service_names = {"opensource", "vendor_a", "vendor_b", "vendor_c"};
  s.label_names = {"happy", "sad", "surprise", "neutral"};
  s.costs_per_10k = {0.0, 10.0, 15.0, 20.0};
  s.accuracy = {{0.84, 0.66, 0.74, 0.70},
                {0.86, 0.72, 0.80, 0.74},
                {0.84, 0.70, 0.78, 0.70},
                {0.90, 0.76, 0.84, 0.78}};
  s.informativeness = {1.0, 0.5, 0.4, 0.5};
  s.label_prior = {0.35, 0.2, 0.15, 0.3};
  return s;
}

// Random market for property tests: K services with distinct costs,
// accuracies in [0.35, 0.95] and informativeness in [0, 1].
inline SyntheticSpec random_spec(std::uint64_t seed, std::size_t K, std::size_t L, std::size_t N) {
  Rng rng(mix_seed(seed, 0x5eed));
  SyntheticSpec s;
  s.services = K;
  s.labels = L;
  s.samples = N;
  for (std::size_t k = 0; k < K; ++k) {
    s.costs_per_10k.push_back(static_cast<double>(1 + uniform_index(rng, 40)) * 0.5 + static_cast<double>(k) * 0.01);
    std::vector<double> acc;
    for (std::size_t l = 0; l < L; ++l) acc.push_back(0.35 + 0.6 * uniform01(rng));
    s.accuracy.push_back(std::move(acc));
    s.informativeness.push_back(uniform01(rng));
  }
  return s;
}

}  // namespace apiroute

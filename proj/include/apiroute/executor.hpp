#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "apiroute/catalog.hpp"
#include "apiroute/dataset.hpp"
#include "apiroute/error.hpp"
#include "apiroute/master.hpp"
#include "apiroute/random.hpp"
#include "apiroute/strategy.hpp"
#include "apiroute/tables.hpp"

namespace apiroute {

struct ExecutionTrace {
  std::size_t base = 0;
  bool escalated = false;
  std::optional<std::size_t> addon;  // set iff escalated; equal to base means no second call
  std::size_t prediction = 0;
  double cost = 0.0;
  bool correct = false;
};

// Escalation test for base k having said label l with score q. Level 0 is the
// never-escalate sentinel; otherwise escalate when q <= threshold.
inline bool should_escalate(const Strategy& s, std::size_t k, std::size_t l, double q) {
  return s.threshold_levels(k, l) > 0.0 && q <= s.thresholds(k, l);
}

inline ExecutionTrace execute_query(const Strategy& s, const AnnotatedSample& x, std::span<const double> costs,
                                    Rng& rng) {
  ExecutionTrace t;
  t.base = sample_categorical(rng, s.base_mixture);
  const std::size_t label = x.predicted[t.base];
  t.prediction = label;
  t.cost = costs[t.base];
  if (should_escalate(s, t.base, label, x.scores[t.base])) {
    t.escalated = true;
    const std::size_t j = sample_categorical(rng, s.addon.slice(t.base, label));
    t.addon = j;
    if (j != t.base) {
      t.prediction = x.predicted[j];
      t.cost += costs[j];
    }
  }
  t.correct = t.prediction == x.true_label;
  return t;
}

// ---------------------------------------------------------------------------

struct EvaluationReport {
  std::string mode;
  std::size_t samples = 0;
  double accuracy = 0.0;
  double mean_cost = 0.0;  // per query
  double total_spend = 0.0;
  std::vector<double> per_label_accuracy;  // by true label; NaN when the label never occurs
  std::vector<std::size_t> per_label_count;
  Table2<double> escalation_rate;  // (base, predicted label); NaN when never reached
  std::vector<double> base_share;  // fraction of queries whose first call went to each service
  std::size_t fallback_count = 0;  // strict mode only
  std::int64_t spend_units = 0;    // strict mode only: exact spend in 1e-10 USD
  std::optional<double> budget;    // strict mode only, per query
  std::optional<std::uint64_t> seed;

  [[nodiscard]] nlohmann::json to_json(const ServiceCatalog& catalog) const {
    using nlohmann::json;
    const auto num = [](double v) -> json { return std::isfinite(v) ? json(v) : json(nullptr); };
    json j;
    j["mode"] = mode;
    j["samples"] = samples;
    j["accuracy"] = accuracy;
    j["mean_cost_per_10k"] = per_10k_from_per_query(mean_cost);
    j["total_spend"] = total_spend;
    if (budget) j["budget_per_10k"] = per_10k_from_per_query(*budget);
    if (seed) j["seed"] = *seed;
    j["fallback_count"] = fallback_count;
    json labels = json::object();
    for (std::size_t l = 0; l < per_label_accuracy.size(); ++l) {
      labels[catalog.label(l)] = {{"accuracy", num(per_label_accuracy[l])}, {"count", per_label_count[l]}};
    }
    j["per_label"] = labels;
    json bases = json::object();
    for (std::size_t k = 0; k < base_share.size(); ++k) {
      json esc = json::object();
      for (std::size_t l = 0; l < escalation_rate.cols(); ++l) esc[catalog.label(l)] = num(escalation_rate(k, l));
      bases[catalog.service(k).name] = {{"base_share", base_share[k]}, {"escalation_rate", esc}};
    }
    j["bases"] = bases;
    return j;
  }

  // One row per (base, label) with the summary columns repeated.
  [[nodiscard]] std::string to_csv(const ServiceCatalog& catalog) const {
    std::string out = "mode,samples,accuracy,mean_cost_per_10k,base,label,base_share,escalation_rate\n";
    for (std::size_t k = 0; k < base_share.size(); ++k) {
      for (std::size_t l = 0; l < escalation_rate.cols(); ++l) {
        out += fmt::format("{},{},{:.17g},{:.17g},{},{},{:.17g},{:.17g}\n", mode, samples, accuracy,
                           per_10k_from_per_query(mean_cost), detail::csv_escape(catalog.service(k).name),
                           detail::csv_escape(catalog.label(l)), base_share[k], escalation_rate(k, l));
      }
    }
    return out;
  }
};

namespace detail {

// Accumulates weighted outcomes; weights are probabilities in expectation
// mode and 1 for realized traces.
class ReportBuilder {
 public:
  ReportBuilder(std::size_t K, std::size_t L)
      : label_hits_(L, 0.0), label_count_(L, 0), reached_(K, L, 0.0), escalated_(K, L, 0.0), base_(K, 0.0) {}

  void begin_sample(const AnnotatedSample& x) { ++label_count_[x.true_label]; ++n_; }

  void add(const AnnotatedSample& x, std::size_t base, bool escalated, double weight, bool correct, double cost) {
    const std::size_t l = x.predicted[base];
    reached_(base, l) += weight;
    if (escalated) escalated_(base, l) += weight;
    base_[base] += weight;
    if (correct) {
      hits_ += weight;
      label_hits_[x.true_label] += weight;
    }
    spend_ += weight * cost;
  }

  [[nodiscard]] EvaluationReport finish(std::string mode, std::optional<double> total_spend = std::nullopt) const {
    EvaluationReport r;
    r.mode = std::move(mode);
    r.samples = n_;
    const double n = static_cast<double>(n_);
    r.accuracy = hits_ / n;
    r.total_spend = total_spend.value_or(spend_);
    r.mean_cost = r.total_spend / n;
    const std::size_t L = label_hits_.size();
    const std::size_t K = base_.size();
    r.per_label_count = label_count_;
    r.per_label_accuracy.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
      r.per_label_accuracy[l] = label_count_[l] ? label_hits_[l] / static_cast<double>(label_count_[l])
                                                : std::numeric_limits<double>::quiet_NaN();
    }
    r.escalation_rate = Table2<double>(K, L, std::numeric_limits<double>::quiet_NaN());
    r.base_share.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      r.base_share[k] = base_[k] / n;
      for (std::size_t l = 0; l < L; ++l) {
        if (reached_(k, l) > 0.0) r.escalation_rate(k, l) = escalated_(k, l) / reached_(k, l);
      }
    }
    return r;
  }

 private:
  std::size_t n_ = 0;
  double hits_ = 0.0;
  double spend_ = 0.0;
  std::vector<double> label_hits_;
  std::vector<std::size_t> label_count_;
  Table2<double> reached_;
  Table2<double> escalated_;
  std::vector<double> base_;
};

inline void check_replay_inputs(const Strategy& s, const AnnotatedDataset& data, const ServiceCatalog& catalog) {
  check_strategy_dimensions(s, catalog);
  data.require_catalog(catalog);
  if (!s.meta.catalog_fingerprint.empty() && s.meta.catalog_fingerprint != catalog.fingerprint()) {
    throw FingerprintError(fmt::format("strategy was trained for catalog {} but catalog is {}",
                                       s.meta.catalog_fingerprint, catalog.fingerprint()));
  }
}

// Enumerates the (base, add-on) branches of one sample with their probabilities.
template <class Fn>
void for_each_branch(const Strategy& s, const AnnotatedSample& x, std::span<const double> costs, Fn&& fn) {
  const std::size_t K = s.num_services();
  for (std::size_t i = 0; i < K; ++i) {
    const double p = s.base_mixture[i];
    if (p == 0.0) continue;
    const std::size_t l = x.predicted[i];
    if (!should_escalate(s, i, l, x.scores[i])) {
      fn(i, false, p, x.correct(i), costs[i]);
      continue;
    }
    const auto slice = s.addon.slice(i, l);
    for (std::size_t j = 0; j < K; ++j) {
      if (slice[j] == 0.0) continue;
      if (j == i) {
        fn(i, true, p * slice[j], x.correct(i), costs[i]);
      } else {
        fn(i, true, p * slice[j], x.correct(j), costs[i] + costs[j]);
      }
    }
  }
}

}  // namespace detail

struct ReplayExpectation {
  double accuracy = 0.0;
  double mean_cost = 0.0;  // per query
};

// Exact expected accuracy and cost over the empirical distribution of `data`.
inline ReplayExpectation exact_replay_expectation(const Strategy& s, const AnnotatedDataset& data,
                                                  std::span<const double> costs) {
  double hits = 0.0;
  double spend = 0.0;
  for (const auto& x : data.samples()) {
    detail::for_each_branch(s, x, costs, [&](std::size_t, bool, double w, bool correct, double cost) {
      if (correct) hits += w;
      spend += w * cost;
    });
  }
  const double n = static_cast<double>(data.size());
  return {hits / n, spend / n};
}

enum class ReplayMode { kSampled, kExpectation };

// Sampled mode draws each sample's randomness from its own stream
// (seed, sample index), so results do not depend on sharding or order.
inline EvaluationReport replay_evaluate(const Strategy& s, const AnnotatedDataset& data, const ServiceCatalog& catalog,
                                        std::uint64_t seed, ReplayMode mode) {
  detail::check_replay_inputs(s, data, catalog);
  const auto& costs = catalog.costs();
  detail::ReportBuilder rb(catalog.num_services(), catalog.num_labels());
  if (mode == ReplayMode::kExpectation) {
    for (const auto& x : data.samples()) {
      rb.begin_sample(x);
      detail::for_each_branch(s, x, costs, [&](std::size_t i, bool esc, double w, bool correct, double cost) {
        rb.add(x, i, esc, w, correct, cost);
      });
    }
    auto r = rb.finish("expectation");
    // Headline numbers come from the same summation as exact_replay_expectation.
    const auto e = exact_replay_expectation(s, data, costs);
    r.accuracy = e.accuracy;
    r.mean_cost = e.mean_cost;
    r.total_spend = e.mean_cost * static_cast<double>(data.size());
    return r;
  }
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto& x = data[n];
    Rng rng(mix_seed(seed, n));
    const auto t = execute_query(s, x, costs, rng);
    rb.begin_sample(x);
    rb.add(x, t.base, t.escalated, 1.0, t.correct, t.cost);
  }
  auto r = rb.finish("sample");
  r.seed = seed;
  return r;
}

// Integer spend units: 1e-10 USD, i.e. micro-dollars per 10k queries.
inline std::int64_t budget_units(double per_query_budget) {
  return static_cast<std::int64_t>(std::floor(per_query_budget * 1e10 + 1e-4));
}

// Largest cost one query can incur under s.
inline std::int64_t worst_case_units(const Strategy& s, const ServiceCatalog& catalog) {
  std::int64_t worst = 0;
  for (std::size_t i = 0; i < s.num_services(); ++i) {
    if (s.base_mixture[i] == 0.0) continue;
    std::int64_t addon = 0;
    for (std::size_t l = 0; l < s.num_labels(); ++l) {
      if (s.threshold_levels(i, l) == 0.0) continue;
      const auto slice = s.addon.slice(i, l);
      for (std::size_t j = 0; j < slice.size(); ++j) {
        if (j != i && slice[j] > 0.0) addon = std::max(addon, catalog.service(j).price.micros_per_10k());
      }
    }
    worst = std::max(worst, catalog.service(i).price.micros_per_10k() + addon);
  }
  return worst;
}

// Sampled replay that never lets cumulative spend exceed b per processed
// query: before each query, if the strategy's worst case could overrun the
// allowance b * (queries so far + 1), the cheapest service answers instead.
// Spend is tracked in exact integer units.
inline EvaluationReport replay_evaluate_strict(const Strategy& s, const AnnotatedDataset& data,
                                               const ServiceCatalog& catalog, double budget, std::uint64_t seed) {
  detail::check_replay_inputs(s, data, catalog);
  if (budget < catalog.min_cost() * (1.0 - 1e-12)) {
    throw InfeasibleBudgetError("strict budget is below the cheapest service's cost");
  }
  const auto& costs = catalog.costs();
  const std::int64_t b = budget_units(budget);
  const std::int64_t worst = worst_case_units(s, catalog);
  const std::size_t cheap = catalog.cheapest();
  const std::int64_t cheap_units = catalog.service(cheap).price.micros_per_10k();
  std::vector<std::int64_t> units(catalog.num_services());
  for (std::size_t k = 0; k < units.size(); ++k) units[k] = catalog.service(k).price.micros_per_10k();

  detail::ReportBuilder rb(catalog.num_services(), catalog.num_labels());
  std::int64_t spent = 0;
  std::size_t fallbacks = 0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto& x = data[n];
    rb.begin_sample(x);
    const std::int64_t allowance = b * static_cast<std::int64_t>(n + 1);
    if (spent + worst > allowance) {
      ++fallbacks;
      spent += cheap_units;
      rb.add(x, cheap, false, 1.0, x.correct(cheap), costs[cheap]);
      continue;
    }
    Rng rng(mix_seed(seed, n));
    const auto t = execute_query(s, x, costs, rng);
    spent += units[t.base] + ((t.addon && *t.addon != t.base) ? units[*t.addon] : 0);
    rb.add(x, t.base, t.escalated, 1.0, t.correct, t.cost);
  }
  auto r = rb.finish("strict", static_cast<double>(spent) * 1e-10);
  r.fallback_count = fallbacks;
  r.spend_units = spent;
  r.budget = budget;
  r.seed = seed;
  return r;
}

// ---------------------------------------------------------------------------
// Baselines

inline EvaluationReport baseline_single(const AnnotatedDataset& data, std::size_t k, const ServiceCatalog& catalog) {
  data.require_catalog(catalog);
  detail::ReportBuilder rb(catalog.num_services(), catalog.num_labels());
  for (const auto& x : data.samples()) {
    rb.begin_sample(x);
    rb.add(x, k, false, 1.0, x.correct(k), catalog.cost(k));
  }
  return rb.finish(fmt::format("single:{}", catalog.service(k).name));
}

// Every service votes q for its label and (1 - q)/(L - 1) for each other
// label; the largest total wins, ties broken uniformly with a per-sample
// seeded stream. Costs the sum of all services.
inline std::size_t majority_vote(const AnnotatedSample& x, std::size_t L, Rng& rng) {
  std::vector<double> votes(L, 0.0);
  for (std::size_t k = 0; k < x.predicted.size(); ++k) {
    const double q = x.scores[k];
    const double rest = (1.0 - q) / static_cast<double>(L - 1);
    for (std::size_t l = 0; l < L; ++l) votes[l] += (l == x.predicted[k]) ? q : rest;
  }
  const double top = *std::max_element(votes.begin(), votes.end());
  std::vector<std::size_t> tied;
  for (std::size_t l = 0; l < L; ++l) {
    if (votes[l] >= top - kTieTolerance) tied.push_back(l);
  }
  return tied.size() == 1 ? tied[0] : tied[uniform_index(rng, tied.size())];
}

inline EvaluationReport baseline_majority_vote(const AnnotatedDataset& data, const ServiceCatalog& catalog,
                                               std::uint64_t seed = 0) {
  data.require_catalog(catalog);
  double all = 0.0;
  for (double c : catalog.costs()) all += c;
  const std::size_t L = catalog.num_labels();
  detail::ReportBuilder rb(catalog.num_services(), L);
  std::size_t hits = 0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto& x = data[n];
    Rng rng(mix_seed(seed, n));
    const bool correct = majority_vote(x, L, rng) == x.true_label;
    hits += correct;
    rb.begin_sample(x);
    // Attribute the query to no particular base: spread weight evenly.
    const double w = 1.0 / static_cast<double>(catalog.num_services());
    for (std::size_t k = 0; k < catalog.num_services(); ++k) rb.add(x, k, false, w, correct, all);
  }
  auto r = rb.finish("majority_vote");
  r.accuracy = static_cast<double>(hits) / static_cast<double>(data.size());
  r.seed = seed;
  return r;
}

// ---------------------------------------------------------------------------
// Budget sweep

struct TradeoffPoint {
  double budget = 0.0;  // per query
  std::string series;   // "strategy" or "single:<name>"
  bool ok = true;
  std::string error;
  double predicted_accuracy = std::numeric_limits<double>::quiet_NaN();
  double predicted_cost = std::numeric_limits<double>::quiet_NaN();
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
  double test_cost = std::numeric_limits<double>::quiet_NaN();
};

// Trains one strategy per budget and scores it on the test split; a budget
// that fails to train is reported and the sweep continues. Single-service
// reference points follow the strategy rows.
inline std::vector<TradeoffPoint> sweep(const AnnotatedDataset& train_set, const AnnotatedDataset& test_set,
                                        const ServiceCatalog& catalog, std::span<const double> budgets,
                                        SolverConfig config) {
  std::vector<TradeoffPoint> out;
  for (double b : budgets) {
    TradeoffPoint pt;
    pt.budget = b;
    pt.series = "strategy";
    try {
      config.budget = b;
      const Strategy s = train(train_set, catalog, config);
      const auto e = exact_replay_expectation(s, test_set, catalog.costs());
      pt.predicted_accuracy = s.meta.predicted_accuracy;
      pt.predicted_cost = s.meta.predicted_cost;
      pt.test_accuracy = e.accuracy;
      pt.test_cost = e.mean_cost;
    } catch (const Error& e) {
      pt.ok = false;
      pt.error = e.what();
    }
    out.push_back(std::move(pt));
  }
  for (std::size_t k = 0; k < catalog.num_services(); ++k) {
    TradeoffPoint pt;
    pt.budget = catalog.cost(k);
    pt.series = "single:" + catalog.service(k).name;
    pt.predicted_accuracy = train_set.service_accuracy(k);
    pt.predicted_cost = catalog.cost(k);
    pt.test_accuracy = test_set.service_accuracy(k);
    pt.test_cost = catalog.cost(k);
    out.push_back(std::move(pt));
  }
  return out;
}

// Budgets and costs in the catalog's per-10k unit.
inline std::string sweep_to_csv(std::span<const TradeoffPoint> points) {
  std::string out = "budget,pred_acc,pred_cost,test_acc,test_cost,series\n";
  const auto num = [](double v) { return std::isfinite(v) ? fmt::format("{:.17g}", v) : std::string("nan"); };
  // Money columns are rounded to 12 significant digits to hide the
  // per-query <-> per-10k conversion error.
  const auto money = [](double v) {
    return std::isfinite(v) ? fmt::format("{:.12g}", per_10k_from_per_query(v)) : std::string("nan");
  };
  for (const auto& p : points) {
    out += fmt::format("{},{},{},{},{},{}\n", money(p.budget), num(p.predicted_accuracy), money(p.predicted_cost),
                       num(p.test_accuracy), money(p.test_cost), detail::csv_escape(p.series));
  }
  return out;
}

}  // namespace apiroute

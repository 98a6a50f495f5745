#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "apiroute/dataset.hpp"
#include "apiroute/error.hpp"
#include "apiroute/tables.hpp"

namespace apiroute {

struct EstimateOptions {
  int grid = 10;
  // Merge every predicted label into one group, so each service gets a
  // single threshold regardless of what it predicted.
  bool collapse_labels = false;
};

// Empirical quantities behind the optimizer, for a training set:
//
//   label_share(k, g)      fraction of samples on which service k predicts group g
//   quantile(k, g, m)      nearest-rank (m/M)-quantile of k's scores on those samples
//   psi(k1, k2, g, a)      accuracy of k2 on samples where k1 predicts g with a
//                          score in k1's bottom-a fraction, linear between a = m/M
//
// A group is a predicted label, or the single merged group when labels are
// collapsed. Knots with an empty conditional (always m = 0, whose quantile is
// the never-escalate sentinel) are stored as 0 and flagged missing; the
// interpolant holds the first populated knot's value flat to their left.
class EstimatedModel {
 public:
  EstimatedModel() = default;

  [[nodiscard]] std::size_t num_services() const noexcept { return K_; }
  [[nodiscard]] std::size_t num_groups() const noexcept { return G_; }
  [[nodiscard]] int grid() const noexcept { return M_; }
  [[nodiscard]] std::size_t num_samples() const noexcept { return N_; }
  [[nodiscard]] bool collapsed() const noexcept { return collapsed_; }
  [[nodiscard]] std::size_t group_of_label(std::size_t label) const { return group_of_label_.at(label); }
  [[nodiscard]] std::size_t num_labels() const noexcept { return group_of_label_.size(); }

  [[nodiscard]] double knot_level(int m) const { return static_cast<double>(m) / static_cast<double>(M_); }

  [[nodiscard]] double label_share(std::size_t k, std::size_t g) const { return a_hat_(k, g); }
  [[nodiscard]] std::size_t count(std::size_t k, std::size_t g) const { return counts_(k, g); }
  [[nodiscard]] double quantile(std::size_t k, std::size_t g, int m) const {
    return quantile_(k, g, static_cast<std::size_t>(m));
  }
  [[nodiscard]] std::size_t knot_count(std::size_t k, std::size_t g, int m) const {
    return knot_count_(k, g, static_cast<std::size_t>(m));
  }
  [[nodiscard]] bool missing(std::size_t k, std::size_t g, int m) const { return knot_count(k, g, m) == 0; }
  [[nodiscard]] double psi_grid(std::size_t k1, std::size_t k2, std::size_t g, int m) const {
    return psi_(k1 * K_ + k2, g, static_cast<std::size_t>(m));
  }

  // Scores of service k on the samples where it predicts group g, ascending.
  [[nodiscard]] std::span<const double> sorted_scores(std::size_t k, std::size_t g) const {
    return sorted_scores_[k * G_ + g];
  }

  // Knot value seen by the interpolant: missing knots left of the first
  // populated one take that knot's value; an empty group is identically 0.
  [[nodiscard]] double psi_knot(std::size_t k1, std::size_t k2, std::size_t g, int m) const {
    const int first = first_populated_(k1, g);
    if (first > M_) return 0.0;
    return psi_grid(k1, k2, g, std::max(m, first));
  }

  [[nodiscard]] double psi(std::size_t k1, std::size_t k2, std::size_t g, double alpha) const {
    const double t = std::clamp(alpha, 0.0, 1.0) * M_;
    const double r = std::round(t);
    if (std::abs(t - r) <= 1e-12 * std::max(1.0, t)) return psi_knot(k1, k2, g, static_cast<int>(r));
    const int m = std::min(static_cast<int>(std::floor(t)), M_ - 1);
    const double lo = psi_knot(k1, k2, g, m);
    const double hi = psi_knot(k1, k2, g, m + 1);
    return lo + (t - m) * (hi - lo);
  }

  // Unconditional accuracy of k on the samples where it predicts g.
  [[nodiscard]] double base_accuracy(std::size_t k, std::size_t g) const { return psi(k, k, g, 1.0); }

  // Gain of switching to each add-on j when the bottom-rho fraction escalates:
  // psi(k, j, g, rho) - psi(k, k, g, rho). Component k is exactly 0.
  [[nodiscard]] std::vector<double> r_tilde(std::size_t k, std::size_t g, double rho) const {
    std::vector<double> out(K_);
    const double own = psi(k, k, g, rho);
    for (std::size_t j = 0; j < K_; ++j) out[j] = (j == k) ? 0.0 : psi(k, j, g, rho) - own;
    return out;
  }

  // (k, g) pairs with at least one missing knot beyond m = 0.
  [[nodiscard]] std::vector<std::pair<std::size_t, std::size_t>> sparse_cells() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t k = 0; k < K_; ++k) {
      for (std::size_t g = 0; g < G_; ++g) {
        if (first_populated_(k, g) > 1) out.emplace_back(k, g);
      }
    }
    return out;
  }

  [[nodiscard]] nlohmann::json to_json() const {
    using nlohmann::json;
    json j;
    j["grid"] = M_;
    j["samples"] = N_;
    j["collapsed_labels"] = collapsed_;
    j["label_share"] = json::array();
    j["cells"] = json::array();
    for (std::size_t k = 0; k < K_; ++k) {
      std::vector<double> row(G_);
      for (std::size_t g = 0; g < G_; ++g) row[g] = a_hat_(k, g);
      j["label_share"].push_back(row);
      for (std::size_t g = 0; g < G_; ++g) {
        json cell;
        cell["service"] = k;
        cell["group"] = g;
        cell["count"] = counts_(k, g);
        std::vector<double> q(static_cast<std::size_t>(M_) + 1);
        std::vector<std::size_t> n(q.size());
        std::vector<bool> miss(q.size());
        for (int m = 0; m <= M_; ++m) {
          q[static_cast<std::size_t>(m)] = quantile(k, g, m);
          n[static_cast<std::size_t>(m)] = knot_count(k, g, m);
          miss[static_cast<std::size_t>(m)] = missing(k, g, m);
        }
        cell["quantiles"] = q;
        cell["knot_counts"] = n;
        cell["missing"] = miss;
        json psi_rows = json::array();
        for (std::size_t k2 = 0; k2 < K_; ++k2) {
          std::vector<double> v(q.size());
          for (int m = 0; m <= M_; ++m) v[static_cast<std::size_t>(m)] = psi_grid(k, k2, g, m);
          psi_rows.push_back(v);
        }
        cell["psi"] = psi_rows;
        j["cells"].push_back(std::move(cell));
      }
    }
    return j;
  }

  friend EstimatedModel estimate_model(const AnnotatedDataset& data, const EstimateOptions& options);

 private:
  std::size_t K_ = 0;
  std::size_t G_ = 0;
  int M_ = 0;
  std::size_t N_ = 0;
  bool collapsed_ = false;
  std::vector<std::size_t> group_of_label_;
  Table2<double> a_hat_;
  Table2<std::size_t> counts_;
  Table2<int> first_populated_;
  Table3<double> quantile_;
  Table3<std::size_t> knot_count_;
  Table3<double> psi_;
  std::vector<std::vector<double>> sorted_scores_;
};

// Counting estimator over the training rows. Pure; independent of row order.
inline EstimatedModel estimate_model(const AnnotatedDataset& data, const EstimateOptions& options) {
  if (options.grid < 1) throw ValidationError("grid resolution must be at least 1");
  EstimatedModel model;
  const std::size_t K = data.num_services();
  const std::size_t L = data.num_labels();
  const std::size_t G = options.collapse_labels ? 1 : L;
  const int M = options.grid;
  const std::size_t knots = static_cast<std::size_t>(M) + 1;
  const std::size_t N = data.size();

  model.K_ = K;
  model.G_ = G;
  model.M_ = M;
  model.N_ = N;
  model.collapsed_ = options.collapse_labels;
  model.group_of_label_.resize(L);
  for (std::size_t l = 0; l < L; ++l) model.group_of_label_[l] = options.collapse_labels ? 0 : l;
  model.a_hat_ = Table2<double>(K, G, 0.0);
  model.counts_ = Table2<std::size_t>(K, G, 0);
  model.first_populated_ = Table2<int>(K, G, M + 1);
  model.quantile_ = Table3<double>(K, G, knots, kNeverEscalateScore);
  model.knot_count_ = Table3<std::size_t>(K, G, knots, 0);
  model.psi_ = Table3<double>(K * K, G, knots, 0.0);
  model.sorted_scores_.assign(K * G, {});

  const auto& samples = data.samples();
  for (std::size_t k1 = 0; k1 < K; ++k1) {
    std::vector<std::vector<std::size_t>> members(G);
    for (std::size_t i = 0; i < N; ++i) members[model.group_of_label_[samples[i].predicted[k1]]].push_back(i);

    for (std::size_t g = 0; g < G; ++g) {
      auto& idx = members[g];
      const std::size_t n = idx.size();
      model.counts_(k1, g) = n;
      model.a_hat_(k1, g) = static_cast<double>(n) / static_cast<double>(N);
      if (n == 0) continue;

      // Sort by score; ties by id so prefix counts do not depend on row order.
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double sa = samples[a].scores[k1];
        const double sb = samples[b].scores[k1];
        if (sa != sb) return sa < sb;
        return samples[a].sample_id < samples[b].sample_id;
      });
      auto& sorted = model.sorted_scores_[k1 * G + g];
      sorted.resize(n);
      for (std::size_t r = 0; r < n; ++r) sorted[r] = samples[idx[r]].scores[k1];

      // prefix[k2][r] = #correct answers of k2 among the r lowest-scored members.
      std::vector<std::vector<std::size_t>> prefix(K, std::vector<std::size_t>(n + 1, 0));
      for (std::size_t r = 0; r < n; ++r) {
        const auto& s = samples[idx[r]];
        for (std::size_t k2 = 0; k2 < K; ++k2) prefix[k2][r + 1] = prefix[k2][r] + (s.correct(k2) ? 1 : 0);
      }

      for (int m = 0; m <= M; ++m) {
        const auto mu = static_cast<std::size_t>(m);
        const double q = quantile_of_sorted(sorted, model.knot_level(m));
        model.quantile_(k1, g, mu) = q;
        const auto below = static_cast<std::size_t>(std::upper_bound(sorted.begin(), sorted.end(), q) - sorted.begin());
        model.knot_count_(k1, g, mu) = below;
        if (below == 0) continue;
        if (model.first_populated_(k1, g) > M) model.first_populated_(k1, g) = m;
        for (std::size_t k2 = 0; k2 < K; ++k2) {
          model.psi_(k1 * K + k2, g, mu) =
              static_cast<double>(prefix[k2][below]) / static_cast<double>(below);
        }
      }
    }
  }
  return model;
}

inline EstimatedModel estimate_model(const AnnotatedDataset& data, int grid) {
  return estimate_model(data, EstimateOptions{.grid = grid});
}

}  // namespace apiroute

#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "apiroute/catalog.hpp"
#include "apiroute/error.hpp"
#include "apiroute/tables.hpp"

namespace apiroute {

inline constexpr int kStrategyFormatVersion = 1;
inline constexpr double kSimplexTolerance = 1e-12;

struct StrategyMeta {
  double budget = 0.0;  // per query
  int grid = 0;
  double predicted_accuracy = 0.0;
  double predicted_cost = 0.0;
  std::string catalog_fingerprint;
  bool uniform_threshold = false;

  friend bool operator==(const StrategyMeta&, const StrategyMeta&) = default;
};

// Calling strategy: which base to call, when to escalate, and to whom.
//
//   base_mixture[k]        probability that service k is the base call
//   thresholds(k, l)       escalate when base k says l with score <= this
//   threshold_levels(k, l) quantile level the threshold came from; 0 means never escalate
//   addon(k, l, j)         probability of escalating to j after base k said l
//
// Rows of unused bases carry the canonical defaults (threshold 0, level 0,
// add-on slice e_k) so that equality and serialization are deterministic.
struct Strategy {
  std::vector<double> base_mixture;
  Table2<double> thresholds;
  Table2<double> threshold_levels;
  Table3<double> addon;
  StrategyMeta meta;

  static Strategy canonical(std::size_t num_services, std::size_t num_labels) {
    Strategy s;
    s.base_mixture.assign(num_services, 0.0);
    s.thresholds = Table2<double>(num_services, num_labels, 0.0);
    s.threshold_levels = Table2<double>(num_services, num_labels, 0.0);
    s.addon = Table3<double>(num_services, num_labels, num_services, 0.0);
    for (std::size_t k = 0; k < num_services; ++k) {
      for (std::size_t l = 0; l < num_labels; ++l) s.addon(k, l, k) = 1.0;
    }
    return s;
  }

  [[nodiscard]] std::size_t num_services() const noexcept { return base_mixture.size(); }
  [[nodiscard]] std::size_t num_labels() const noexcept { return thresholds.cols(); }

  friend bool operator==(const Strategy&, const Strategy&) = default;
};

struct Violation {
  std::string invariant;
  std::string detail;
};

// Structural families a sparse add-on slice may take for base k.
enum class AddonFamily {
  kSingle,             // all mass on one index
  kWithBaseRemainder,  // one add-on, remainder on the base itself
  kPair,               // two add-ons sharing the mass, base excluded
};

inline std::optional<AddonFamily> classify_addon_slice(std::span<const double> slice, std::size_t base) {
  std::vector<std::size_t> nz;
  for (std::size_t j = 0; j < slice.size(); ++j) {
    if (slice[j] != 0.0) nz.push_back(j);
  }
  if (nz.size() == 1) return AddonFamily::kSingle;
  if (nz.size() == 2) {
    return (nz[0] == base || nz[1] == base) ? AddonFamily::kWithBaseRemainder : AddonFamily::kPair;
  }
  return std::nullopt;
}

namespace detail {

inline std::size_t count_nonzero(std::span<const double> v) {
  std::size_t n = 0;
  for (double x : v) n += (x != 0.0);
  return n;
}

inline double sum(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace detail

inline void check_strategy_dimensions(const Strategy& s, const ServiceCatalog& catalog) {
  const std::size_t K = catalog.num_services();
  const std::size_t L = catalog.num_labels();
  const bool ok = s.base_mixture.size() == K && s.thresholds.rows() == K && s.thresholds.cols() == L &&
                  s.threshold_levels.rows() == K && s.threshold_levels.cols() == L &&
                  s.addon.dim0() == K && s.addon.dim1() == L && s.addon.dim2() == K;
  if (!ok) {
    throw DimensionError(fmt::format("strategy dimensions do not match catalog ({} services, {} labels)", K, L));
  }
}

// Empty result iff every strategy invariant holds. Shape mismatches throw
// DimensionError instead of being reported as violations.
inline std::vector<Violation> validate_strategy(const Strategy& s, const ServiceCatalog& catalog) {
  check_strategy_dimensions(s, catalog);
  const std::size_t K = catalog.num_services();
  const std::size_t L = catalog.num_labels();
  std::vector<Violation> out;

  for (std::size_t k = 0; k < K; ++k) {
    const double p = s.base_mixture[k];
    if (!(p >= 0.0) || !std::isfinite(p)) {
      out.push_back({"base-mixture-nonnegative", fmt::format("base mixture entry {} is {}", k, p)});
    }
  }
  const double psum = detail::sum(s.base_mixture);
  if (std::abs(psum - 1.0) > kSimplexTolerance) {
    out.push_back({"base-mixture-sum", fmt::format("base mixture sums to {:.17g}", psum)});
  }
  const std::size_t pnz = detail::count_nonzero(s.base_mixture);
  if (pnz > 2) {
    out.push_back({"base-mixture-sparsity", fmt::format("base mixture has {} nonzeros", pnz)});
  }

  for (std::size_t k = 0; k < K; ++k) {
    const bool used = s.base_mixture[k] != 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      const double q = s.thresholds(k, l);
      const double rho = s.threshold_levels(k, l);
      if (!(q >= 0.0 && q <= 1.0)) {
        out.push_back({"threshold-range", fmt::format("threshold ({},{}) = {} outside [0,1]", k, l, q)});
      }
      if (!(rho >= 0.0 && rho <= 1.0)) {
        out.push_back({"level-range", fmt::format("threshold level ({},{}) = {} outside [0,1]", k, l, rho)});
      }
      if (rho == 0.0 && q != 0.0) {
        out.push_back({"never-escalate-sentinel",
                       fmt::format("level ({},{}) is 0 but threshold is {}", k, l, q)});
      }
      const auto slice = s.addon.slice(k, l);
      bool nonneg = true;
      for (double x : slice) nonneg = nonneg && x >= 0.0 && std::isfinite(x);
      if (!nonneg) {
        out.push_back({"addon-nonnegative", fmt::format("add-on slice ({},{}) has a negative entry", k, l)});
      }
      const double ssum = detail::sum(slice);
      if (std::abs(ssum - 1.0) > kSimplexTolerance) {
        out.push_back({"addon-sum", fmt::format("add-on slice ({},{}) sums to {:.17g}", k, l, ssum)});
      }
      if (!classify_addon_slice(slice, k)) {
        out.push_back({"addon-sparsity", fmt::format("add-on slice ({},{}) has {} nonzeros", k, l,
                                                     detail::count_nonzero(slice))});
      }
      if (!used) {
        bool canonical = q == 0.0 && rho == 0.0;
        for (std::size_t j = 0; j < K; ++j) canonical = canonical && slice[j] == (j == k ? 1.0 : 0.0);
        if (!canonical) {
          out.push_back({"unused-base-default",
                         fmt::format("service {} has zero base weight but non-default entries at label {}", k, l)});
        }
      }
    }
  }
  return out;
}

inline nlohmann::json strategy_to_json(const Strategy& s) {
  using nlohmann::json;
  const std::size_t K = s.num_services();
  const std::size_t L = s.num_labels();
  json j;
  j["version"] = kStrategyFormatVersion;
  j["catalog_fingerprint"] = s.meta.catalog_fingerprint;
  j["base_mixture"] = json::array();
  for (std::size_t k = 0; k < K; ++k) {
    if (s.base_mixture[k] != 0.0) j["base_mixture"].push_back(json::array({k, s.base_mixture[k]}));
  }
  j["thresholds"] = json::array();
  j["threshold_levels"] = json::array();
  for (std::size_t k = 0; k < K; ++k) {
    auto q = s.thresholds.row(k);
    auto r = s.threshold_levels.row(k);
    j["thresholds"].push_back(std::vector<double>(q.begin(), q.end()));
    j["threshold_levels"].push_back(std::vector<double>(r.begin(), r.end()));
  }
  j["addon"] = json::array();
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t m = 0; m < K; ++m) {
        if (s.addon(k, l, m) != 0.0) j["addon"].push_back(json::array({k, l, m, s.addon(k, l, m)}));
      }
    }
  }
  j["meta"] = {{"budget", s.meta.budget},
               {"budget_per_10k", per_10k_from_per_query(s.meta.budget)},
               {"grid", s.meta.grid},
               {"predicted_accuracy", s.meta.predicted_accuracy},
               {"predicted_cost", s.meta.predicted_cost},
               {"uniform_threshold", s.meta.uniform_threshold}};
  return j;
}

inline std::string serialize_strategy(const Strategy& s) { return strategy_to_json(s).dump(2) + "\n"; }

// Parses a strategy document for `catalog`. Malformed documents, unknown
// versions, and documents from another catalog each raise a distinct error.
inline Strategy deserialize_strategy(std::string_view text, const ServiceCatalog& catalog) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(fmt::format("strategy is not valid JSON: {}", e.what()));
  }
  if (!j.is_object() || !j.contains("version") || !j["version"].is_number_integer()) {
    throw FormatError("strategy document has no integer 'version'");
  }
  if (j["version"].get<int>() != kStrategyFormatVersion) {
    throw VersionError(fmt::format("strategy format version {} is not supported (expected {})",
                                   j["version"].get<int>(), kStrategyFormatVersion));
  }
  if (!j.contains("catalog_fingerprint") || !j["catalog_fingerprint"].is_string()) {
    throw FormatError("strategy document has no 'catalog_fingerprint'");
  }
  const auto fp = j["catalog_fingerprint"].get<std::string>();
  if (fp != catalog.fingerprint()) {
    throw FingerprintError(fmt::format("strategy was trained for catalog {} but catalog is {}", fp,
                                       catalog.fingerprint()));
  }

  const std::size_t K = catalog.num_services();
  const std::size_t L = catalog.num_labels();
  Strategy s;
  s.base_mixture.assign(K, 0.0);
  s.thresholds = Table2<double>(K, L, 0.0);
  s.threshold_levels = Table2<double>(K, L, 0.0);
  s.addon = Table3<double>(K, L, K, 0.0);
  try {
    for (const auto& e : j.at("base_mixture")) {
      if (e.size() != 2) throw FormatError("base_mixture entries must be [index, weight]");
      const auto k = e.at(0).get<std::size_t>();
      if (k >= K) throw FormatError(fmt::format("base_mixture index {} out of range", k));
      s.base_mixture[k] = e.at(1).get<double>();
    }
    const auto read_dense = [&](const char* key, Table2<double>& dst) {
      const auto& rows = j.at(key);
      if (!rows.is_array() || rows.size() != K) {
        throw FormatError(fmt::format("'{}' must have {} rows", key, K));
      }
      for (std::size_t k = 0; k < K; ++k) {
        if (!rows[k].is_array() || rows[k].size() != L) {
          throw FormatError(fmt::format("'{}' row {} must have {} entries", key, k, L));
        }
        for (std::size_t l = 0; l < L; ++l) dst(k, l) = rows[k][l].get<double>();
      }
    };
    read_dense("thresholds", s.thresholds);
    read_dense("threshold_levels", s.threshold_levels);

    Table2<int> seen(K, L, 0);
    for (const auto& e : j.at("addon")) {
      if (e.size() != 4) throw FormatError("addon entries must be [base, label, addon, prob]");
      const auto k = e.at(0).get<std::size_t>();
      const auto l = e.at(1).get<std::size_t>();
      const auto m = e.at(2).get<std::size_t>();
      if (k >= K || l >= L || m >= K) throw FormatError("addon index out of range");
      s.addon(k, l, m) = e.at(3).get<double>();
      seen(k, l) = 1;
    }
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t l = 0; l < L; ++l) {
        if (!seen(k, l)) throw FormatError(fmt::format("addon slice ({},{}) is missing", k, l));
      }
    }
    const auto& meta = j.at("meta");
    s.meta.budget = meta.at("budget").get<double>();
    s.meta.grid = meta.at("grid").get<int>();
    s.meta.predicted_accuracy = meta.at("predicted_accuracy").get<double>();
    s.meta.predicted_cost = meta.at("predicted_cost").get<double>();
    s.meta.uniform_threshold = meta.value("uniform_threshold", false);
    s.meta.catalog_fingerprint = fp;
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("malformed strategy document: {}", e.what()));
  }
  return s;
}

inline Strategy load_strategy(const std::filesystem::path& path, const ServiceCatalog& catalog) {
  return deserialize_strategy(read_text_file(path), catalog);
}

}  // namespace apiroute

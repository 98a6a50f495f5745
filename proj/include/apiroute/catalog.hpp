#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "apiroute/error.hpp"

namespace apiroute {

// Price of one service, held as integer micro-dollars per 10,000 queries so
// that catalogs compare and hash exactly. Arithmetic elsewhere uses the
// per-query double from unit_cost().
class Money {
 public:
  static constexpr double kQueriesPerPriceUnit = 10000.0;

  constexpr Money() = default;
  static constexpr Money from_micros_per_10k(std::int64_t micros) { return Money(micros); }

  static Money from_per_10k(double usd_per_10k) {
    if (!std::isfinite(usd_per_10k) || usd_per_10k < 0.0) {
      throw ValidationError(fmt::format("price must be finite and nonnegative, got {}", usd_per_10k));
    }
    return Money(static_cast<std::int64_t>(std::llround(usd_per_10k * 1e6)));
  }

  [[nodiscard]] constexpr std::int64_t micros_per_10k() const noexcept { return micros_; }
  [[nodiscard]] double per_10k() const noexcept { return static_cast<double>(micros_) * 1e-6; }
  [[nodiscard]] double unit_cost() const noexcept {
    return static_cast<double>(micros_) * 1e-6 / kQueriesPerPriceUnit;
  }

  friend constexpr auto operator<=>(const Money&, const Money&) = default;

 private:
  constexpr explicit Money(std::int64_t micros) : micros_(micros) {}
  std::int64_t micros_ = 0;
};

// Budgets travel through the CLI in the same per-10k unit as catalog prices.
inline double per_query_from_per_10k(double v) { return v / Money::kQueriesPerPriceUnit; }
inline double per_10k_from_per_query(double v) { return v * Money::kQueriesPerPriceUnit; }

struct Service {
  std::string name;
  Money price;

  [[nodiscard]] double unit_cost() const noexcept { return price.unit_cost(); }
};

// Map from categorical quality-score strings to numbers, applied at ingestion.
using ScoreMap = std::map<std::string, double, std::less<>>;

inline ScoreMap five_level_score_map() {
  return {{"very unlikely", 0.2}, {"unlikely", 0.4}, {"possible", 0.6},
          {"likely", 0.8},        {"very likely", 1.0}};
}

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Immutable description of the market: K priced services and L labels.
class ServiceCatalog {
 public:
  ServiceCatalog(std::vector<Service> services, std::vector<std::string> labels,
                 ScoreMap score_map = {})
      : services_(std::move(services)), labels_(std::move(labels)), score_map_(std::move(score_map)) {
    check();
    costs_.reserve(services_.size());
    for (const auto& s : services_) costs_.push_back(s.unit_cost());
    fingerprint_ = compute_fingerprint();
  }

  [[nodiscard]] std::size_t num_services() const noexcept { return services_.size(); }
  [[nodiscard]] std::size_t num_labels() const noexcept { return labels_.size(); }
  [[nodiscard]] const std::vector<Service>& services() const noexcept { return services_; }
  [[nodiscard]] const Service& service(std::size_t k) const { return services_.at(k); }
  [[nodiscard]] const std::vector<std::string>& labels() const noexcept { return labels_; }
  [[nodiscard]] const std::string& label(std::size_t l) const { return labels_.at(l); }
  [[nodiscard]] const ScoreMap& score_map() const noexcept { return score_map_; }

  // Per-query unit costs, index-aligned with services().
  [[nodiscard]] const std::vector<double>& costs() const noexcept { return costs_; }
  [[nodiscard]] double cost(std::size_t k) const { return costs_.at(k); }

  [[nodiscard]] std::optional<std::size_t> service_index(std::string_view name) const {
    for (std::size_t k = 0; k < services_.size(); ++k) {
      if (services_[k].name == name) return k;
    }
    return std::nullopt;
  }
  [[nodiscard]] std::optional<std::size_t> label_index(std::string_view name) const {
    for (std::size_t l = 0; l < labels_.size(); ++l) {
      if (labels_[l] == name) return l;
    }
    return std::nullopt;
  }

  // Lowest index among the cheapest services.
  [[nodiscard]] std::size_t cheapest() const {
    return static_cast<std::size_t>(std::min_element(costs_.begin(), costs_.end()) - costs_.begin());
  }
  [[nodiscard]] double min_cost() const { return costs_[cheapest()]; }
  [[nodiscard]] double max_cost() const { return *std::max_element(costs_.begin(), costs_.end()); }

  // Order-sensitive: strategies are index-addressed and must not be applied
  // to a permuted or repriced catalog.
  [[nodiscard]] const std::string& fingerprint() const noexcept { return fingerprint_; }

  // Same catalog with every price multiplied by `factor`.
  [[nodiscard]] ServiceCatalog scaled(double factor) const {
    std::vector<Service> s = services_;
    for (auto& svc : s) svc.price = Money::from_per_10k(svc.price.per_10k() * factor);
    return ServiceCatalog(std::move(s), labels_, score_map_);
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j;
    j["services"] = nlohmann::json::array();
    for (const auto& s : services_) {
      j["services"].push_back({{"name", s.name}, {"cost_per_10k", s.price.per_10k()}});
    }
    j["labels"] = labels_;
    if (!score_map_.empty()) j["score_map"] = score_map_;
    return j;
  }

  static ServiceCatalog from_json(const nlohmann::json& j) {
    try {
      std::vector<Service> services;
      for (const auto& s : j.at("services")) {
        services.push_back({s.at("name").get<std::string>(),
                            Money::from_per_10k(s.at("cost_per_10k").get<double>())});
      }
      auto labels = j.at("labels").get<std::vector<std::string>>();
      ScoreMap map;
      if (j.contains("score_map")) {
        const auto& sm = j.at("score_map");
        if (sm.is_string() && sm.get<std::string>() == "five_level") {
          map = five_level_score_map();
        } else {
          for (const auto& [k, v] : sm.items()) map.emplace(k, v.get<double>());
        }
      }
      return ServiceCatalog(std::move(services), std::move(labels), std::move(map));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(fmt::format("malformed catalog: {}", e.what()));
    }
  }

 private:
  void check() const {
    if (services_.empty()) throw ValidationError("catalog needs at least one service");
    if (labels_.size() < 2) throw ValidationError("catalog needs at least two labels");
    std::set<std::string_view> names;
    std::size_t free_services = 0;
    for (const auto& s : services_) {
      if (s.name.empty()) throw ValidationError("service name must be nonempty");
      if (!names.insert(s.name).second) {
        throw ValidationError(fmt::format("duplicate service name '{}'", s.name));
      }
      if (s.price.micros_per_10k() < 0) {
        throw ValidationError(fmt::format("service '{}' has a negative price", s.name));
      }
      if (s.price.micros_per_10k() == 0) ++free_services;
    }
    if (free_services > 1) {
      throw ValidationError("at most one service may be free (zero cost)");
    }
    std::set<std::string_view> lnames;
    for (const auto& l : labels_) {
      if (!lnames.insert(l).second) throw ValidationError(fmt::format("duplicate label '{}'", l));
    }
    for (const auto& [key, value] : score_map_) {
      if (!(value >= 0.0 && value <= 1.0)) {
        throw ValidationError(fmt::format("score map entry '{}' = {} is outside [0,1]", key, value));
      }
    }
  }

  [[nodiscard]] std::string compute_fingerprint() const {
    std::uint64_t h = fnv1a64("catalog-v1");
    for (const auto& s : services_) {
      h = fnv1a64(s.name, h);
      h = fnv1a64(std::string_view("\x1f", 1), h);
      h = fnv1a64(std::to_string(s.price.micros_per_10k()), h);
      h = fnv1a64(std::string_view("\x1e", 1), h);
    }
    h = fnv1a64(std::string_view("\x1d", 1), h);
    for (const auto& l : labels_) {
      h = fnv1a64(l, h);
      h = fnv1a64(std::string_view("\x1f", 1), h);
    }
    return fmt::format("{}x{}-{:016x}", services_.size(), labels_.size(), h);
  }

  std::vector<Service> services_;
  std::vector<std::string> labels_;
  ScoreMap score_map_;
  std::vector<double> costs_;
  std::string fingerprint_;
};

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << text;
  if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

inline ServiceCatalog load_catalog(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(fmt::format("catalog '{}' is not valid JSON: {}", path.string(), e.what()));
  }
  return ServiceCatalog::from_json(j);
}

}  // namespace apiroute

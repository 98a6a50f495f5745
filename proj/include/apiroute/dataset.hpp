#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "apiroute/catalog.hpp"
#include "apiroute/error.hpp"
#include "apiroute/random.hpp"

namespace apiroute {

// Quantile returned for level 0: strictly below every valid score, so the
// escalation test `score <= threshold` never fires.
inline constexpr double kNeverEscalateScore = -1.0;

// One replayed input: the truth plus every service's (label, score).
struct AnnotatedSample {
  std::string sample_id;
  std::size_t true_label = 0;
  std::vector<std::size_t> predicted;  // per service, index into the label space
  std::vector<double> scores;          // per service, in [0,1]

  [[nodiscard]] bool correct(std::size_t k) const { return predicted[k] == true_label; }

  friend bool operator==(const AnnotatedSample&, const AnnotatedSample&) = default;
};

class AnnotatedDataset {
 public:
  AnnotatedDataset(std::vector<AnnotatedSample> samples, const ServiceCatalog& catalog)
      : samples_(std::move(samples)),
        fingerprint_(catalog.fingerprint()),
        num_services_(catalog.num_services()),
        num_labels_(catalog.num_labels()) {
    if (samples_.empty()) throw ValidationError("dataset must contain at least one sample");
    std::unordered_set<std::string_view> ids;
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      const auto& s = samples_[i];
      if (!ids.insert(s.sample_id).second) {
        throw ValidationError(fmt::format("duplicate sample_id '{}'", s.sample_id));
      }
      if (s.predicted.size() != num_services_ || s.scores.size() != num_services_) {
        throw DimensionError(fmt::format("sample '{}' does not cover all {} services", s.sample_id, num_services_));
      }
      if (s.true_label >= num_labels_) {
        throw ValidationError(fmt::format("sample '{}' has an out-of-range true label", s.sample_id));
      }
      for (std::size_t k = 0; k < num_services_; ++k) {
        if (s.predicted[k] >= num_labels_) {
          throw ValidationError(fmt::format("sample '{}' has an out-of-range prediction", s.sample_id));
        }
        if (!(s.scores[k] >= 0.0 && s.scores[k] <= 1.0)) {
          throw ValidationError(fmt::format("sample '{}' has score {} outside [0,1]", s.sample_id, s.scores[k]));
        }
      }
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return samples_.size(); }
  [[nodiscard]] std::size_t num_services() const noexcept { return num_services_; }
  [[nodiscard]] std::size_t num_labels() const noexcept { return num_labels_; }
  [[nodiscard]] const std::string& fingerprint() const noexcept { return fingerprint_; }
  [[nodiscard]] const std::vector<AnnotatedSample>& samples() const noexcept { return samples_; }
  [[nodiscard]] const AnnotatedSample& operator[](std::size_t i) const { return samples_[i]; }

  void require_catalog(const ServiceCatalog& catalog) const {
    if (catalog.fingerprint() != fingerprint_) {
      throw FingerprintError(fmt::format("dataset belongs to catalog {} but catalog is {}", fingerprint_,
                                         catalog.fingerprint()));
    }
  }

  // Empirical accuracy of always calling service k.
  [[nodiscard]] double service_accuracy(std::size_t k) const {
    std::size_t hits = 0;
    for (const auto& s : samples_) hits += s.correct(k);
    return static_cast<double>(hits) / static_cast<double>(samples_.size());
  }

 private:
  std::vector<AnnotatedSample> samples_;
  std::string fingerprint_;
  std::size_t num_services_;
  std::size_t num_labels_;
};

// ---------------------------------------------------------------------------
// Quantiles

// 1-based nearest rank ceil(level * n), clamped to [1, n]; 0 for level 0.
// The small slack keeps levels like m/M from rounding up a whole rank.
inline std::size_t nearest_rank(double level, std::size_t n) {
  if (level <= 0.0) return 0;
  const double r = level * static_cast<double>(n);
  auto rank = static_cast<std::size_t>(std::ceil(r - 1e-9 * std::max(1.0, r)));
  return std::clamp<std::size_t>(rank, 1, n);
}

inline double quantile_of_sorted(std::span<const double> sorted, double level) {
  if (sorted.empty()) throw ValidationError("quantile of an empty sequence");
  const std::size_t rank = nearest_rank(level, sorted.size());
  if (rank == 0) return kNeverEscalateScore;
  return sorted[rank - 1];
}

// Nearest-rank (type-1) quantile: the ceil(level*n)-th smallest value.
inline double empirical_quantile(std::span<const double> values, double level) {
  if (values.empty()) throw ValidationError("quantile of an empty sequence");
  if (!(level >= 0.0 && level <= 1.0)) {
    throw ValidationError(fmt::format("quantile level {} outside [0,1]", level));
  }
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  return quantile_of_sorted(v, level);
}

// ---------------------------------------------------------------------------
// CSV ingestion

inline std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Closest label by edit distance; ties go to the lowest label index.
inline std::size_t nearest_label(std::string_view text, const std::vector<std::string>& labels) {
  std::size_t best = 0;
  std::size_t best_d = edit_distance(text, labels[0]);
  for (std::size_t l = 1; l < labels.size(); ++l) {
    const std::size_t d = edit_distance(text, labels[l]);
    if (d < best_d) {
      best = l;
      best_d = d;
    }
  }
  return best;
}

struct LoadOptions {
  // Reject predicted labels outside the label space instead of remapping them.
  bool strict_labels = false;
  // Apply the catalog's categorical score map to non-numeric scores.
  bool use_score_map = true;
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string csv_escape(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

}  // namespace detail

// Parses the replay CSV: `sample_id,true_label` followed by
// `pred_<name>,score_<name>` for every catalog service.
inline AnnotatedDataset parse_dataset(std::string_view text, const ServiceCatalog& catalog,
                                      const LoadOptions& options = {}) {
  std::vector<std::string_view> lines;
  for (std::size_t pos = 0; pos < text.size();) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  while (!lines.empty() && detail::trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw ValidationError("dataset is empty (no header)");

  auto header = detail::split_csv_line(detail::trim(lines[0]));
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t c = 0; c < header.size(); ++c) col[std::string(detail::trim(header[c]))] = c;

  const auto require = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end()) throw ValidationError(fmt::format("missing column '{}'", name));
    return it->second;
  };
  const std::size_t id_col = require("sample_id");
  const std::size_t truth_col = require("true_label");
  const std::size_t K = catalog.num_services();
  std::vector<std::size_t> pred_col(K), score_col(K);
  for (std::size_t k = 0; k < K; ++k) {
    pred_col[k] = require("pred_" + catalog.service(k).name);
    score_col[k] = require("score_" + catalog.service(k).name);
  }
  for (const auto& [name, c] : col) {
    for (const char* prefix : {"pred_", "score_"}) {
      if (name.rfind(prefix, 0) == 0 && !catalog.service_index(name.substr(std::string_view(prefix).size()))) {
        throw ValidationError(fmt::format("column '{}' names a service that is not in the catalog", name));
      }
    }
  }

  std::vector<AnnotatedSample> samples;
  samples.reserve(lines.size() - 1);
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::size_t row = li;  // 1-based data row
    const auto line = detail::trim(lines[li]);
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size()) {
      throw ValidationError(fmt::format("row {}: expected {} fields, found {}", row, header.size(), fields.size()));
    }
    AnnotatedSample s;
    s.sample_id = std::string(detail::trim(fields[id_col]));
    const auto truth = detail::trim(fields[truth_col]);
    auto tl = catalog.label_index(truth);
    if (!tl) throw ValidationError(fmt::format("row {}: unknown true label '{}'", row, truth));
    s.true_label = *tl;
    s.predicted.resize(K);
    s.scores.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      const auto pred = detail::trim(fields[pred_col[k]]);
      if (auto pl = catalog.label_index(pred)) {
        s.predicted[k] = *pl;
      } else if (options.strict_labels) {
        throw ValidationError(fmt::format("row {}: service '{}' predicted unknown label '{}'", row,
                                          catalog.service(k).name, pred));
      } else {
        s.predicted[k] = nearest_label(pred, catalog.labels());
      }

      const auto raw = detail::trim(fields[score_col[k]]);
      double score = 0.0;
      auto [ptr, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), score);
      if (ec != std::errc{} || ptr != raw.data() + raw.size()) {
        const auto& map = catalog.score_map();
        auto it = options.use_score_map ? map.find(detail::lowercase(raw)) : map.end();
        if (it == map.end()) {
          throw ValidationError(fmt::format("row {}: score '{}' for service '{}' is not a number", row, raw,
                                            catalog.service(k).name));
        }
        score = it->second;
      }
      if (!(score >= 0.0 && score <= 1.0)) {
        throw ValidationError(fmt::format("row {}: score {} for service '{}' is outside [0,1]", row, score,
                                          catalog.service(k).name));
      }
      s.scores[k] = score;
    }
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw ValidationError("dataset has a header but no rows");
  return AnnotatedDataset(std::move(samples), catalog);
}

inline AnnotatedDataset load_dataset(const std::filesystem::path& path, const ServiceCatalog& catalog,
                                     const LoadOptions& options = {}) {
  return parse_dataset(read_text_file(path), catalog, options);
}

inline std::string dataset_to_csv(const AnnotatedDataset& data, const ServiceCatalog& catalog) {
  std::string out = "sample_id,true_label";
  for (const auto& svc : catalog.services()) {
    out += fmt::format(",pred_{},score_{}", svc.name, svc.name);
  }
  out += '\n';
  for (const auto& s : data.samples()) {
    out += detail::csv_escape(s.sample_id);
    out += ',';
    out += detail::csv_escape(catalog.label(s.true_label));
    for (std::size_t k = 0; k < data.num_services(); ++k) {
      out += fmt::format(",{},{}", detail::csv_escape(catalog.label(s.predicted[k])), s.scores[k]);
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

struct DatasetSplit {
  AnnotatedDataset train;
  AnnotatedDataset test;
};

// Seeded random partition: ceil(f*N) rows to train, the rest to test. Each
// side keeps the original row order.
inline DatasetSplit split_dataset(const AnnotatedDataset& data, const ServiceCatalog& catalog,
                                  double train_fraction, std::uint64_t seed) {
  const std::size_t n = data.size();
  if (n < 2) throw ValidationError("cannot split a dataset with fewer than two samples");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError(fmt::format("train fraction {} must lie strictly between 0 and 1", train_fraction));
  }
  const std::size_t n_train = nearest_rank(train_fraction, n);
  if (n_train == n) {
    throw ValidationError(fmt::format("train fraction {} leaves no test rows out of {}", train_fraction, n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(order[i], order[uniform_index(rng, i + 1)]);
  }
  std::vector<std::size_t> tr(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> te(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(tr.begin(), tr.end());
  std::sort(te.begin(), te.end());
  const auto take = [&](const std::vector<std::size_t>& idx) {
    std::vector<AnnotatedSample> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(data[i]);
    return AnnotatedDataset(std::move(out), catalog);
  };
  return {take(tr), take(te)};
}

inline nlohmann::json split_manifest(const DatasetSplit& split) {
  nlohmann::json j;
  j["train"] = nlohmann::json::array();
  j["test"] = nlohmann::json::array();
  for (const auto& s : split.train.samples()) j["train"].push_back(s.sample_id);
  for (const auto& s : split.test.samples()) j["test"].push_back(s.sample_id);
  return j;
}

}  // namespace apiroute

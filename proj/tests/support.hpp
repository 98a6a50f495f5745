#pragma once

// Small hand-built fixtures shared by the unit tests.

#include <string>
#include <vector>

#include "apiroute/apiroute.hpp"

namespace fixtures {

inline apiroute::ServiceCatalog catalog(std::vector<double> prices_per_10k, std::size_t labels = 2) {
  std::vector<apiroute::Service> s;
  for (std::size_t k = 0; k < prices_per_10k.size(); ++k) {
    s.push_back({"s" + std::to_string(k), apiroute::Money::from_per_10k(prices_per_10k[k])});
  }
  std::vector<std::string> l;
  for (std::size_t i = 0; i < labels; ++i) l.push_back(std::string(1, static_cast<char>('a' + i)));
  return apiroute::ServiceCatalog(std::move(s), std::move(l));
}

inline apiroute::AnnotatedSample sample(std::string id, std::size_t truth, std::vector<std::size_t> pred,
                                        std::vector<double> scores) {
  return apiroute::AnnotatedSample{std::move(id), truth, std::move(pred), std::move(scores)};
}

// The six-row K=2, L=2 instance whose tables the estimation tests derive by hand.
inline std::vector<apiroute::AnnotatedSample> six_rows() {
  return {
      sample("r1", 0, {0, 0}, {0.9, 0.6}),  //
      sample("r2", 0, {0, 1}, {0.3, 0.5}),  //
      sample("r3", 1, {0, 1}, {0.5, 0.8}),  //
      sample("r4", 1, {1, 1}, {0.7, 0.4}),  //
      sample("r5", 0, {1, 0}, {0.2, 0.9}),  //
      sample("r6", 1, {0, 0}, {0.8, 0.3}),
  };
}

}  // namespace fixtures

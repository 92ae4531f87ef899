#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "topkfair/data.hpp"
#include "topkfair/model.hpp"

namespace fixtures {

inline topkfair::Dataset from_csv(const std::string& text) {
  std::istringstream in(text);
  return topkfair::read_csv(in);
}

inline topkfair::Dataset small_synthetic(std::size_t queries, std::size_t items,
                                         std::uint64_t seed, double bias = 2.0) {
  topkfair::SyntheticSpec spec;
  spec.num_queries = queries;
  spec.items_per_query = items;
  spec.minority_fraction = 0.4;
  spec.bias = bias;
  spec.seed = seed;
  return topkfair::generate_synthetic(spec);
}

/// Model with parameters ~ N(0, sd^2), so scores are spread out.
inline topkfair::FactorizationScorer random_model(const topkfair::Dataset& d, std::size_t dim,
                                                  std::uint64_t seed, double sd = 0.5) {
  auto m = topkfair::FactorizationScorer::init({d.num_query_rows(), d.catalog().size(), dim},
                                               10.0, 1.0, seed);
  std::mt19937_64 rng(seed + 17);
  std::normal_distribution<double> normal(0.0, sd);
  for (auto& w : m.params().values()) w = normal(rng);
  return m;
}

/// Distinct scores in random order, at least `gap` apart.
inline std::vector<double> tie_free_scores(std::size_t n, std::mt19937_64& rng,
                                           double gap = 0.0) {
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::vector<double> s(n);
  if (gap > 0.0) {
    std::uniform_real_distribution<double> extra(0.0, gap);
    double x = -0.5 * gap * static_cast<double>(n);
    for (auto& v : s) {
      v = x;
      x += gap + extra(rng);
    }
    std::shuffle(s.begin(), s.end(), rng);
  } else {
    for (auto& v : s) v = u(rng);
  }
  return s;
}

}  // namespace fixtures

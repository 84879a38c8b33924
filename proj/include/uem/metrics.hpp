#pragma once

#include <span>
#include <unordered_set>
#include <vector>

namespace uem {

struct PrfScore {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;

  bool operator==(const PrfScore&) const = default;
};

// Precision, recall and F over the first k recommended ids. `relevant` must be
// non-empty and k at least 1; a list shorter than k still divides by k.
PrfScore precision_recall_f_at_k(std::span<const int> recommended,
                                 const std::unordered_set<int>& relevant, std::size_t k);

// sum_i sum_j |x_i - x_j| / (2 n^2 mean). Zero for an all-zero vector.
double gini(std::span<const double> values);

}  // namespace uem

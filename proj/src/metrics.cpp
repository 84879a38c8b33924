#include "uem/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uem {

PrfScore precision_recall_f_at_k(std::span<const int> recommended,
                                 const std::unordered_set<int>& relevant, std::size_t k) {
  if (k == 0) throw std::invalid_argument("k must be at least 1");
  if (relevant.empty()) throw std::invalid_argument("relevant set is empty");
  const std::size_t n = std::min(k, recommended.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) hits += relevant.count(recommended[i]);
  PrfScore s;
  s.precision = static_cast<double>(hits) / static_cast<double>(k);
  s.recall = static_cast<double>(hits) / static_cast<double>(relevant.size());
  if (s.precision + s.recall > 0.0) {
    s.f = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  }
  return s;
}

double gini(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("gini of an empty vector");
  double total = 0.0;
  for (double x : values) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument("gini needs nonnegative values");
    total += x;
  }
  if (total == 0.0) return 0.0;
  // Sorted form of the pairwise sum: sum_i (2i - n + 1) x_(i) counts every
  // |x_i - x_j| twice over ordered pairs.
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double pairwise = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    pairwise += (2.0 * static_cast<double>(i) - n + 1.0) * sorted[i];
  }
  pairwise *= 2.0;
  const double mean = total / n;
  return pairwise / (2.0 * n * n * mean);
}

}  // namespace uem

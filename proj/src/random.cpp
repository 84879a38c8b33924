#include "uem/random.hpp"

#include <cmath>
#include <numeric>
#include <unordered_set>

namespace uem {

std::size_t Rng::below(std::size_t n) {
  if (n <= 1) return 0;
  // Lemire-style rejection to avoid modulo bias.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

std::size_t Rng::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) return below(weights.size());
  double u = uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    u -= weights[i];
    if (u < 0.0) return i;
  }
  // Rounding left a sliver; return the last positive weight.
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return weights.size() - 1;
}

double Rng::gamma(double shape) {
  // Marsaglia-Tsang, with the shape < 1 boost.
  if (shape < 1.0) {
    const double u = uniform();
    return gamma(shape + 1.0) * std::pow(u > 0.0 ? u : 0x1.0p-53, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      // Box-Muller from two uniforms.
      const double u1 = 1.0 - uniform();
      const double u2 = uniform();
      x = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<double> Rng::dirichlet(std::size_t dim, double concentration) {
  std::vector<double> out(dim);
  double total = 0.0;
  for (auto& x : out) {
    x = gamma(concentration);
    total += x;
  }
  if (!(total > 0.0)) {
    // Every component underflowed: fall back to a one-hot draw, which is the
    // small-concentration limit.
    std::fill(out.begin(), out.end(), 0.0);
    out[below(dim)] = 1.0;
    return out;
  }
  for (auto& x : out) x /= total;
  return out;
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t m,
                                                    Rng& rng) {
  if (m > n) m = n;
  std::vector<std::size_t> out;
  out.reserve(m);
  if (m * 4 >= n) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (std::size_t i = 0; i < m; ++i) {
      std::swap(all[i], all[i + rng.below(n - i)]);
      out.push_back(all[i]);
    }
    return out;
  }
  // Sparse case: Floyd's algorithm.
  std::unordered_set<std::size_t> chosen;
  for (std::size_t j = n - m; j < n; ++j) {
    const std::size_t t = rng.below(j + 1);
    if (chosen.insert(t).second) {
      out.push_back(t);
    } else {
      chosen.insert(j);
      out.push_back(j);
    }
  }
  return out;
}

}  // namespace uem

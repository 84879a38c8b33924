#include "uem/rating.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace uem {
namespace {

constexpr std::array<double, 4> kCuts{-1.5, -0.5, 0.5, 1.5};

std::size_t index_of(int rating) {
  if (!valid_rating(rating)) {
    throw RatingError("rating " + std::to_string(rating) + " outside -2..2");
  }
  return static_cast<std::size_t>(rating + 2);
}

RatingDistribution assemble(const std::array<double, 5>& p, const std::array<double, 4>& tails) {
  RatingDistribution d;
  d.probabilities = p;
  d.upper_tail[0] = 1.0;
  d.cumulative[0] = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    d.upper_tail[j + 1] = tails[j];
    d.cumulative[j + 1] = 1.0 - tails[j];
  }
  d.upper_tail[5] = 0.0;
  d.cumulative[5] = 1.0;
  d.validate();
  return d;
}

}  // namespace

double RatingDistribution::probability(int rating) const { return probabilities[index_of(rating)]; }

int RatingDistribution::bucket_of(double q) const {
  if (!(q >= 0.0 && q <= 1.0)) throw RatingError("quantile must lie in [0, 1]");
  const double tail = 1.0 - q;
  // Bucket j covers tail in [S_j, S_{j-1}).
  for (std::size_t j = 1; j <= 5; ++j) {
    if (tail >= upper_tail[j]) return kRatingValues[j - 1];
  }
  return kRatingValues[4];
}

int RatingDistribution::sample(std::span<const int> allowed, Rng& rng) const {
  if (allowed.empty()) throw RatingError("no ratings to sample from");
  std::vector<double> w;
  w.reserve(allowed.size());
  for (int r : allowed) w.push_back(probability(r));
  return allowed[rng.categorical(w)];
}

void RatingDistribution::validate() const {
  double total = 0.0;
  for (double p : probabilities) {
    if (!(p > 0.0) || !std::isfinite(p)) {
      throw RatingError("rating probabilities must be strictly positive");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw RatingError("rating probabilities must sum to 1");
  for (std::size_t j = 1; j < upper_tail.size(); ++j) {
    if (!(upper_tail[j] < upper_tail[j - 1])) {
      throw RatingError("rating buckets are not distinguishable");
    }
  }
}

RatingDistribution normal_rating_distribution() {
  auto Phi = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
  auto tail = [](double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); };
  std::array<double, 5> p{Phi(kCuts[0]), Phi(kCuts[1]) - Phi(kCuts[0]),
                          Phi(kCuts[2]) - Phi(kCuts[1]), Phi(kCuts[3]) - Phi(kCuts[2]),
                          tail(kCuts[3])};
  return assemble(p, {tail(kCuts[0]), tail(kCuts[1]), tail(kCuts[2]), tail(kCuts[3])});
}

RatingDistribution exponential_rating_distribution(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw RatingError("exponential rating distribution needs sigma > 0");
  }
  // Survival exp(-(x + 2.5) / sigma), evaluated directly to avoid cancellation.
  auto tail = [sigma](double x) { return std::exp(-(x + 2.5) / sigma); };
  std::array<double, 4> s{tail(kCuts[0]), tail(kCuts[1]), tail(kCuts[2]), tail(kCuts[3])};
  std::array<double, 5> p{-std::expm1(-(kCuts[0] + 2.5) / sigma), s[0] - s[1], s[1] - s[2],
                          s[2] - s[3], s[3]};
  return assemble(p, s);
}

RatingDistribution make_rating_distribution(std::string_view kind, double sigma) {
  if (kind == "normal") return normal_rating_distribution();
  if (kind == "exponential") return exponential_rating_distribution(sigma);
  throw RatingError("unknown rating distribution '" + std::string(kind) + "'");
}

double rating_likelihood(double q, const RatingDistribution& dist, int rating, double floor) {
  index_of(rating);
  return dist.bucket_of(q) == rating ? 1.0 - 4.0 * floor : floor;
}

double rating_likelihood(std::span<const double> q_samples, const RatingDistribution& dist,
                         int rating, double floor) {
  index_of(rating);
  if (q_samples.empty()) throw RatingError("no quantile samples");
  std::size_t hits = 0;
  for (double q : q_samples) hits += dist.bucket_of(q) == rating;
  const double frac = static_cast<double>(hits) / static_cast<double>(q_samples.size());
  return floor + (1.0 - 5.0 * floor) * frac;
}

}  // namespace uem

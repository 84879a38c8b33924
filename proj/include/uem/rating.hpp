#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <string_view>

#include "uem/random.hpp"

namespace uem {

class RatingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<int, 5> kRatingValues{-2, -1, 0, 1, 2};
inline constexpr std::array<int, 2> kPositiveRatings{1, 2};
inline constexpr std::array<int, 3> kNegativeRatings{-2, -1, 0};

inline bool valid_rating(int r) { return r >= -2 && r <= 2; }

// Categorical law over the ratings -2..2, built from a cdf evaluated at the
// cut points -1.5, -0.5, 0.5, 1.5.
//
// Rating r owns the quantile bucket (C_{j-1}, C_j]. The upper tails
// S_j = 1 - C_j are kept separately because for sharp asymmetric laws the
// cumulative values round to 1 while the tails are still distinct; bucket
// lookup goes through the tails.
struct RatingDistribution {
  std::array<double, 5> probabilities{};
  std::array<double, 6> cumulative{};  // C_0 = 0, ..., C_5 = 1
  std::array<double, 6> upper_tail{};  // S_0 = 1, ..., S_5 = 0

  double probability(int rating) const;

  // Rating whose bucket holds q. Exact quantiles lie in (0, 1]; a sampled
  // quantile of 0 belongs to the lowest bucket.
  int bucket_of(double q) const;

  // Draw from the law renormalized over `allowed`.
  int sample(std::span<const int> allowed, Rng& rng) const;

  // Throws RatingError unless probabilities are positive, sum to one and
  // the tails strictly decrease.
  void validate() const;
};

// Standard normal cdf at the cut points.
RatingDistribution normal_rating_distribution();

// Exponential cdf with location -2.5 and rate 1/sigma:
// F(x) = 1 - exp(-(x + 2.5) / sigma). Throws for sigma <= 0 or when sigma is
// too small for the buckets to be told apart in double precision.
RatingDistribution exponential_rating_distribution(double sigma);

// kind is "normal" or "exponential".
RatingDistribution make_rating_distribution(std::string_view kind, double sigma = 1.0);

// 1 - 4 * floor when q falls in the bucket of `rating`, floor otherwise.
double rating_likelihood(double q, const RatingDistribution& dist, int rating,
                         double floor = 0.01);

// Sampled quantiles: floor + (1 - 5 * floor) * (fraction in the bucket), which
// equals the exact form when every sample agrees.
double rating_likelihood(std::span<const double> q_samples, const RatingDistribution& dist,
                         int rating, double floor = 0.01);

}  // namespace uem

#include <doctest.h>

#include <cmath>
#include <vector>

#include "uem/rating.hpp"

using namespace uem;

namespace {

double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST_SUITE("rating") {
  TEST_CASE("normal rating law") {
    const RatingDistribution d = normal_rating_distribution();
    const double want[5] = {0.0668, 0.2417, 0.3829, 0.2417, 0.0668};
    double sum = 0.0;
    for (int i = 0; i < 5; ++i) {
      CHECK(std::abs(d.probabilities[i] - want[i]) < 1e-4);
      sum += d.probabilities[i];
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
    CHECK(d.probability(-2) == doctest::Approx(d.probability(2)).epsilon(1e-12));
    CHECK(d.probability(-1) == doctest::Approx(d.probability(1)).epsilon(1e-12));
    CHECK(std::abs(d.probability(0) - (phi(0.5) - phi(-0.5))) < 1e-12);

    const double cuts[4] = {0.0668, 0.3085, 0.6915, 0.9332};
    for (int j = 0; j < 4; ++j) CHECK(std::abs(d.cumulative[j + 1] - cuts[j]) < 1e-4);
    CHECK(d.cumulative[0] == 0.0);
    CHECK(d.cumulative[5] == 1.0);
    CHECK(d.upper_tail[0] == 1.0);
    CHECK(d.upper_tail[5] == 0.0);
    CHECK_NOTHROW(d.validate());
  }

  TEST_CASE("bucket lookup") {
    const RatingDistribution d = normal_rating_distribution();
    CHECK(d.bucket_of(0.1) == -1);
    CHECK(d.bucket_of(1.0) == 2);
    CHECK(d.bucket_of(0.01) == -2);
    CHECK(d.bucket_of(0.5) == 0);
    CHECK(d.bucket_of(0.8) == 1);
    CHECK(d.bucket_of(0.95) == 2);
    CHECK(d.bucket_of(d.cumulative[2] - 1e-9) == -1);
    CHECK(d.bucket_of(d.cumulative[2] + 1e-9) == 0);
    CHECK(d.bucket_of(0.0) == -2);
    CHECK_THROWS_AS(d.bucket_of(-0.1), RatingError);
    CHECK_THROWS_AS(d.bucket_of(1.5), RatingError);
  }

  TEST_CASE("likelihood floor") {
    const RatingDistribution d = normal_rating_distribution();
    CHECK(rating_likelihood(0.1, d, -1, 0.01) == doctest::Approx(0.96).epsilon(1e-15));
    CHECK(rating_likelihood(0.1, d, 2, 0.01) == 0.01);
    CHECK(rating_likelihood(1.0, d, 2) == doctest::Approx(0.96).epsilon(1e-15));

    const std::vector<double> agree{0.1, 0.2, 0.15};
    CHECK(rating_likelihood(agree, d, -1, 0.01) == doctest::Approx(0.96).epsilon(1e-15));
    CHECK(rating_likelihood(agree, d, 1, 0.01) == doctest::Approx(0.01).epsilon(1e-15));
    const std::vector<double> half{0.1, 0.9};
    CHECK(rating_likelihood(half, d, -1, 0.01) == doctest::Approx(0.01 + 0.95 * 0.5).epsilon(1e-15));

    // Over the five ratings the exact likelihoods always sum to one.
    for (double q : {0.05, 0.3, 0.5, 0.99}) {
      double s = 0.0;
      for (int r : kRatingValues) s += rating_likelihood(q, d, r, 0.02);
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
    CHECK_THROWS_AS(rating_likelihood(0.5, d, 3), RatingError);
  }

  TEST_CASE("exponential rating law") {
    const RatingDistribution d = exponential_rating_distribution(1.0);
    CHECK(std::abs(d.probability(-2) - 0.6321) < 1e-4);
    CHECK(std::abs(d.probability(-2) - (1.0 - std::exp(-1.0))) < 1e-12);
    CHECK(std::abs(d.probability(-1) - (std::exp(-1.0) - std::exp(-2.0))) < 1e-12);
    CHECK(std::abs(d.probability(2) - std::exp(-4.0)) < 1e-12);
    double s = 0.0;
    for (double p : d.probabilities) s += p;
    CHECK(std::abs(s - 1.0) < 1e-12);

    // Sharp laws keep distinct tails even when the cumulative rounds to one.
    const RatingDistribution sharp = exponential_rating_distribution(0.05);
    CHECK_NOTHROW(sharp.validate());
    CHECK(sharp.bucket_of(1.0) == 2);
    CHECK(sharp.bucket_of(0.5) == -2);

    CHECK_THROWS_AS(exponential_rating_distribution(0.0), RatingError);
    CHECK_THROWS_AS(exponential_rating_distribution(-1.0), RatingError);
    CHECK_THROWS_AS(exponential_rating_distribution(1e-3), RatingError);
    CHECK_THROWS_AS(make_rating_distribution("uniform"), RatingError);
    CHECK(make_rating_distribution("exponential", 2.0).probabilities ==
          exponential_rating_distribution(2.0).probabilities);
  }

  TEST_CASE("sampling renormalizes over the allowed ratings") {
    const RatingDistribution d = normal_rating_distribution();
    Rng rng(3);
    int twos = 0;
    const int n = 40000;
    for (int i = 0; i < n; ++i) {
      const int r = d.sample(kPositiveRatings, rng);
      CHECK((r == 1 || r == 2));
      twos += r == 2;
    }
    const double p = d.probability(2) / (d.probability(1) + d.probability(2));
    CHECK(std::abs(static_cast<double>(twos) / n - p) < 4.0 * std::sqrt(p * (1 - p) / n));
  }
}

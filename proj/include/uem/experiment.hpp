#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uem/corpus.hpp"
#include "uem/inference.hpp"
#include "uem/metrics.hpp"
#include "uem/model.hpp"
#include "uem/rating.hpp"
#include "uem/recommend.hpp"

namespace uem {

// What produces a user's ranked spot list in an experiment. The first four
// are the model methods; popularity (sum_g theta phi_g) and random are
// reference baselines.
enum class Recommender { Base, Al, Wtol, Wl, Popularity, Random };

std::string_view to_string(Recommender r);
Recommender parse_recommender(std::string_view name);

// One item the user experienced rated from {1, 2} and four it did not rated
// from {-2, -1, 0}, each drawn from the distribution renormalized over the
// subset. Experienced items come from the user's records; unexperienced ones
// from the catalog (for wl, pairs whose spot the user never visited).
// Throws RecommendError when fewer than four unexperienced items exist.
std::vector<RatedItem> select_startup_items(const std::vector<IndexedRecord>& user_records,
                                            const Catalog& catalog,
                                            const RatingDistribution& dist, Rng& rng);

// Every distinct spot (al), word (wtol) or (spot, words) pair (wl) of the
// user's training records, rated from {1, 2}. Empty for base.
std::vector<RatedItem> ratings_from_history(const std::vector<IndexedRecord>& user_records,
                                            Method method, const RatingDistribution& dist,
                                            Rng& rng);

struct ExperimentConfig {
  std::vector<Recommender> methods{Recommender::Al};
  SplitMode split = SplitMode::Time;
  double ratio = 0.8;
  std::vector<int> ks{5, 10, 15};
  int runs = 10;
  std::string distribution = "normal";
  double distribution_sigma = 1.0;
  std::uint64_t seed = 1;
  TrainConfig train;
  PosteriorSettings posterior;
  int threads = 0;  // 0 uses the hardware concurrency

  void validate() const;
};

struct UserScore {
  int run = 0;
  std::string user;
  int k = 0;
  PrfScore score;
};

struct RunSummary {
  int run = 0;
  std::uint64_t seed = 0;
  std::vector<PrfScore> averages;  // per k
  std::vector<double> gini;        // per k, over per-user F
  double perplexity_locations = 0.0;
  double perplexity_words = 0.0;
  std::size_t users_evaluated = 0;
  std::size_t users_excluded = 0;  // empty relevant set, or too few unrated items to start from
};

struct EvalReport {
  std::string city;  // label of the corpus, may be empty
  Variant variant = Variant::B;
  Recommender method = Recommender::Al;
  SplitMode split = SplitMode::Time;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  int runs = 0;
  std::vector<int> ks;
  std::string distribution;

  std::vector<UserScore> per_user;
  std::vector<PrfScore> averages;  // per k, mean over every per-user row
  std::vector<double> gini;        // per k, mean over runs
  double perplexity_locations = 0.0;
  double perplexity_words = 0.0;
  std::vector<RunSummary> per_run;
};

// Splits, fits once per run, and evaluates every configured method on the
// same fit. One report per method, in config order.
std::vector<EvalReport> run_experiments(const ExperimentConfig& config, const Corpus& corpus);

// Single-method convenience wrapper.
EvalReport run_experiment(const ExperimentConfig& config, const Corpus& corpus);

// Unweighted mean over cities of each city's averaged metrics.
struct CityAverage {
  Recommender method = Recommender::Al;
  SplitMode split = SplitMode::Time;
  double ratio = 0.0;
  std::vector<int> ks;
  std::vector<PrfScore> averages;
  std::vector<double> gini;
  std::size_t cities = 0;
};

CityAverage average_cities(std::span<const EvalReport> per_city);

// {"reports": [...], "cities_average": [...]}; the second key only when given.
void write_report_json(std::ostream& out, std::span<const EvalReport> reports,
                       std::span<const CityAverage> cities = {});
// One row per method, run, user and k.
void write_report_csv(std::ostream& out, std::span<const EvalReport> reports);

}  // namespace uem

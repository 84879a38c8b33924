#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "uem/corpus.hpp"
#include "uem/model.hpp"
#include "uem/random.hpp"
#include "uem/rating.hpp"

namespace uem {

class RecommendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The user exists in the vocabulary but has no training records.
class UnknownUserError : public RecommendError {
 public:
  using RecommendError::RecommendError;
};

// base: model scores only. al: rated spots. wtol: rated activity words.
// wl: rated (spot, words) pairs.
enum class Method { Base, Al, Wtol, Wl };

std::string_view to_string(Method m);
Method parse_method(std::string_view name);

// Something a new user can rate: a spot, a set of activity words, or both.
struct Item {
  std::optional<int> spot;
  std::vector<int> words;
  std::string image_id;

  bool operator==(const Item&) const = default;
};

struct RatedItem {
  Item item;
  int score = 0;

  bool operator==(const RatedItem&) const = default;
};

// The universe an item is ranked in. Items match the method: one per spot for
// al, one per word for wtol, one per observed (spot, word set) pair for wl.
struct Catalog {
  Method method = Method::Al;
  std::vector<Item> items;

  std::size_t size() const { return items.size(); }
  const Item* find(std::string_view image_id) const;
};

// Distinct (spot, sorted word set) pairs of a corpus, in first-seen order.
std::vector<Item> observed_items(const Corpus& corpus);

// Builds the method's catalog from observed pairs. Image ids are
// "l<spot>", "w<word>" and "p<position>" respectively.
Catalog build_catalog(const std::vector<Item>& observed, Method method);

struct Scored {
  int index = 0;
  double score = 0.0;

  bool operator==(const Scored&) const = default;
};

// Descending by score, ties by index ascending; at most k entries.
std::vector<Scored> rank_scores(const std::vector<double>& scores, std::size_t k);

// sum_g phi_g(l) pi_g(u) theta(g) for every spot, ranked. When `known` is
// non-empty, a user flagged false raises UnknownUserError.
std::vector<Scored> score_locations(const UemParams& params, int user,
                                    const std::vector<bool>& known = {});
// sum_g sigma_g(w) pi_g(u) theta(g) for every word, ranked.
std::vector<Scored> score_activities(const UemParams& params, int user,
                                     const std::vector<bool>& known = {});
// sum_g theta(g) phi_g(l): the population ranking used when nothing is known.
std::vector<Scored> score_popularity(const UemParams& params);

// p(item | g) under the method: phi for al, product of sigma for wtol, both
// for wl.
double item_score(const UemParams& params, int group, const Item& item, Method method);

// (N + 1 - rank) / N, rank = 1 + number of catalog items scoring strictly
// higher, capped at N.
double rank_quantile(const UemParams& params, int group, const Item& item,
                     const Catalog& catalog);

// Same rank statistic on a uniform subcatalog of size m drawn without
// replacement, (m - number of sampled items scoring higher) / m. Unbiased for
// the exact quantile; 0 when every sampled item scores higher.
double rank_quantile_mc(const UemParams& params, int group, const Item& item,
                        const Catalog& catalog, std::size_t m, Rng& rng);

enum class QuantileMode { Auto, Exact, MonteCarlo };

struct PosteriorSettings {
  double floor = 0.01;
  QuantileMode mode = QuantileMode::Auto;
  std::size_t exact_limit = 100000;  // Auto ranks exactly up to this catalog size
  std::size_t mc_size = 2000;
  int mc_resamples = 64;
  std::uint64_t seed = 0;
};

// Per-group sorted catalog scores so ranks cost O(log N).
class RankIndex {
 public:
  RankIndex(const UemParams& params, const Catalog& catalog);

  const UemParams& params() const { return *params_; }
  const Catalog& catalog() const { return *catalog_; }
  std::size_t size() const { return catalog_->size(); }

  std::size_t rank(int group, double score) const;
  double quantile(int group, double score) const;
  double quantile_mc(int group, double score, std::size_t m, Rng& rng) const;

  // p(rating | g) for every group.
  std::vector<double> likelihoods(const RatedItem& rated, const RatingDistribution& dist,
                                  const PosteriorSettings& settings) const;

 private:
  const UemParams* params_;
  const Catalog* catalog_;
  std::vector<std::vector<double>> raw_;     // per group, catalog order
  std::vector<std::vector<double>> sorted_;  // per group, ascending
};

// prior(g) * prod_i p(r_i | g), normalized. An empty prior selects theta.
std::vector<double> group_posterior(const RankIndex& index,
                                    const std::vector<RatedItem>& ratings,
                                    const RatingDistribution& dist,
                                    std::vector<double> prior = {},
                                    const PosteriorSettings& settings = {});

struct RatingSession {
  std::string session_id;
  Method method = Method::Al;
  std::vector<double> posterior;
  std::vector<RatedItem> history;
  std::size_t catalog_size = 0;
};

RatingSession start_session(const UemParams& params, std::string session_id, Method method,
                            std::size_t catalog_size);

// Uses the current posterior as the prior for the new ratings.
RatingSession update_session(const RatingSession& session,
                             const std::vector<RatedItem>& new_ratings, const RankIndex& index,
                             const RatingDistribution& dist,
                             const PosteriorSettings& settings = {});

// sum_g phi_g(l) posterior(g), ranked, top k.
std::vector<Scored> recommend_spots(const UemParams& params, const std::vector<double>& posterior,
                                    std::size_t k);

struct ScoredPair {
  int spot = 0;
  int word = 0;
  double score = 0.0;
};

// sum_g phi_g(l) sigma_g(w) posterior(g), ranked by score then (spot, word).
std::vector<ScoredPair> recommend_pairs(const UemParams& params,
                                        const std::vector<double>& posterior, std::size_t k);

// Next items to present: among catalog items not yet rated, ordered by
// posterior-weighted score, takes the top, the bottom and the quartile
// positions in between.
std::vector<Item> select_items_for_rating(const UemParams& params,
                                          const std::vector<double>& posterior,
                                          const Catalog& catalog,
                                          const std::vector<std::string>& already_rated,
                                          std::size_t count = 5);

}  // namespace uem

#include "uem/recommend.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <unordered_set>

namespace uem {
namespace {

std::vector<double> normalized(std::vector<double> v) {
  double total = 0.0;
  for (double x : v) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw RecommendError("prior must be nonnegative");
    total += x;
  }
  if (!(total > 0.0)) throw RecommendError("prior has no mass");
  for (auto& x : v) x /= total;
  return v;
}

void check_group(const UemParams& params, int group) {
  if (group < 0 || group >= params.num_groups()) throw RecommendError("group out of range");
}

void check_user(const UemParams& params, int user, const std::vector<bool>& known) {
  if (user < 0 || user >= params.dims().users) throw RecommendError("user out of range");
  if (!known.empty() && !known[static_cast<std::size_t>(user)]) {
    throw UnknownUserError(
        "user has no training records; use a rating session (pseudo-rating) instead");
  }
}

std::uint64_t item_seed(std::uint64_t seed, const Item& item, int group) {
  std::uint64_t h = fnv1a(item.image_id, mix64(seed));
  if (item.spot) h = mix64(h ^ static_cast<std::uint64_t>(*item.spot + 1));
  for (int w : item.words) h = mix64(h ^ static_cast<std::uint64_t>(w + 7));
  return mix64(h ^ static_cast<std::uint64_t>(group + 1));
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::Base: return "base";
    case Method::Al: return "al";
    case Method::Wtol: return "wtol";
    case Method::Wl: return "wl";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  if (name == "base") return Method::Base;
  if (name == "al") return Method::Al;
  if (name == "wtol") return Method::Wtol;
  if (name == "wl") return Method::Wl;
  throw RecommendError("unknown method '" + std::string(name) + "'");
}

const Item* Catalog::find(std::string_view image_id) const {
  for (const auto& item : items) {
    if (item.image_id == image_id) return &item;
  }
  return nullptr;
}

std::vector<Item> observed_items(const Corpus& corpus) {
  std::set<std::pair<int, std::vector<int>>> seen;
  std::vector<Item> out;
  for (const auto& r : corpus.records()) {
    std::vector<int> words = r.words;
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    if (seen.emplace(r.spot, words).second) out.push_back(Item{r.spot, std::move(words), {}});
  }
  return out;
}

Catalog build_catalog(const std::vector<Item>& observed, Method method) {
  Catalog c;
  c.method = method;
  switch (method) {
    case Method::Base:
      throw RecommendError("method base has no rating catalog");
    case Method::Al: {
      std::set<int> spots;
      for (const auto& it : observed) {
        if (it.spot) spots.insert(*it.spot);
      }
      for (int l : spots) c.items.push_back(Item{l, {}, "l" + std::to_string(l)});
      break;
    }
    case Method::Wtol: {
      std::set<int> words;
      for (const auto& it : observed) words.insert(it.words.begin(), it.words.end());
      for (int w : words) c.items.push_back(Item{std::nullopt, {w}, "w" + std::to_string(w)});
      break;
    }
    case Method::Wl: {
      std::set<std::pair<int, std::vector<int>>> seen;
      std::vector<std::pair<int, std::vector<int>>> pairs;
      for (const auto& it : observed) {
        if (!it.spot) continue;
        std::vector<int> words = it.words;
        std::sort(words.begin(), words.end());
        words.erase(std::unique(words.begin(), words.end()), words.end());
        if (seen.emplace(*it.spot, words).second) pairs.emplace_back(*it.spot, std::move(words));
      }
      std::sort(pairs.begin(), pairs.end());
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        c.items.push_back(Item{pairs[i].first, pairs[i].second, "p" + std::to_string(i)});
      }
      break;
    }
  }
  if (c.items.empty()) throw RecommendError("empty catalog");
  return c;
}

std::vector<Scored> rank_scores(const std::vector<double>& scores, std::size_t k) {
  std::vector<Scored> all(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) all[i] = {static_cast<int>(i), scores[i]};
  auto better = [](const Scored& a, const Scored& b) {
    return a.score > b.score || (a.score == b.score && a.index < b.index);
  };
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  return all;
}

std::vector<Scored> score_locations(const UemParams& params, int user,
                                    const std::vector<bool>& known) {
  check_user(params, user, known);
  const auto L = static_cast<std::size_t>(params.dims().spots);
  std::vector<double> scores(L, 0.0);
  for (std::size_t g = 0; g < params.theta.size(); ++g) {
    const double w = params.pi(g, static_cast<std::size_t>(user)) * params.theta[g];
    for (std::size_t l = 0; l < L; ++l) scores[l] += params.phi(g, l) * w;
  }
  return rank_scores(scores, L);
}

std::vector<Scored> score_activities(const UemParams& params, int user,
                                     const std::vector<bool>& known) {
  check_user(params, user, known);
  const auto W = static_cast<std::size_t>(params.dims().words);
  std::vector<double> scores(W, 0.0);
  for (std::size_t g = 0; g < params.theta.size(); ++g) {
    const double w = params.pi(g, static_cast<std::size_t>(user)) * params.theta[g];
    for (std::size_t v = 0; v < W; ++v) scores[v] += params.sigma(g, v) * w;
  }
  return rank_scores(scores, W);
}

std::vector<Scored> score_popularity(const UemParams& params) {
  return recommend_spots(params, params.theta, static_cast<std::size_t>(params.dims().spots));
}

double item_score(const UemParams& params, int group, const Item& item, Method method) {
  check_group(params, group);
  const auto g = static_cast<std::size_t>(group);
  const Dims d = params.dims();
  auto spot_term = [&]() {
    if (!item.spot) throw RecommendError("item has no spot");
    if (*item.spot < 0 || *item.spot >= d.spots) throw RecommendError("unknown spot index");
    return params.phi(g, static_cast<std::size_t>(*item.spot));
  };
  auto word_term = [&]() {
    double p = 1.0;
    for (int w : item.words) {
      if (w < 0 || w >= d.words) throw RecommendError("unknown word index");
      p *= params.sigma(g, static_cast<std::size_t>(w));
    }
    return p;
  };
  switch (method) {
    case Method::Al:
      return spot_term();
    case Method::Wtol:
      if (item.words.empty()) throw RecommendError("wtol item needs at least one word");
      return word_term();
    case Method::Wl:
      return spot_term() * word_term();
    case Method::Base:
      break;
  }
  throw RecommendError("method base does not score items");
}

double rank_quantile(const UemParams& params, int group, const Item& item,
                     const Catalog& catalog) {
  if (catalog.items.empty()) throw RecommendError("empty catalog");
  const double s = item_score(params, group, item, catalog.method);
  std::size_t greater = 0;
  for (const auto& other : catalog.items) {
    greater += item_score(params, group, other, catalog.method) > s;
  }
  const std::size_t n = catalog.size();
  const std::size_t rank = std::min(greater + 1, n);
  return static_cast<double>(n + 1 - rank) / static_cast<double>(n);
}

double rank_quantile_mc(const UemParams& params, int group, const Item& item,
                        const Catalog& catalog, std::size_t m, Rng& rng) {
  if (catalog.items.empty()) throw RecommendError("empty catalog");
  if (m == 0) throw RecommendError("subcatalog size must be positive");
  m = std::min(m, catalog.size());
  const double s = item_score(params, group, item, catalog.method);
  std::size_t greater = 0;
  for (std::size_t i : sample_without_replacement(catalog.size(), m, rng)) {
    greater += item_score(params, group, catalog.items[i], catalog.method) > s;
  }
  // Not clamped: when every sampled item beats the query the estimate is 0,
  // which keeps the estimator unbiased and still reads as the lowest bucket.
  return static_cast<double>(m - greater) / static_cast<double>(m);
}

RankIndex::RankIndex(const UemParams& params, const Catalog& catalog)
    : params_(&params), catalog_(&catalog) {
  if (catalog.items.empty()) throw RecommendError("empty catalog");
  if (catalog.method == Method::Base) throw RecommendError("method base has no rating catalog");
  const int G = params.num_groups();
  raw_.resize(static_cast<std::size_t>(G));
  sorted_.resize(static_cast<std::size_t>(G));
  for (int g = 0; g < G; ++g) {
    auto& raw = raw_[static_cast<std::size_t>(g)];
    raw.reserve(catalog.size());
    for (const auto& item : catalog.items) raw.push_back(item_score(params, g, item, catalog.method));
    auto& sorted = sorted_[static_cast<std::size_t>(g)];
    sorted = raw;
    std::sort(sorted.begin(), sorted.end());
  }
}

std::size_t RankIndex::rank(int group, double score) const {
  const auto& sorted = sorted_.at(static_cast<std::size_t>(group));
  const auto greater =
      static_cast<std::size_t>(sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), score));
  return std::min(greater + 1, sorted.size());
}

double RankIndex::quantile(int group, double score) const {
  const std::size_t n = size();
  return static_cast<double>(n + 1 - rank(group, score)) / static_cast<double>(n);
}

double RankIndex::quantile_mc(int group, double score, std::size_t m, Rng& rng) const {
  if (m == 0) throw RecommendError("subcatalog size must be positive");
  const auto& raw = raw_.at(static_cast<std::size_t>(group));
  m = std::min(m, raw.size());
  std::size_t greater = 0;
  for (std::size_t i : sample_without_replacement(raw.size(), m, rng)) greater += raw[i] > score;
  return static_cast<double>(m - greater) / static_cast<double>(m);
}

std::vector<double> RankIndex::likelihoods(const RatedItem& rated, const RatingDistribution& dist,
                                           const PosteriorSettings& settings) const {
  if (!valid_rating(rated.score)) throw RatingError("rating outside -2..2");
  const int G = params_->num_groups();
  const bool exact = settings.mode == QuantileMode::Exact ||
                     (settings.mode == QuantileMode::Auto && size() <= settings.exact_limit);
  std::vector<double> out(static_cast<std::size_t>(G));
  std::vector<double> samples;
  for (int g = 0; g < G; ++g) {
    const double s = item_score(*params_, g, rated.item, catalog_->method);
    if (exact) {
      out[static_cast<std::size_t>(g)] =
          rating_likelihood(quantile(g, s), dist, rated.score, settings.floor);
    } else {
      // Seeded per (item, group) so the evidence of an item does not depend
      // on what else was rated with it.
      Rng rng(item_seed(settings.seed, rated.item, g));
      samples.clear();
      for (int i = 0; i < settings.mc_resamples; ++i) {
        samples.push_back(quantile_mc(g, s, settings.mc_size, rng));
      }
      out[static_cast<std::size_t>(g)] =
          rating_likelihood(samples, dist, rated.score, settings.floor);
    }
  }
  return out;
}

std::vector<double> group_posterior(const RankIndex& index, const std::vector<RatedItem>& ratings,
                                    const RatingDistribution& dist, std::vector<double> prior,
                                    const PosteriorSettings& settings) {
  const UemParams& params = index.params();
  if (prior.empty()) prior = params.theta;
  if (prior.size() != params.theta.size()) throw RecommendError("prior has the wrong size");
  prior = normalized(std::move(prior));
  if (!(settings.floor > 0.0 && settings.floor < 0.2)) {
    throw RecommendError("likelihood floor must lie in (0, 0.2)");
  }
  std::vector<double> logp(prior.size());
  for (std::size_t g = 0; g < prior.size(); ++g) {
    logp[g] = prior[g] > 0.0 ? std::log(prior[g]) : -std::numeric_limits<double>::infinity();
  }
  for (const auto& r : ratings) {
    const auto lik = index.likelihoods(r, dist, settings);
    for (std::size_t g = 0; g < prior.size(); ++g) logp[g] += std::log(lik[g]);
  }
  const double hi = *std::max_element(logp.begin(), logp.end());
  std::vector<double> post(prior.size());
  double total = 0.0;
  for (std::size_t g = 0; g < post.size(); ++g) {
    post[g] = std::exp(logp[g] - hi);
    total += post[g];
  }
  for (auto& x : post) x /= total;
  return post;
}

RatingSession start_session(const UemParams& params, std::string session_id, Method method,
                            std::size_t catalog_size) {
  if (method == Method::Base) throw RecommendError("rating sessions need al, wtol or wl");
  RatingSession s;
  s.session_id = std::move(session_id);
  s.method = method;
  s.posterior = params.theta;
  s.catalog_size = catalog_size;
  return s;
}

RatingSession update_session(const RatingSession& session,
                             const std::vector<RatedItem>& new_ratings, const RankIndex& index,
                             const RatingDistribution& dist, const PosteriorSettings& settings) {
  RatingSession next = session;
  if (new_ratings.empty()) return next;
  next.posterior = group_posterior(index, new_ratings, dist, session.posterior, settings);
  next.history.insert(next.history.end(), new_ratings.begin(), new_ratings.end());
  return next;
}

std::vector<Scored> recommend_spots(const UemParams& params, const std::vector<double>& posterior,
                                    std::size_t k) {
  if (posterior.size() != params.theta.size()) throw RecommendError("posterior has the wrong size");
  const auto L = static_cast<std::size_t>(params.dims().spots);
  std::vector<double> scores(L, 0.0);
  for (std::size_t g = 0; g < posterior.size(); ++g) {
    for (std::size_t l = 0; l < L; ++l) scores[l] += params.phi(g, l) * posterior[g];
  }
  return rank_scores(scores, k);
}

std::vector<ScoredPair> recommend_pairs(const UemParams& params,
                                        const std::vector<double>& posterior, std::size_t k) {
  if (posterior.size() != params.theta.size()) throw RecommendError("posterior has the wrong size");
  const auto L = static_cast<std::size_t>(params.dims().spots);
  const auto W = static_cast<std::size_t>(params.dims().words);
  std::vector<double> scores(L * W, 0.0);
  for (std::size_t g = 0; g < posterior.size(); ++g) {
    for (std::size_t l = 0; l < L; ++l) {
      const double a = params.phi(g, l) * posterior[g];
      for (std::size_t w = 0; w < W; ++w) scores[l * W + w] += a * params.sigma(g, w);
    }
  }
  std::vector<ScoredPair> out;
  for (const auto& s : rank_scores(scores, k)) {
    const auto i = static_cast<std::size_t>(s.index);
    out.push_back({static_cast<int>(i / W), static_cast<int>(i % W), s.score});
  }
  return out;
}

std::vector<Item> select_items_for_rating(const UemParams& params,
                                          const std::vector<double>& posterior,
                                          const Catalog& catalog,
                                          const std::vector<std::string>& already_rated,
                                          std::size_t count) {
  const std::unordered_set<std::string> rated(already_rated.begin(), already_rated.end());
  std::vector<std::size_t> candidates;
  std::vector<double> scores;
  for (std::size_t i = 0; i < catalog.items.size(); ++i) {
    const Item& item = catalog.items[i];
    if (rated.count(item.image_id)) continue;
    double s = 0.0;
    for (std::size_t g = 0; g < posterior.size(); ++g) {
      s += posterior[g] * item_score(params, static_cast<int>(g), item, catalog.method);
    }
    candidates.push_back(i);
    scores.push_back(s);
  }
  const auto ranked = rank_scores(scores, scores.size());
  std::vector<Item> out;
  const std::size_t m = ranked.size();
  if (m == 0 || count == 0) return out;
  if (m <= count) {
    for (const auto& r : ranked) out.push_back(catalog.items[candidates[static_cast<std::size_t>(r.index)]]);
    return out;
  }
  // Evenly spaced positions: top, quartiles, bottom for count = 5.
  std::vector<std::size_t> positions;
  for (std::size_t i = 0; i < count; ++i) {
    positions.push_back(count == 1 ? 0 : i * (m - 1) / (count - 1));
  }
  positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
  for (std::size_t p : positions) {
    out.push_back(catalog.items[candidates[static_cast<std::size_t>(ranked[p].index)]]);
  }
  return out;
}

}  // namespace uem

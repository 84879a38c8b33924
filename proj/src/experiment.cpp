#include "uem/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <thread>
#include <unordered_set>

#include <json.hpp>

namespace uem {
namespace {

using json = nlohmann::json;

std::vector<int> sorted_unique(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

Item spot_item(int l) { return Item{l, {}, "l" + std::to_string(l)}; }
Item word_item(int w) { return Item{std::nullopt, {w}, "w" + std::to_string(w)}; }

std::string pair_id(int spot, const std::vector<int>& words) {
  std::string id = "x" + std::to_string(spot);
  for (int w : words) id += "." + std::to_string(w);
  return id;
}

// Distinct values of a set in ascending order, picked uniformly.
template <typename T>
T pick_one(const std::vector<T>& v, Rng& rng) {
  return v[rng.below(v.size())];
}

std::vector<int> rank_spots(const std::vector<Scored>& scored, std::size_t k) {
  std::vector<int> out;
  for (std::size_t i = 0; i < scored.size() && i < k; ++i) out.push_back(scored[i].index);
  return out;
}

Method method_of(Recommender r) {
  switch (r) {
    case Recommender::Al: return Method::Al;
    case Recommender::Wtol: return Method::Wtol;
    case Recommender::Wl: return Method::Wl;
    default: return Method::Base;
  }
}

struct MethodRun {
  std::vector<UserScore> rows;
  RunSummary summary;
};

struct RunOutput {
  std::vector<MethodRun> methods;
};

RunOutput evaluate_run(const ExperimentConfig& cfg, const Corpus& corpus, int run,
                       const RatingDistribution& dist) {
  const std::uint64_t run_seed = mix64(cfg.seed + static_cast<std::uint64_t>(run));
  const SplitResult parts = split(corpus, cfg.split, cfg.ratio, run_seed);

  TrainConfig tc = cfg.train;
  tc.seed = mix64(run_seed ^ 0x7a1eULL);
  tc.trace_interval = 0;
  const UemParams params = fit(parts.train, tc);
  const std::vector<bool> known = users_present(parts.train);
  const double ppl_l = perplexity_locations(params, parts.test, known);
  const double ppl_w = parts.test.num_tokens() > 0 ? perplexity_words(params, parts.test, known) : 0.0;

  // Per-user record lists.
  const auto U = static_cast<std::size_t>(corpus.users().size());
  std::vector<std::vector<IndexedRecord>> train_of(U), test_of(U);
  for (const auto& r : parts.train.records()) train_of[static_cast<std::size_t>(r.user)].push_back(r);
  for (const auto& r : parts.test.records()) test_of[static_cast<std::size_t>(r.user)].push_back(r);

  const std::vector<Item> observed = observed_items(parts.train);
  const int kmax = *std::max_element(cfg.ks.begin(), cfg.ks.end());
  const auto L = static_cast<std::size_t>(params.dims().spots);

  PosteriorSettings ps = cfg.posterior;
  ps.seed = run_seed;

  RunOutput out;
  for (Recommender method : cfg.methods) {
    MethodRun mr;
    mr.summary.run = run;
    mr.summary.seed = run_seed;
    mr.summary.perplexity_locations = ppl_l;
    mr.summary.perplexity_words = ppl_w;

    const Method m = method_of(method);
    std::optional<Catalog> catalog;
    std::optional<RankIndex> index;
    if (m != Method::Base) {
      catalog = build_catalog(observed, m);
      index.emplace(params, *catalog);
    }

    const std::size_t nk = cfg.ks.size();
    std::vector<std::vector<double>> f_per_k(nk);
    std::vector<PrfScore> sums(nk);
    for (std::size_t u = 0; u < U; ++u) {
      if (test_of[u].empty()) continue;
      std::unordered_set<int> relevant;
      for (const auto& r : test_of[u]) relevant.insert(r.spot);
      if (relevant.empty()) {
        ++mr.summary.users_excluded;
        continue;
      }
      Rng rng(mix64(run_seed ^ fnv1a(to_string(method)) ^ mix64(u + 1)));

      std::vector<int> ranked;
      bool skip = false;
      switch (method) {
        case Recommender::Popularity:
          ranked = rank_spots(score_popularity(params), static_cast<std::size_t>(kmax));
          break;
        case Recommender::Random: {
          for (std::size_t i : sample_without_replacement(L, std::min<std::size_t>(L, kmax), rng)) {
            ranked.push_back(static_cast<int>(i));
          }
          break;
        }
        case Recommender::Base:
          if (cfg.split == SplitMode::Time && known[u]) {
            ranked = rank_spots(score_locations(params, static_cast<int>(u), known),
                                static_cast<std::size_t>(kmax));
          } else {
            ranked = rank_spots(score_popularity(params), static_cast<std::size_t>(kmax));
          }
          break;
        default: {
          std::vector<RatedItem> evidence;
          if (cfg.split == SplitMode::Time) {
            evidence = ratings_from_history(train_of[u], m, dist, rng);
          } else {
            try {
              evidence = select_startup_items(test_of[u], *catalog, dist, rng);
            } catch (const RecommendError&) {
              // Has experienced nearly the whole catalog; nothing to present.
              skip = true;
              break;
            }
          }
          const auto posterior = group_posterior(*index, evidence, dist, {}, ps);
          ranked = rank_spots(recommend_spots(params, posterior, static_cast<std::size_t>(kmax)),
                              static_cast<std::size_t>(kmax));
          break;
        }
      }

      if (skip) {
        ++mr.summary.users_excluded;
        continue;
      }
      ++mr.summary.users_evaluated;
      for (std::size_t i = 0; i < nk; ++i) {
        const PrfScore s =
            precision_recall_f_at_k(ranked, relevant, static_cast<std::size_t>(cfg.ks[i]));
        mr.rows.push_back({run, corpus.users().name(static_cast<int>(u)), cfg.ks[i], s});
        f_per_k[i].push_back(s.f);
        sums[i].precision += s.precision;
        sums[i].recall += s.recall;
        sums[i].f += s.f;
      }
    }
    const double n = static_cast<double>(mr.summary.users_evaluated);
    for (std::size_t i = 0; i < nk; ++i) {
      PrfScore avg;
      if (n > 0) avg = {sums[i].precision / n, sums[i].recall / n, sums[i].f / n};
      mr.summary.averages.push_back(avg);
      mr.summary.gini.push_back(f_per_k[i].empty() ? 0.0 : gini(f_per_k[i]));
    }
    out.methods.push_back(std::move(mr));
  }
  return out;
}

}  // namespace

std::string_view to_string(Recommender r) {
  switch (r) {
    case Recommender::Base: return "base";
    case Recommender::Al: return "al";
    case Recommender::Wtol: return "wtol";
    case Recommender::Wl: return "wl";
    case Recommender::Popularity: return "popularity";
    case Recommender::Random: return "random";
  }
  return "?";
}

Recommender parse_recommender(std::string_view name) {
  for (Recommender r : {Recommender::Base, Recommender::Al, Recommender::Wtol, Recommender::Wl,
                        Recommender::Popularity, Recommender::Random}) {
    if (to_string(r) == name) return r;
  }
  throw RecommendError("unknown method '" + std::string(name) +
                       "' (expected base, al, wtol, wl, popularity or random)");
}

std::vector<RatedItem> select_startup_items(const std::vector<IndexedRecord>& user_records,
                                            const Catalog& catalog,
                                            const RatingDistribution& dist, Rng& rng) {
  if (user_records.empty()) throw RecommendError("user has no records to start from");
  RatedItem positive;
  std::vector<Item> unexperienced;
  switch (catalog.method) {
    case Method::Al: {
      std::vector<int> spots;
      for (const auto& r : user_records) spots.push_back(r.spot);
      spots = sorted_unique(std::move(spots));
      positive.item = spot_item(pick_one(spots, rng));
      const std::set<int> seen(spots.begin(), spots.end());
      for (const auto& it : catalog.items) {
        if (!seen.count(*it.spot)) unexperienced.push_back(it);
      }
      break;
    }
    case Method::Wtol: {
      std::vector<int> words;
      for (const auto& r : user_records) words.insert(words.end(), r.words.begin(), r.words.end());
      words = sorted_unique(std::move(words));
      if (words.empty()) throw RecommendError("user has no activity words to start from");
      positive.item = word_item(pick_one(words, rng));
      const std::set<int> seen(words.begin(), words.end());
      for (const auto& it : catalog.items) {
        if (!seen.count(it.words.front())) unexperienced.push_back(it);
      }
      break;
    }
    case Method::Wl: {
      std::vector<std::pair<int, std::vector<int>>> pairs;
      std::set<int> spots;
      for (const auto& r : user_records) {
        pairs.emplace_back(r.spot, sorted_unique(r.words));
        spots.insert(r.spot);
      }
      std::sort(pairs.begin(), pairs.end());
      pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
      const auto& [spot, words] = pick_one(pairs, rng);
      const Item* known = nullptr;
      for (const auto& it : catalog.items) {
        if (it.spot == spot && it.words == words) known = &it;
      }
      positive.item = known ? *known : Item{spot, words, pair_id(spot, words)};
      for (const auto& it : catalog.items) {
        if (!spots.count(*it.spot)) unexperienced.push_back(it);
      }
      break;
    }
    case Method::Base:
      return {};
  }
  if (unexperienced.size() < 4) {
    throw RecommendError("fewer than four unexperienced items to present");
  }
  positive.score = dist.sample(kPositiveRatings, rng);
  std::vector<RatedItem> out{positive};
  for (std::size_t i : sample_without_replacement(unexperienced.size(), 4, rng)) {
    out.push_back({unexperienced[i], dist.sample(kNegativeRatings, rng)});
  }
  return out;
}

std::vector<RatedItem> ratings_from_history(const std::vector<IndexedRecord>& user_records,
                                            Method method, const RatingDistribution& dist,
                                            Rng& rng) {
  std::vector<Item> items;
  switch (method) {
    case Method::Base:
      return {};
    case Method::Al: {
      std::vector<int> spots;
      for (const auto& r : user_records) spots.push_back(r.spot);
      for (int l : sorted_unique(std::move(spots))) items.push_back(spot_item(l));
      break;
    }
    case Method::Wtol: {
      std::vector<int> words;
      for (const auto& r : user_records) words.insert(words.end(), r.words.begin(), r.words.end());
      for (int w : sorted_unique(std::move(words))) items.push_back(word_item(w));
      break;
    }
    case Method::Wl: {
      std::set<std::pair<int, std::vector<int>>> pairs;
      for (const auto& r : user_records) pairs.emplace(r.spot, sorted_unique(r.words));
      for (const auto& [spot, words] : pairs) items.push_back(Item{spot, words, pair_id(spot, words)});
      break;
    }
  }
  std::vector<RatedItem> out;
  for (auto& item : items) out.push_back({std::move(item), dist.sample(kPositiveRatings, rng)});
  return out;
}

void ExperimentConfig::validate() const {
  if (methods.empty()) throw RecommendError("no methods to evaluate");
  if (!(ratio > 0.0 && ratio < 1.0)) throw CorpusError("ratio must lie in (0, 1)");
  if (ks.empty()) throw RecommendError("no k values");
  for (int k : ks) {
    if (k < 1) throw RecommendError("k must be at least 1");
  }
  if (runs < 1) throw RecommendError("runs must be at least 1");
  if (threads < 0) throw RecommendError("threads must be nonnegative");
  train.resolved();
}

std::vector<EvalReport> run_experiments(const ExperimentConfig& config, const Corpus& corpus) {
  config.validate();
  const RatingDistribution dist =
      make_rating_distribution(config.distribution, config.distribution_sigma);

  std::vector<RunOutput> outputs(static_cast<std::size_t>(config.runs));
  std::vector<std::exception_ptr> errors(outputs.size());
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int run = next++; run < config.runs; run = next++) {
      try {
        outputs[static_cast<std::size_t>(run)] = evaluate_run(config, corpus, run, dist);
      } catch (...) {
        errors[static_cast<std::size_t>(run)] = std::current_exception();
      }
    }
  };
  int threads = config.threads > 0 ? config.threads
                                   : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, config.runs);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<EvalReport> reports;
  for (std::size_t mi = 0; mi < config.methods.size(); ++mi) {
    EvalReport rep;
    rep.variant = config.train.variant;
    rep.method = config.methods[mi];
    rep.split = config.split;
    rep.ratio = config.ratio;
    rep.seed = config.seed;
    rep.runs = config.runs;
    rep.ks = config.ks;
    rep.distribution = config.distribution == "exponential"
                           ? "exponential(" + json(config.distribution_sigma).dump() + ")"
                           : config.distribution;
    const std::size_t nk = config.ks.size();
    std::vector<PrfScore> sums(nk);
    std::vector<std::size_t> counts(nk, 0);
    rep.gini.assign(nk, 0.0);
    for (auto& out : outputs) {
      MethodRun& mr = out.methods[mi];
      for (const auto& row : mr.rows) {
        const auto i = static_cast<std::size_t>(
            std::find(config.ks.begin(), config.ks.end(), row.k) - config.ks.begin());
        sums[i].precision += row.score.precision;
        sums[i].recall += row.score.recall;
        sums[i].f += row.score.f;
        ++counts[i];
      }
      for (std::size_t i = 0; i < nk; ++i) rep.gini[i] += mr.summary.gini[i] / config.runs;
      rep.perplexity_locations += mr.summary.perplexity_locations / config.runs;
      rep.perplexity_words += mr.summary.perplexity_words / config.runs;
      rep.per_user.insert(rep.per_user.end(), mr.rows.begin(), mr.rows.end());
      rep.per_run.push_back(mr.summary);
    }
    for (std::size_t i = 0; i < nk; ++i) {
      const double n = static_cast<double>(counts[i]);
      rep.averages.push_back(n > 0 ? PrfScore{sums[i].precision / n, sums[i].recall / n, sums[i].f / n}
                                   : PrfScore{});
    }
    reports.push_back(std::move(rep));
  }
  return reports;
}

EvalReport run_experiment(const ExperimentConfig& config, const Corpus& corpus) {
  if (config.methods.size() != 1) throw RecommendError("run_experiment takes exactly one method");
  return run_experiments(config, corpus).front();
}

CityAverage average_cities(std::span<const EvalReport> per_city) {
  if (per_city.empty()) throw RecommendError("no city reports to average");
  CityAverage avg;
  avg.method = per_city.front().method;
  avg.split = per_city.front().split;
  avg.ratio = per_city.front().ratio;
  avg.ks = per_city.front().ks;
  avg.cities = per_city.size();
  avg.averages.assign(avg.ks.size(), {});
  avg.gini.assign(avg.ks.size(), 0.0);
  const double n = static_cast<double>(per_city.size());
  for (const auto& rep : per_city) {
    if (rep.ks != avg.ks || rep.method != avg.method) {
      throw RecommendError("city reports differ in method or k list");
    }
    for (std::size_t i = 0; i < avg.ks.size(); ++i) {
      avg.averages[i].precision += rep.averages[i].precision / n;
      avg.averages[i].recall += rep.averages[i].recall / n;
      avg.averages[i].f += rep.averages[i].f / n;
      avg.gini[i] += rep.gini[i] / n;
    }
  }
  return avg;
}

namespace {

json prf_json(const std::vector<int>& ks, const std::vector<PrfScore>& scores) {
  json j = json::object();
  for (std::size_t i = 0; i < ks.size(); ++i) {
    j[std::to_string(ks[i])] = {{"precision", scores[i].precision},
                                {"recall", scores[i].recall},
                                {"f", scores[i].f}};
  }
  return j;
}

json per_k_json(const std::vector<int>& ks, const std::vector<double>& values) {
  json j = json::object();
  for (std::size_t i = 0; i < ks.size(); ++i) j[std::to_string(ks[i])] = values[i];
  return j;
}

}  // namespace

void write_report_json(std::ostream& out, std::span<const EvalReport> reports,
                       std::span<const CityAverage> cities) {
  json root;
  root["reports"] = json::array();
  for (const auto& rep : reports) {
    json j;
    if (!rep.city.empty()) j["city"] = rep.city;
    j["metadata"] = {{"variant", std::string(to_string(rep.variant))},
                     {"method", std::string(to_string(rep.method))},
                     {"split", std::string(to_string(rep.split))},
                     {"ratio", rep.ratio},
                     {"seed", rep.seed},
                     {"runs", rep.runs},
                     {"ks", rep.ks},
                     {"distribution", rep.distribution}};
    j["averages"] = prf_json(rep.ks, rep.averages);
    j["gini"] = per_k_json(rep.ks, rep.gini);
    j["perplexity"] = {{"locations", rep.perplexity_locations}, {"words", rep.perplexity_words}};
    json runs = json::array();
    for (const auto& r : rep.per_run) {
      runs.push_back({{"run", r.run},
                      {"seed", r.seed},
                      {"averages", prf_json(rep.ks, r.averages)},
                      {"gini", per_k_json(rep.ks, r.gini)},
                      {"perplexity", {{"locations", r.perplexity_locations},
                                      {"words", r.perplexity_words}}},
                      {"users_evaluated", r.users_evaluated},
                      {"users_excluded", r.users_excluded}});
    }
    j["per_run"] = std::move(runs);
    json users = json::array();
    for (const auto& row : rep.per_user) {
      users.push_back({{"run", row.run},
                       {"user", row.user},
                       {"k", row.k},
                       {"precision", row.score.precision},
                       {"recall", row.score.recall},
                       {"f", row.score.f}});
    }
    j["per_user"] = std::move(users);
    root["reports"].push_back(std::move(j));
  }
  if (!cities.empty()) {
    json avg = json::array();
    for (const auto& c : cities) {
      avg.push_back({{"method", std::string(to_string(c.method))},
                     {"split", std::string(to_string(c.split))},
                     {"ratio", c.ratio},
                     {"cities", c.cities},
                     {"averages", prf_json(c.ks, c.averages)},
                     {"gini", per_k_json(c.ks, c.gini)}});
    }
    root["cities_average"] = std::move(avg);
  }
  out << root.dump(2) << "\n";
}

void write_report_csv(std::ostream& out, std::span<const EvalReport> reports) {
  out << "city,variant,method,split,ratio,run,user,k,precision,recall,f\n";
  for (const auto& rep : reports) {
    for (const auto& row : rep.per_user) {
      std::string user = row.user;
      if (user.find_first_of(",\"\n") != std::string::npos) {
        std::string q = "\"";
        for (char c : user) q += c == '"' ? std::string("\"\"") : std::string(1, c);
        user = q + "\"";
      }
      out << rep.city << ',' << to_string(rep.variant) << ',' << to_string(rep.method) << ','
          << to_string(rep.split) << ',' << json(rep.ratio).dump() << ',' << row.run << ','
          << user << ',' << row.k << ',' << json(row.score.precision).dump() << ','
          << json(row.score.recall).dump() << ',' << json(row.score.f).dump() << '\n';
    }
  }
}

}  // namespace uem

#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "support/synthetic.hpp"
#include "uem/experiment.hpp"

using namespace uem;

namespace {

IndexedRecord rec(int u, int l, std::vector<int> w, int month = 0) {
  IndexedRecord r;
  r.user = u;
  r.spot = l;
  r.words = std::move(w);
  r.time_slot = month;
  return r;
}

Catalog spots_catalog(int n) {
  std::vector<Item> observed;
  for (int l = 0; l < n; ++l) observed.push_back(Item{l, {l % 3}, ""});
  return build_catalog(observed, Method::Al);
}

Corpus cold_corpus(std::size_t n, std::uint64_t seed) {
  const UemParams p = testing::cold_start_params(3, 60, 45, 36);
  Rng rng(seed);
  return generate_corpus(p, n, {2, 4}, rng).corpus;
}

ExperimentConfig quick_config() {
  ExperimentConfig c;
  c.methods = {Recommender::Al, Recommender::Popularity};
  c.split = SplitMode::User;
  c.runs = 3;
  c.ks = {5, 10};
  c.train.hyper.num_groups = 3;
  c.train.iterations = 30;
  c.threads = 1;
  return c;
}

std::string json_of(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  write_report_json(out, reports);
  return out.str();
}

}  // namespace

TEST_SUITE("experiment") {
  TEST_CASE("start-up items for spots") {
    const RatingDistribution d = normal_rating_distribution();
    const Catalog c = spots_catalog(10);
    const std::vector<IndexedRecord> history{rec(0, 1, {0}), rec(0, 4, {1}), rec(0, 1, {2})};
    Rng rng(7);
    const auto items = select_startup_items(history, c, d, rng);
    REQUIRE(items.size() == 5);
    CHECK((*items[0].item.spot == 1 || *items[0].item.spot == 4));
    CHECK((items[0].score == 1 || items[0].score == 2));
    std::set<int> negatives;
    for (std::size_t i = 1; i < 5; ++i) {
      const int l = *items[i].item.spot;
      CHECK((l != 1 && l != 4));
      CHECK((items[i].score >= -2 && items[i].score <= 0));
      negatives.insert(l);
      CHECK(c.find(items[i].item.image_id) != nullptr);
    }
    CHECK(negatives.size() == 4);

    Rng again(7);
    CHECK(select_startup_items(history, c, d, again) == items);

    Rng r2(1);
    CHECK_THROWS_AS(select_startup_items(history, spots_catalog(5), d, r2), RecommendError);
    CHECK_THROWS_AS(select_startup_items({}, c, d, r2), RecommendError);
  }

  TEST_CASE("start-up items for words and pairs") {
    const RatingDistribution d = normal_rating_distribution();
    std::vector<Item> observed;
    for (int l = 0; l < 8; ++l) observed.push_back(Item{l, {l, l + 1}, ""});
    const Catalog words = build_catalog(observed, Method::Wtol);
    const Catalog pairs = build_catalog(observed, Method::Wl);
    const std::vector<IndexedRecord> history{rec(0, 2, {3, 2}), rec(0, 5, {2})};
    Rng rng(3);
    const auto w = select_startup_items(history, words, d, rng);
    CHECK(w[0].item.words.size() == 1);
    for (std::size_t i = 1; i < w.size(); ++i) {
      const int x = w[i].item.words.front();
      CHECK((x != 2 && x != 3));
    }

    const auto p = select_startup_items(history, pairs, d, rng);
    REQUIRE(p.size() == 5);
    // The pair (2, {2, 3}) is in the catalog, the pair (5, {2}) is not.
    if (*p[0].item.spot == 2) {
      CHECK(pairs.find(p[0].item.image_id) != nullptr);
    } else {
      CHECK(p[0].item.image_id == "x5.2");
    }
    for (std::size_t i = 1; i < 5; ++i) CHECK((*p[i].item.spot != 2 && *p[i].item.spot != 5));
  }

  TEST_CASE("ratings from history") {
    const RatingDistribution d = normal_rating_distribution();
    const std::vector<IndexedRecord> history{rec(0, 2, {3, 1}), rec(0, 5, {1}), rec(0, 2, {1, 3})};
    Rng rng(2);
    const auto al = ratings_from_history(history, Method::Al, d, rng);
    REQUIRE(al.size() == 2);
    CHECK(al[0].item.image_id == "l2");
    CHECK(al[1].item.image_id == "l5");
    for (const auto& r : al) CHECK((r.score == 1 || r.score == 2));
    CHECK(ratings_from_history(history, Method::Wtol, d, rng).size() == 2);
    const auto wl = ratings_from_history(history, Method::Wl, d, rng);
    REQUIRE(wl.size() == 2);
    CHECK(wl[0].item.words == std::vector<int>{1, 3});
    CHECK(ratings_from_history(history, Method::Base, d, rng).empty());
  }

  TEST_CASE("config validation") {
    ExperimentConfig c = quick_config();
    CHECK_NOTHROW(c.validate());
    c.ratio = 1.0;
    CHECK_THROWS(c.validate());
    c = quick_config();
    c.ks = {0};
    CHECK_THROWS(c.validate());
    c = quick_config();
    c.methods.clear();
    CHECK_THROWS(c.validate());
    CHECK(parse_recommender("popularity") == Recommender::Popularity);
    CHECK_THROWS(parse_recommender("magic"));
  }

  TEST_CASE("reports are deterministic and consistent") {
    const Corpus c = cold_corpus(1500, 4);
    ExperimentConfig cfg = quick_config();
    const auto a = run_experiments(cfg, c);
    cfg.threads = 3;
    const auto b = run_experiments(cfg, c);
    CHECK(json_of(a) == json_of(b));
    REQUIRE(a.size() == 2);
    CHECK(a[0].method == Recommender::Al);
    CHECK(a[1].method == Recommender::Popularity);

    for (const auto& rep : a) {
      CHECK(rep.per_run.size() == 3);
      for (std::size_t i = 0; i < rep.ks.size(); ++i) {
        double f = 0.0, n = 0.0;
        for (const auto& row : rep.per_user) {
          if (row.k != rep.ks[i]) continue;
          f += row.score.f;
          n += 1.0;
        }
        CHECK(n > 0);
        CHECK(std::abs(rep.averages[i].f - f / n) < 1e-12);
        double g = 0.0;
        for (const auto& r : rep.per_run) g += r.gini[i] / 3.0;
        CHECK(std::abs(rep.gini[i] - g) < 1e-12);
      }
      CHECK(rep.perplexity_locations > 1.0);
    }

    // Both methods see the same fits, so perplexities agree.
    CHECK(a[0].perplexity_locations == a[1].perplexity_locations);

    ExperimentConfig other = quick_config();
    other.seed = 99;
    CHECK(json_of(run_experiments(other, c)) != json_of(a));
  }

  TEST_CASE("every method runs under both splits") {
    const Corpus c = filter_min_pois(cold_corpus(700, 9), 2);
    for (SplitMode mode : {SplitMode::Time, SplitMode::User}) {
      ExperimentConfig cfg = quick_config();
      cfg.split = mode;
      cfg.runs = 1;
      cfg.methods = {Recommender::Base, Recommender::Al, Recommender::Wtol, Recommender::Wl,
                     Recommender::Popularity, Recommender::Random};
      const auto reps = run_experiments(cfg, c);
      REQUIRE(reps.size() == 6);
      for (const auto& r : reps) {
        for (const auto& s : r.averages) {
          CHECK((s.f >= 0.0 && s.f <= 1.0));
        }
        CHECK(r.per_run[0].users_evaluated > 0);
      }
    }
  }

  TEST_CASE("perfectly separated users are predicted exactly") {
    // Each user keeps returning to a single spot of their own.
    std::vector<IndexedRecord> recs;
    for (int u = 0; u < 3; ++u) {
      for (int m = 0; m < 10; ++m) {
        IndexedRecord r = rec(u, u, {u}, m);
        r.time = std::chrono::sys_days{std::chrono::year{2014} / (m + 1) / 1};
        recs.push_back(r);
      }
    }
    const Corpus c = Corpus::from_indexed(Vocabulary({"a", "b", "c"}), Vocabulary({"x", "y", "z"}),
                                          Vocabulary({"p", "q", "r"}), recs);
    ExperimentConfig cfg;
    // Only base: with three catalog items a rating of 1 lands in no group's bucket.
    cfg.methods = {Recommender::Base};
    cfg.split = SplitMode::Time;
    cfg.runs = 2;
    cfg.ks = {1};
    cfg.train.hyper.num_groups = 3;
    cfg.train.hyper.alpha = 0.1;
    cfg.train.iterations = 200;
    cfg.threads = 1;
    for (const auto& rep : run_experiments(cfg, c)) {
      CHECK(rep.averages[0].precision == doctest::Approx(1.0));
      CHECK(rep.averages[0].recall == doctest::Approx(1.0));
      CHECK(rep.averages[0].f == doctest::Approx(1.0));
      CHECK(rep.gini[0] == doctest::Approx(0.0));
    }
  }

  TEST_CASE("report writers and city averages") {
    EvalReport a;
    a.city = "north";
    a.method = Recommender::Al;
    a.ks = {5};
    a.averages = {PrfScore{0.2, 0.4, 0.2}};
    a.gini = {0.1};
    a.per_user = {UserScore{0, "u,1", 5, PrfScore{0.2, 0.4, 0.2}}};
    EvalReport b = a;
    b.city = "south";
    b.averages = {PrfScore{0.4, 0.6, 0.4}};
    b.gini = {0.3};
    const std::vector<EvalReport> both{a, b};
    const CityAverage avg = average_cities(both);
    CHECK(avg.cities == 2);
    CHECK(std::abs(avg.averages[0].f - 0.3) < 1e-15);
    CHECK(std::abs(avg.averages[0].recall - 0.5) < 1e-15);
    CHECK(std::abs(avg.gini[0] - 0.2) < 1e-15);

    EvalReport c = b;
    c.ks = {10};
    CHECK_THROWS(average_cities(std::vector<EvalReport>{a, c}));

    std::ostringstream js;
    const std::vector<CityAverage> cities{avg};
    write_report_json(js, both, cities);
    const auto j = nlohmann::json::parse(js.str());
    CHECK(j["reports"].size() == 2);
    CHECK(j["reports"][0]["city"] == "north");
    CHECK(j["reports"][0]["averages"]["5"]["f"] == 0.2);
    CHECK(j["reports"][1]["gini"]["5"] == 0.3);
    CHECK(j["cities_average"][0]["cities"] == 2);

    std::ostringstream csv;
    write_report_csv(csv, both);
    const std::string text = csv.str();
    CHECK(text.rfind("city,variant,method,split,ratio,run,user,k,precision,recall,f\n", 0) == 0);
    CHECK(text.find("north,B,al,time,0.0,0,\"u,1\",5,0.2,0.4,0.2\n") != std::string::npos);
  }
}

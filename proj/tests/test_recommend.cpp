#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "uem/recommend.hpp"

using namespace uem;

namespace {

// theta=(0.6,0.4), pi(u=0)=(0.5,0.2), phi(l=0)=(0.3,0.7).
UemParams worked_params() {
  UemParams p = uniform_params(Variant::B, 2, Dims{3, 4, 3, 12});
  p.theta = {0.6, 0.4};
  const double pi[2][3] = {{0.5, 0.3, 0.2}, {0.2, 0.5, 0.3}};
  const double phi[2][4] = {{0.3, 0.4, 0.2, 0.1}, {0.7, 0.1, 0.1, 0.1}};
  const double sigma[2][3] = {{0.2, 0.5, 0.3}, {0.6, 0.3, 0.1}};
  for (int g = 0; g < 2; ++g) {
    for (int u = 0; u < 3; ++u) p.pi(g, u) = pi[g][u];
    for (int l = 0; l < 4; ++l) p.phi(g, l) = phi[g][l];
    for (int w = 0; w < 3; ++w) p.sigma(g, w) = sigma[g][w];
  }
  p.validate();
  return p;
}

Catalog spot_catalog(int n) {
  Catalog c;
  c.method = Method::Al;
  for (int l = 0; l < n; ++l) c.items.push_back(Item{l, {}, "l" + std::to_string(l)});
  return c;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Bayes over both groups with ranks counted by hand and buckets read off the
// normal cdf directly.
std::vector<double> brute_posterior(const UemParams& p, const Catalog& c,
                                    const std::vector<RatedItem>& ratings, std::vector<double> prior,
                                    double eps) {
  const double cuts[4] = {normal_cdf(-1.5), normal_cdf(-0.5), normal_cdf(0.5), normal_cdf(1.5)};
  for (const auto& r : ratings) {
    for (int g = 0; g < p.num_groups(); ++g) {
      const double s = p.phi(g, *r.item.spot);
      int greater = 0;
      for (const auto& it : c.items) greater += p.phi(g, *it.spot) > s;
      const double N = static_cast<double>(c.size());
      const double q = (N + 1 - (greater + 1)) / N;
      int bucket = 2;
      for (int j = 3; j >= 0; --j) {
        if (q <= cuts[j]) bucket = j - 2;
      }
      prior[g] *= bucket == r.score ? 1 - 4 * eps : eps;
    }
  }
  const double z = std::accumulate(prior.begin(), prior.end(), 0.0);
  for (double& x : prior) x /= z;
  return prior;
}

UemParams six_spot_params() {
  UemParams p = uniform_params(Variant::B, 2, Dims{1, 6, 2, 12});
  p.theta = {0.35, 0.65};
  const double phi[2][6] = {{0.30, 0.25, 0.20, 0.12, 0.08, 0.05}, {0.02, 0.08, 0.10, 0.15, 0.25, 0.40}};
  for (int g = 0; g < 2; ++g)
    for (int l = 0; l < 6; ++l) p.phi(g, l) = phi[g][l];
  p.validate();
  return p;
}

}  // namespace

TEST_SUITE("recommend") {
  TEST_CASE("location and activity scores") {
    const UemParams p = worked_params();
    const auto locs = score_locations(p, 0);
    const auto l0 = std::find_if(locs.begin(), locs.end(), [](const Scored& s) { return s.index == 0; });
    REQUIRE(l0 != locs.end());
    CHECK(std::abs(l0->score - 0.146) < 1e-12);
    for (int u = 0; u < 3; ++u) {
      for (const auto& s : score_locations(p, u)) {
        double want = 0.0;
        for (int g = 0; g < 2; ++g) want += p.theta[g] * p.pi(g, u) * p.phi(g, s.index);
        CHECK(std::abs(s.score - want) < 1e-12);
      }
    }

    UemParams a = p;
    a.theta = {0.5, 0.5};
    a.pi(0, 0) = 0.4;
    a.pi(0, 1) = 0.4;
    a.pi(1, 0) = 0.1;
    a.pi(1, 1) = 0.6;
    const auto acts = score_activities(a, 0);
    const auto w0 = std::find_if(acts.begin(), acts.end(), [](const Scored& s) { return s.index == 0; });
    CHECK(std::abs(w0->score - 0.07) < 1e-12);

    const auto pop = score_popularity(p);
    CHECK(pop[0].index == 0);
    CHECK(std::abs(pop[0].score - (0.6 * 0.3 + 0.4 * 0.7)) < 1e-12);
  }

  TEST_CASE("single group ranks by phi alone") {
    UemParams p = uniform_params(Variant::B, 1, Dims{2, 5, 2, 12});
    const double phi[5] = {0.1, 0.3, 0.05, 0.25, 0.3};
    for (int l = 0; l < 5; ++l) p.phi(0, l) = phi[l];
    std::vector<int> order;
    for (const auto& s : score_locations(p, 1)) order.push_back(s.index);
    CHECK(order == std::vector<int>{1, 4, 3, 0, 2});
  }

  TEST_CASE("ranking ties break by index") {
    const auto r = rank_scores({1.0, 2.0, 2.0, 0.0}, 3);
    REQUIRE(r.size() == 3);
    CHECK(r[0] == Scored{1, 2.0});
    CHECK(r[1] == Scored{2, 2.0});
    CHECK(r[2] == Scored{0, 1.0});
    CHECK(rank_scores({1.0}, 10).size() == 1);

    const UemParams u = uniform_params(Variant::B, 2, Dims{1, 4, 1, 12});
    const auto spots = recommend_spots(u, {0.5, 0.5}, 10);
    REQUIRE(spots.size() == 4);
    for (int i = 0; i < 4; ++i) CHECK(spots[i].index == i);
  }

  TEST_CASE("unknown users are refused") {
    const UemParams p = worked_params();
    CHECK_THROWS_AS(score_locations(p, 1, {true, false, true}), UnknownUserError);
    CHECK_THROWS_AS(score_activities(p, 1, {true, false, true}), UnknownUserError);
    CHECK_NOTHROW(score_locations(p, 0, {true, false, true}));
    CHECK_THROWS_AS(score_locations(p, 3), RecommendError);
  }

  TEST_CASE("item scores per method") {
    const UemParams p = worked_params();
    const Item pair{0, {0}, "p0"};
    CHECK(item_score(p, 0, pair, Method::Wl) == doctest::Approx(0.3 * 0.2).epsilon(1e-15));
    CHECK(item_score(p, 0, pair, Method::Al) == 0.3);
    CHECK(item_score(p, 1, Item{std::nullopt, {0, 1}, "w"}, Method::Wtol) ==
          doctest::Approx(0.6 * 0.3).epsilon(1e-15));
    CHECK_THROWS_AS(item_score(p, 0, Item{std::nullopt, {}, "w"}, Method::Wtol), RecommendError);
    CHECK_THROWS_AS(item_score(p, 0, Item{9, {}, "l9"}, Method::Al), RecommendError);
    CHECK_THROWS_AS(item_score(p, 0, pair, Method::Base), RecommendError);
  }

  TEST_CASE("catalogs") {
    const std::vector<Item> observed{{2, {1, 0}, ""}, {0, {1}, ""}, {2, {1, 0}, ""}, {1, {}, ""}};
    const Catalog al = build_catalog(observed, Method::Al);
    REQUIRE(al.size() == 3);
    CHECK(al.items[0].image_id == "l0");
    CHECK(al.find("l2")->spot == 2);
    CHECK(al.find("l9") == nullptr);
    const Catalog wtol = build_catalog(observed, Method::Wtol);
    REQUIRE(wtol.size() == 2);
    CHECK(wtol.items[1].words == std::vector<int>{1});
    CHECK(wtol.items[1].image_id == "w1");
    const Catalog wl = build_catalog(observed, Method::Wl);
    CHECK(wl.size() == 3);
    CHECK(wl.items[0].image_id == "p0");
    CHECK_THROWS_AS(build_catalog(observed, Method::Base), RecommendError);
    CHECK(parse_method("wl") == Method::Wl);
    CHECK_THROWS_AS(parse_method("xx"), RecommendError);
  }

  TEST_CASE("rank quantiles") {
    UemParams p = uniform_params(Variant::B, 1, Dims{1, 10, 1, 12});
    for (int l = 0; l < 10; ++l) p.phi(0, l) = (10.0 - l) / 55.0;
    const Catalog c = spot_catalog(10);
    CHECK(rank_quantile(p, 0, c.items[0], c) == 1.0);
    CHECK(rank_quantile(p, 0, c.items[9], c) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(rank_quantile(p, 0, c.items[4], c) == doctest::Approx(0.6).epsilon(1e-15));
    Rng rng(4);
    for (int l = 0; l < 10; ++l) {
      CHECK(rank_quantile_mc(p, 0, c.items[l], c, 10, rng) == rank_quantile(p, 0, c.items[l], c));
    }
    const RankIndex idx(p, c);
    CHECK(idx.quantile(0, p.phi(0, 4)) == rank_quantile(p, 0, c.items[4], c));
    // Items all tying with the query share the top rank.
    const UemParams flat = uniform_params(Variant::B, 1, Dims{1, 10, 1, 12});
    CHECK(rank_quantile(flat, 0, c.items[3], c) == 1.0);
    CHECK_THROWS_AS(rank_quantile(p, 0, c.items[0], Catalog{}), RecommendError);
  }

  TEST_CASE("posterior follows Bayes") {
    const UemParams p = six_spot_params();
    const Catalog c = spot_catalog(6);
    const RankIndex idx(p, c);
    const RatingDistribution d = normal_rating_distribution();
    PosteriorSettings exact;
    exact.mode = QuantileMode::Exact;

    // Spot 0 is top for group 0 (q=1) and bottom for group 1 (q=1/6).
    const std::vector<RatedItem> one{{c.items[0], 2}};
    const auto lik = idx.likelihoods(one[0], d, exact);
    CHECK(lik[0] == doctest::Approx(0.96).epsilon(1e-15));
    CHECK(lik[1] == 0.01);
    const auto post = group_posterior(idx, one, d, {0.5, 0.5}, exact);
    CHECK(std::abs(post[0] - 0.96 / 0.97) < 1e-12);

    for (int a = 0; a < 6; ++a) {
      for (int r : kRatingValues) {
        const std::vector<RatedItem> rs{{c.items[a], r}, {c.items[(a + 2) % 6], -r}};
        const auto got = group_posterior(idx, rs, d, {}, exact);
        const auto want = brute_posterior(p, c, rs, p.theta, 0.01);
        CHECK(std::abs(got[0] - want[0]) < 1e-9);
        CHECK(std::abs(got[0] + got[1] - 1.0) < 1e-12);
      }
    }

    const auto fixed = group_posterior(idx, one, d, {0.0, 1.0}, exact);
    CHECK(fixed[0] == 0.0);
    CHECK(fixed[1] == 1.0);
    // Scaling the prior changes nothing.
    const auto scaled = group_posterior(idx, one, d, {3.0, 3.0}, exact);
    CHECK(std::abs(scaled[0] - post[0]) < 1e-15);

    PosteriorSettings bad = exact;
    bad.floor = 0.25;
    CHECK_THROWS_AS(group_posterior(idx, one, d, {}, bad), RecommendError);
    CHECK_THROWS_AS(group_posterior(idx, {{c.items[0], 5}}, d, {}, exact), RatingError);
  }

  TEST_CASE("sequential updates equal a batch update") {
    const UemParams p = six_spot_params();
    const Catalog c = spot_catalog(6);
    const RankIndex idx(p, c);
    const RatingDistribution d = normal_rating_distribution();
    std::vector<RatedItem> rs{{c.items[1], 1}, {c.items[4], -2}, {c.items[2], 0}, {c.items[5], 2}};
    for (QuantileMode mode : {QuantileMode::Exact, QuantileMode::MonteCarlo}) {
      PosteriorSettings s;
      s.mode = mode;
      s.mc_size = 4;
      s.mc_resamples = 16;
      const auto batch = group_posterior(idx, rs, d, {}, s);
      RatingSession session = start_session(p, "x", Method::Al, c.size());
      for (const auto& r : rs) session = update_session(session, {r}, idx, d, s);
      CHECK(std::abs(session.posterior[0] - batch[0]) < 1e-12);
      CHECK(session.history.size() == 4);
      const RatingSession same = update_session(session, {}, idx, d, s);
      CHECK(same.posterior == session.posterior);
    }
    CHECK_THROWS_AS(start_session(p, "x", Method::Base, 6), RecommendError);
  }

  TEST_CASE("repeated consistent ratings concentrate the posterior") {
    const UemParams p = six_spot_params();
    const Catalog c = spot_catalog(6);
    const RankIndex idx(p, c);
    const RatingDistribution d = normal_rating_distribution();
    RatingSession s = start_session(p, "s", Method::Al, 6);
    double last = s.posterior[1];
    for (int i = 0; i < 4; ++i) {
      s = update_session(s, {{c.items[5], 2}}, idx, d);
      CHECK(s.posterior[1] >= last);
      last = s.posterior[1];
    }
    CHECK(last > 0.99);
  }

  TEST_CASE("session recommendations") {
    UemParams p = uniform_params(Variant::B, 2, Dims{1, 2, 2, 12});
    p.phi(0, 0) = 0.1;
    p.phi(0, 1) = 0.9;
    p.phi(1, 0) = 0.5;
    p.phi(1, 1) = 0.5;
    const auto spots = recommend_spots(p, {0.7, 0.3}, 5);
    const auto s0 = std::find_if(spots.begin(), spots.end(), [](const Scored& s) { return s.index == 0; });
    CHECK(std::abs(s0->score - 0.22) < 1e-12);
    CHECK(spots[0].index == 1);

    p.sigma(0, 0) = 0.25;
    p.sigma(0, 1) = 0.75;
    const auto pairs = recommend_pairs(p, {1.0, 0.0}, 2);
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0].spot == 1);
    CHECK(pairs[0].word == 1);
    CHECK(std::abs(pairs[0].score - 0.9 * 0.75) < 1e-12);
  }

  TEST_CASE("items to rate span the posterior ranking") {
    UemParams p = uniform_params(Variant::B, 1, Dims{1, 9, 1, 12});
    for (int l = 0; l < 9; ++l) p.phi(0, l) = (9.0 - l) / 45.0;
    const Catalog c = spot_catalog(9);
    auto ids = [](const std::vector<Item>& items) {
      std::vector<std::string> out;
      for (const auto& i : items) out.push_back(i.image_id);
      return out;
    };
    CHECK(ids(select_items_for_rating(p, {1.0}, c, {}, 5)) ==
          std::vector<std::string>{"l0", "l2", "l4", "l6", "l8"});
    const auto next = ids(select_items_for_rating(p, {1.0}, c, {"l0", "l8"}, 5));
    CHECK(next.front() == "l1");
    CHECK(next.back() == "l7");
    CHECK(std::find(next.begin(), next.end(), "l0") == next.end());
    CHECK(select_items_for_rating(p, {1.0}, c, {"l0", "l1", "l2", "l3", "l4", "l5"}, 5).size() == 3);
  }
}

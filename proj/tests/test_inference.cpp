#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "support/synthetic.hpp"
#include "uem/inference.hpp"
#include "uem/matching.hpp"

using namespace uem;

namespace {

Corpus small_corpus(Variant v, std::size_t n, std::uint64_t seed) {
  Rng prng(seed);
  const UemParams p = testing::separable_params(v, prng);
  Rng rng(seed + 1);
  return generate_corpus(p, n, {1, 5}, rng).corpus;
}

// p(z_d = g | rest) written out from the collapsed formula, with every count
// tallied from the assignments here rather than read from the sampler.
std::vector<double> oracle_conditional(const Corpus& c, Variant v, const Hyperparams& h,
                                       const std::vector<int>& z, const std::vector<int>& src,
                                       std::size_t d) {
  const int G = h.num_groups, U = c.users().size(), L = c.spots().size(),
            W = c.words().size(), T = c.num_time_slots();
  const auto sources = word_sources(v);
  std::vector<double> ng(G, 0), ngu(G, 0), ngl(G, 0), ngt(G, 0), nwt(G, 0);
  std::vector<std::vector<double>> ngw(G, std::vector<double>(W, 0));
  const auto& R = c.records();
  std::size_t tok = 0;
  std::vector<std::size_t> first_tok(R.size());
  for (std::size_t e = 0; e < R.size(); ++e) {
    first_tok[e] = tok;
    if (e == d) {
      tok += R[e].words.size();
      continue;
    }
    const int g = z[e];
    ng[g] += 1;
    ngu[g] += R[e].user == R[d].user;
    ngl[g] += R[e].spot == R[d].spot;
    ngt[g] += R[e].time_slot == R[d].time_slot;
    for (int w : R[e].words) {
      if (sources[src[tok]] == WordSource::Group) {
        ngw[g][w] += 1;
        nwt[g] += 1;
      }
      ++tok;
    }
  }
  std::vector<double> out(G);
  for (int g = 0; g < G; ++g) {
    double x = (ng[g] + h.alpha) * (ngu[g] + h.gamma) / (ng[g] + h.gamma * U) *
               (ngl[g] + h.beta) / (ng[g] + h.beta * L);
    if (has_time(v)) x *= (ngt[g] + h.kappa) / (ng[g] + h.kappa * T);
    std::vector<double> seen(W, 0);
    int m = 0;
    for (std::size_t i = 0; i < R[d].words.size(); ++i) {
      if (sources[src[first_tok[d] + i]] != WordSource::Group) continue;
      const int w = R[d].words[i];
      x *= (ngw[g][w] + seen[w] + h.delta) / (nwt[g] + m + h.delta * W);
      seen[w] += 1;
      ++m;
    }
    out[g] = x;
  }
  double s = 0;
  for (double x : out) s += x;
  for (double& x : out) x /= s;
  return out;
}

}  // namespace

TEST_SUITE("inference") {
  TEST_CASE("default iteration budget") {
    CHECK(default_iterations(10) == 20000);
    CHECK(default_iterations(3) == 9500);
    CHECK(default_iterations(1) == 6500);
    CHECK(default_iterations(200) == 150000);
    TrainConfig c;
    c.hyper.num_groups = 10;
    const TrainConfig r = c.resolved();
    CHECK(r.iterations == 20000);
    CHECK(r.burn_in == 10000);
    c.iterations = 10;
    c.burn_in = 10;
    CHECK_THROWS_AS(c.resolved(), ModelError);
  }

  TEST_CASE("count tables stay consistent across sweeps") {
    for (Variant v : {Variant::B, Variant::S, Variant::T, Variant::ST}) {
      const Corpus c = small_corpus(v, 300, 3);
      Hyperparams h;
      h.num_groups = 4;
      GibbsSampler s(c, v, h, 11);
      CHECK(s.counts_consistent());
      for (int i = 0; i < 5; ++i) {
        s.sweep();
        CHECK(s.counts_consistent());
      }
      CHECK(s.sweeps_done() == 5);
    }
  }

  TEST_CASE("group conditional matches the collapsed formula") {
    for (Variant v : {Variant::B, Variant::S, Variant::T, Variant::ST}) {
      const Corpus c = small_corpus(v, 60, 5);
      Hyperparams h;
      h.num_groups = 3;
      h.alpha = 0.7;
      h.beta = 0.3;
      h.gamma = 0.4;
      h.delta = 0.2;
      h.kappa = 1.5;
      GibbsSampler s(c, v, h, 2);
      s.sweep();
      s.sweep();
      for (std::size_t d = 0; d < c.size(); d += 7) {
        const auto got = s.group_conditional(d);
        const auto want = oracle_conditional(c, v, h, s.groups(), s.sources(), d);
        for (int g = 0; g < 3; ++g) CHECK(std::abs(got[g] - want[g]) < 1e-12);
      }
    }
  }

  TEST_CASE("single record with two groups") {
    const Corpus c = Corpus::from_indexed(Vocabulary({"u"}), Vocabulary({"l", "m"}),
                                          Vocabulary({"a", "b", "c"}),
                                          {IndexedRecord{0, 1, 4, {}, {0, 0, 2}}});
    Hyperparams h;
    h.num_groups = 2;
    GibbsSampler s(c, Variant::B, h, 1);
    const auto p = s.group_conditional(0);
    // With no other records both groups see identical empty counts.
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));
    const auto want = oracle_conditional(c, Variant::B, h, s.groups(), s.sources(), 0);
    CHECK(std::abs(p[0] - want[0]) < 1e-12);
  }

  TEST_CASE("two records give a hand-computed ratio") {
    // Record 1 sits in some group; record 0 shares its user, spot and word.
    const Corpus c = Corpus::from_indexed(Vocabulary({"u"}), Vocabulary({"l"}), Vocabulary({"a", "b"}),
                                          {IndexedRecord{0, 0, 0, {}, {0}}, IndexedRecord{0, 0, 0, {}, {0}}});
    Hyperparams h;
    h.num_groups = 2;
    GibbsSampler s(c, Variant::B, h, 4);
    const int other = s.groups()[1];
    // Group holding record 1: (1+1) * (1+1)/(1+1) * (1+1)/(1+1) * (1+1)/(1+12) * (1+1)/(1+2)
    // Empty group:            (0+1) * 1/1 * 1/1 * 1/12 * 1/2
    const double same = 2.0 * (2.0 / 13.0) * (2.0 / 3.0);
    const double empty = 1.0 * (1.0 / 12.0) * 0.5;
    const auto p = s.group_conditional(0);
    CHECK(std::abs(p[other] - same / (same + empty)) < 1e-12);
  }

  TEST_CASE("degenerate data keeps every conditional positive") {
    const Corpus c = Corpus::from_indexed(Vocabulary({"u"}), Vocabulary({"l"}), Vocabulary({"w"}),
                                          {IndexedRecord{0, 0, 0, {}, {0}}, IndexedRecord{0, 0, 0, {}, {0}},
                                           IndexedRecord{0, 0, 0, {}, {0, 0}}});
    for (Variant v : {Variant::B, Variant::ST}) {
      Hyperparams h;
      h.num_groups = 3;
      GibbsSampler s(c, v, h, 9);
      for (int i = 0; i < 3; ++i) s.sweep();
      for (std::size_t d = 0; d < c.size(); ++d) {
        for (double x : s.group_conditional(d)) {
          CHECK(x > 0.0);
          CHECK(std::isfinite(x));
        }
      }
      CHECK_NOTHROW(s.posterior_mean().validate());
    }
  }

  TEST_CASE("long records use the log path without losing agreement") {
    std::vector<int> words;
    for (int i = 0; i < 120; ++i) words.push_back(i % 7);
    std::vector<IndexedRecord> recs;
    for (int d = 0; d < 6; ++d) recs.push_back(IndexedRecord{d % 2, d % 3, d % 12, {}, words});
    std::vector<std::string> wn;
    for (int i = 0; i < 7; ++i) wn.push_back("w" + std::to_string(i));
    const Corpus c = Corpus::from_indexed(Vocabulary({"a", "b"}), Vocabulary({"x", "y", "z"}),
                                          Vocabulary(wn), recs);
    Hyperparams h;
    h.num_groups = 3;
    GibbsSampler s(c, Variant::B, h, 3);
    s.sweep();
    for (std::size_t d = 0; d < c.size(); ++d) {
      const auto got = s.group_conditional(d);
      const auto want = oracle_conditional(c, Variant::B, h, s.groups(), s.sources(), d);
      for (int g = 0; g < 3; ++g) CHECK(std::abs(got[g] - want[g]) < 1e-9);
    }
  }

  TEST_CASE("initial counts do not depend on record order") {
    const Corpus c = small_corpus(Variant::ST, 200, 8);
    std::vector<IndexedRecord> shuffled = c.records();
    std::reverse(shuffled.begin(), shuffled.end());
    std::rotate(shuffled.begin(), shuffled.begin() + 37, shuffled.end());
    const Corpus p = c.with_records(shuffled);
    Hyperparams h;
    h.num_groups = 4;
    GibbsSampler a(c, Variant::ST, h, 21);
    GibbsSampler b(p, Variant::ST, h, 21);
    CHECK(a.counts() == b.counts());
  }

  TEST_CASE("single group fit equals smoothed empirical frequencies") {
    const Corpus c = small_corpus(Variant::B, 500, 12);
    TrainConfig cfg;
    cfg.hyper.num_groups = 1;
    cfg.hyper.beta = 0.5;
    cfg.hyper.delta = 0.25;
    cfg.iterations = 4;
    const UemParams p = fit(c, cfg);
    std::vector<double> nl(c.spots().size(), 0.0), nw(c.words().size(), 0.0);
    double tokens = 0;
    for (const auto& r : c.records()) {
      nl[r.spot] += 1;
      for (int w : r.words) {
        nw[w] += 1;
        tokens += 1;
      }
    }
    const double D = static_cast<double>(c.size());
    for (int l = 0; l < c.spots().size(); ++l) {
      CHECK(p.phi(0, l) == (nl[l] + 0.5) / (D + 0.5 * c.spots().size()));
    }
    for (int w = 0; w < c.words().size(); ++w) {
      CHECK(p.sigma(0, w) == (nw[w] + 0.25) / (tokens + 0.25 * c.words().size()));
    }
    CHECK(p.theta[0] == 1.0);
  }

  TEST_CASE("fit is deterministic") {
    const Corpus c = small_corpus(Variant::ST, 400, 14);
    TrainConfig cfg;
    cfg.variant = Variant::ST;
    cfg.hyper.num_groups = 3;
    cfg.iterations = 20;
    cfg.seed = 5;
    CHECK(fit(c, cfg) == fit(c, cfg));
    cfg.seed = 6;
    const UemParams other = fit(c, cfg);
    cfg.seed = 5;
    CHECK_FALSE(fit(c, cfg) == other);
  }

  TEST_CASE("held-out trace") {
    const Corpus all = small_corpus(Variant::B, 3000, 30);
    const SplitResult parts = user_split(all, 0.8, 1);
    Hyperparams h;
    h.num_groups = 3;
    GibbsSampler s(parts.train, Variant::B, h, 8);
    s.track(&parts.train);
    CHECK(s.heldout_trace().empty());
    for (int i = 0; i < 40; ++i) s.sweep();
    REQUIRE(s.heldout_trace().size() == 40);
    CHECK(s.heldout_trace().back() > s.heldout_trace().front());

    // With one group the estimate is the same after every sweep.
    Hyperparams one;
    one.num_groups = 1;
    GibbsSampler flat(parts.train, Variant::B, one, 8);
    flat.track(&parts.test);
    for (int i = 0; i < 4; ++i) flat.sweep();
    for (double x : flat.heldout_trace()) CHECK(x == flat.heldout_trace().front());

    TrainConfig cfg;
    cfg.hyper.num_groups = 3;
    cfg.iterations = 50;
    cfg.trace_interval = 20;
    int calls = 0;
    const FitResult r = fit_traced(parts.train, cfg, &parts.test, [&](const TracePoint&) { ++calls; });
    REQUIRE(r.trace.size() == 3);
    CHECK(calls == 3);
    CHECK(r.trace[0].sweep == 20);
    CHECK(r.trace[2].sweep == 50);
  }

  TEST_CASE("quick recovery on separable data") {
    Rng prng(1);
    const UemParams truth = testing::separable_params(Variant::B, prng);
    Rng rng(2);
    const Corpus c = generate_corpus(truth, 6000, {4, 4}, rng).corpus;
    TrainConfig cfg;
    cfg.hyper.num_groups = 3;
    cfg.iterations = 300;
    const UemParams est = fit(c, cfg);
    const auto a = align_groups(truth.phi, est.phi);
    for (int g = 0; g < 3; ++g) {
      CHECK(total_variation(truth.phi.row(g), est.phi.row(a[g])) < 0.1);
      CHECK(total_variation(truth.sigma.row(g), est.sigma.row(a[g])) < 0.1);
    }
  }
}

#include "uem/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace uem {
namespace {

constexpr int kMaxDirectTokens = 48;

std::uint64_t record_hash(const IndexedRecord& r) {
  std::uint64_t h = mix64(static_cast<std::uint64_t>(r.user));
  h = mix64(h ^ static_cast<std::uint64_t>(r.spot));
  h = mix64(h ^ static_cast<std::uint64_t>(r.time_slot));
  h = mix64(h ^ static_cast<std::uint64_t>(r.time.time_since_epoch().count()));
  for (int w : r.words) h = mix64(h ^ static_cast<std::uint64_t>(w));
  return h;
}

std::vector<double> to_double(const std::vector<std::int64_t>& v) {
  return {v.begin(), v.end()};
}

}  // namespace

int default_iterations(int num_groups) {
  const long budget = 5000L + 1500L * num_groups;
  return static_cast<int>(std::clamp(budget, 5000L, 150000L));
}

TrainConfig TrainConfig::resolved() const {
  TrainConfig c = *this;
  c.hyper.validate();
  if (c.iterations == 0) c.iterations = default_iterations(c.hyper.num_groups);
  if (c.burn_in < 0) c.burn_in = c.iterations / 2;
  if (!(c.iterations > c.burn_in)) throw ModelError("iterations must exceed burn_in");
  if (c.trace_interval < 0) throw ModelError("trace_interval must be nonnegative");
  return c;
}

GibbsSampler::GibbsSampler(const Corpus& train, Variant variant, const Hyperparams& hyper,
                           std::uint64_t seed)
    : variant_(variant),
      hyper_(hyper),
      G_(hyper.num_groups),
      U_(train.users().size()),
      L_(train.spots().size()),
      W_(std::max(1, train.words().size())),
      T_(train.num_time_slots()),
      A_(mixture_arity(variant)),
      rng_(mix64(seed ^ 0x5eed5eed5eed5eedULL)) {
  hyper_.validate();
  if (train.size() == 0) throw ModelError("empty training corpus");
  const auto src = word_sources(variant);
  sources_.assign(src.begin(), src.end());

  const std::size_t D = train.size();
  user_.reserve(D);
  spot_.reserve(D);
  time_.reserve(D);
  tok_begin_.reserve(D + 1);
  tok_begin_.push_back(0);
  for (const auto& r : train.records()) {
    user_.push_back(r.user);
    spot_.push_back(r.spot);
    time_.push_back(r.time_slot);
    for (int w : r.words) {
      word_.push_back(w);
      tok_record_.push_back(static_cast<int>(user_.size() - 1));
    }
    tok_begin_.push_back(word_.size());
  }

  // Each record draws its initial assignments from a generator keyed by its
  // content and occurrence number, so the initial tables do not depend on
  // record order.
  z_.resize(D);
  source_.assign(word_.size(), A_ - 1);
  std::unordered_map<std::uint64_t, std::uint64_t> occurrences;
  const std::uint64_t base = mix64(seed);
  for (std::size_t d = 0; d < D; ++d) {
    const std::uint64_t h = record_hash(train.records()[d]);
    const std::uint64_t occ = occurrences[h]++;
    Rng local(base ^ mix64(h + 0x9e3779b97f4a7c15ULL * occ));
    z_[d] = static_cast<int>(local.below(static_cast<std::size_t>(G_)));
    for (std::size_t t = tok_begin_[d]; t < tok_begin_[d + 1]; ++t) {
      source_[t] = static_cast<int>(local.below(static_cast<std::size_t>(A_)));
    }
  }
  n_ = recount();
  scratch_.resize(static_cast<std::size_t>(G_));
}

GibbsSampler::Counts GibbsSampler::recount() const {
  const auto G = static_cast<std::size_t>(G_), U = static_cast<std::size_t>(U_),
             L = static_cast<std::size_t>(L_), W = static_cast<std::size_t>(W_),
             T = static_cast<std::size_t>(T_), A = static_cast<std::size_t>(A_);
  Counts n;
  n.g.assign(G, 0);
  n.gu.assign(G * U, 0);
  n.gl.assign(G * L, 0);
  n.gt.assign(G * T, 0);
  n.gw.assign(G * W, 0);
  n.gw_total.assign(G, 0);
  n.lw.assign(L * W, 0);
  n.lw_total.assign(L, 0);
  n.tw.assign(T * W, 0);
  n.tw_total.assign(T, 0);
  n.ls.assign(L * A, 0);
  for (std::size_t d = 0; d < z_.size(); ++d) {
    const auto g = static_cast<std::size_t>(z_[d]);
    const auto l = static_cast<std::size_t>(spot_[d]);
    const auto t = static_cast<std::size_t>(time_[d]);
    ++n.g[g];
    ++n.gu[g * U + static_cast<std::size_t>(user_[d])];
    ++n.gl[g * L + l];
    if (has_time(variant_)) ++n.gt[g * T + t];
    for (std::size_t k = tok_begin_[d]; k < tok_begin_[d + 1]; ++k) {
      const auto w = static_cast<std::size_t>(word_[k]);
      const auto s = static_cast<std::size_t>(source_[k]);
      ++n.ls[l * A + s];
      switch (sources_[s]) {
        case WordSource::Spot: ++n.lw[l * W + w]; ++n.lw_total[l]; break;
        case WordSource::Time: ++n.tw[t * W + w]; ++n.tw_total[t]; break;
        case WordSource::Group: ++n.gw[g * W + w]; ++n.gw_total[g]; break;
      }
    }
  }
  return n;
}

bool GibbsSampler::counts_consistent() const {
  const Counts fresh = recount();
  if (!(fresh == n_)) return false;
  auto nonneg = [](const std::vector<std::int64_t>& v) {
    return std::all_of(v.begin(), v.end(), [](std::int64_t x) { return x >= 0; });
  };
  return nonneg(n_.g) && nonneg(n_.gu) && nonneg(n_.gl) && nonneg(n_.gt) && nonneg(n_.gw) &&
         nonneg(n_.lw) && nonneg(n_.tw) && nonneg(n_.ls);
}

void GibbsSampler::add_record(std::size_t d, int sign) {
  const auto g = static_cast<std::size_t>(z_[d]);
  n_.g[g] += sign;
  n_.gu[g * static_cast<std::size_t>(U_) + static_cast<std::size_t>(user_[d])] += sign;
  n_.gl[g * static_cast<std::size_t>(L_) + static_cast<std::size_t>(spot_[d])] += sign;
  if (has_time(variant_)) {
    n_.gt[g * static_cast<std::size_t>(T_) + static_cast<std::size_t>(time_[d])] += sign;
  }
  for (std::size_t k = tok_begin_[d]; k < tok_begin_[d + 1]; ++k) {
    if (sources_[static_cast<std::size_t>(source_[k])] != WordSource::Group) continue;
    n_.gw[g * static_cast<std::size_t>(W_) + static_cast<std::size_t>(word_[k])] += sign;
    n_.gw_total[g] += sign;
  }
}

void GibbsSampler::add_token(std::size_t tok, int sign) {
  const auto d = static_cast<std::size_t>(tok_record_[tok]);
  const auto l = static_cast<std::size_t>(spot_[d]);
  const auto w = static_cast<std::size_t>(word_[tok]);
  const auto s = static_cast<std::size_t>(source_[tok]);
  const auto W = static_cast<std::size_t>(W_);
  n_.ls[l * static_cast<std::size_t>(A_) + s] += sign;
  switch (sources_[s]) {
    case WordSource::Spot:
      n_.lw[l * W + w] += sign;
      n_.lw_total[l] += sign;
      break;
    case WordSource::Time: {
      const auto t = static_cast<std::size_t>(time_[d]);
      n_.tw[t * W + w] += sign;
      n_.tw_total[t] += sign;
      break;
    }
    case WordSource::Group: {
      const auto g = static_cast<std::size_t>(z_[d]);
      n_.gw[g * W + w] += sign;
      n_.gw_total[g] += sign;
      break;
    }
  }
}

void GibbsSampler::group_weights(std::size_t d, bool self_included,
                                 std::vector<double>& out) const {
  const auto U = static_cast<std::size_t>(U_), L = static_cast<std::size_t>(L_),
             T = static_cast<std::size_t>(T_), W = static_cast<std::size_t>(W_);
  const auto u = static_cast<std::size_t>(user_[d]);
  const auto l = static_cast<std::size_t>(spot_[d]);
  const auto t = static_cast<std::size_t>(time_[d]);
  const double Wd = static_cast<double>(W_);

  // Words of the tokens currently drawn from the experience, with the number
  // of earlier such tokens sharing the word (rising-factorial predictive) and
  // the total such tokens sharing it (the record's own counts).
  int words[kMaxDirectTokens];
  int prev[kMaxDirectTokens];
  int same[kMaxDirectTokens];
  std::vector<int> words_big, prev_big, same_big;
  int* wp = words;
  int* pp = prev;
  int* sp = same;
  std::size_t m = 0;
  for (std::size_t k = tok_begin_[d]; k < tok_begin_[d + 1]; ++k) {
    if (sources_[static_cast<std::size_t>(source_[k])] == WordSource::Group) ++m;
  }
  if (m > static_cast<std::size_t>(kMaxDirectTokens)) {
    words_big.resize(m);
    prev_big.resize(m);
    same_big.resize(m);
    wp = words_big.data();
    pp = prev_big.data();
    sp = same_big.data();
  }
  std::size_t j = 0;
  for (std::size_t k = tok_begin_[d]; k < tok_begin_[d + 1]; ++k) {
    if (sources_[static_cast<std::size_t>(source_[k])] != WordSource::Group) continue;
    wp[j] = word_[k];
    pp[j] = 0;
    for (std::size_t i = 0; i < j; ++i) pp[j] += wp[i] == wp[j];
    ++j;
  }
  for (std::size_t a = 0; a < m; ++a) {
    sp[a] = 0;
    for (std::size_t b = 0; b < m; ++b) sp[a] += wp[a] == wp[b];
  }

  const bool use_log = m > static_cast<std::size_t>(kMaxDirectTokens);
  out.resize(static_cast<std::size_t>(G_));
  for (std::size_t g = 0; g < static_cast<std::size_t>(G_); ++g) {
    const int self = self_included && static_cast<int>(g) == z_[d] ? 1 : 0;
    const double ng = static_cast<double>(n_.g[g] - self);
    double w = (ng + hyper_.alpha);
    w *= (static_cast<double>(n_.gu[g * U + u] - self) + hyper_.gamma) / (ng + hyper_.gamma * static_cast<double>(U_));
    w *= (static_cast<double>(n_.gl[g * L + l] - self) + hyper_.beta) / (ng + hyper_.beta * static_cast<double>(L_));
    if (has_time(variant_)) {
      w *= (static_cast<double>(n_.gt[g * T + t] - self) + hyper_.kappa) /
           (ng + hyper_.kappa * static_cast<double>(T_));
    }
    const double own_total = self ? static_cast<double>(m) : 0.0;
    const double total = static_cast<double>(n_.gw_total[g]) - own_total;
    if (!use_log) {
      for (std::size_t a = 0; a < m; ++a) {
        const double own = self ? static_cast<double>(sp[a]) : 0.0;
        const double num = static_cast<double>(n_.gw[g * W + static_cast<std::size_t>(wp[a])]) -
                           own + pp[a] + hyper_.delta;
        // The constant factor W keeps long products away from underflow.
        w *= Wd * num / (total + static_cast<double>(a) + hyper_.delta * Wd);
      }
      out[g] = w;
    } else {
      double lw = std::log(w);
      for (std::size_t a = 0; a < m; ++a) {
        const double own = self ? static_cast<double>(sp[a]) : 0.0;
        const double num = static_cast<double>(n_.gw[g * W + static_cast<std::size_t>(wp[a])]) -
                           own + pp[a] + hyper_.delta;
        lw += std::log(num / (total + static_cast<double>(a) + hyper_.delta * Wd));
      }
      out[g] = lw;
    }
  }
  if (use_log) {
    const double hi = *std::max_element(out.begin(), out.end());
    for (auto& x : out) x = std::exp(x - hi);
  }
}

std::vector<double> GibbsSampler::group_conditional(std::size_t record) const {
  std::vector<double> w;
  group_weights(record, true, w);
  double total = 0.0;
  for (double x : w) total += x;
  for (auto& x : w) x /= total;
  return w;
}

double GibbsSampler::source_predictive(std::size_t tok, int source) const {
  const auto d = static_cast<std::size_t>(tok_record_[tok]);
  const auto w = static_cast<std::size_t>(word_[tok]);
  const auto W = static_cast<std::size_t>(W_);
  const double Wd = static_cast<double>(W_);
  switch (sources_[static_cast<std::size_t>(source)]) {
    case WordSource::Spot: {
      const auto l = static_cast<std::size_t>(spot_[d]);
      return (static_cast<double>(n_.lw[l * W + w]) + hyper_.epsilon) /
             (static_cast<double>(n_.lw_total[l]) + hyper_.epsilon * Wd);
    }
    case WordSource::Time: {
      const auto t = static_cast<std::size_t>(time_[d]);
      return (static_cast<double>(n_.tw[t * W + w]) + hyper_.iota) /
             (static_cast<double>(n_.tw_total[t]) + hyper_.iota * Wd);
    }
    case WordSource::Group: {
      const auto g = static_cast<std::size_t>(z_[d]);
      return (static_cast<double>(n_.gw[g * W + w]) + hyper_.delta) /
             (static_cast<double>(n_.gw_total[g]) + hyper_.delta * Wd);
    }
  }
  return 0.0;
}

void GibbsSampler::sweep() {
  const auto A = static_cast<std::size_t>(A_);
  double source_w[3];
  for (std::size_t d = 0; d < z_.size(); ++d) {
    add_record(d, -1);
    group_weights(d, false, scratch_);
    z_[d] = static_cast<int>(rng_.categorical(scratch_));
    add_record(d, +1);
    if (!has_switch(variant_)) continue;
    const auto l = static_cast<std::size_t>(spot_[d]);
    for (std::size_t k = tok_begin_[d]; k < tok_begin_[d + 1]; ++k) {
      add_token(k, -1);
      for (std::size_t s = 0; s < A; ++s) {
        source_w[s] = (static_cast<double>(n_.ls[l * A + s]) + hyper_.eta_prior) *
                      source_predictive(k, static_cast<int>(s));
      }
      source_[k] = static_cast<int>(rng_.categorical(std::span<const double>(source_w, A)));
      add_token(k, +1);
    }
  }
  ++sweeps_;
  if (validation_) trace_.push_back(heldout_loglik(*validation_));
}

void GibbsSampler::accumulate() {
  auto add = [](std::vector<double>& acc, const std::vector<std::int64_t>& n) {
    if (acc.empty()) acc.assign(n.size(), 0.0);
    for (std::size_t i = 0; i < n.size(); ++i) acc[i] += static_cast<double>(n[i]);
  };
  add(acc_.g, n_.g);
  add(acc_.gu, n_.gu);
  add(acc_.gl, n_.gl);
  add(acc_.gt, n_.gt);
  add(acc_.gw, n_.gw);
  add(acc_.gw_total, n_.gw_total);
  add(acc_.lw, n_.lw);
  add(acc_.lw_total, n_.lw_total);
  add(acc_.tw, n_.tw);
  add(acc_.tw_total, n_.tw_total);
  add(acc_.ls, n_.ls);
  ++accumulated_;
}

UemParams GibbsSampler::point_estimate() const {
  const Tables snap{to_double(n_.g),  to_double(n_.gu),       to_double(n_.gl),
                    to_double(n_.gt), to_double(n_.gw),       to_double(n_.gw_total),
                    to_double(n_.lw), to_double(n_.lw_total), to_double(n_.tw),
                    to_double(n_.tw_total), to_double(n_.ls)};
  return estimate(snap, 1.0);
}

UemParams GibbsSampler::posterior_mean() const {
  if (accumulated_ == 0) return point_estimate();
  return estimate(acc_, static_cast<double>(accumulated_));
}

UemParams GibbsSampler::estimate(const Tables& a, double count) const {
  const auto G = static_cast<std::size_t>(G_), U = static_cast<std::size_t>(U_),
             L = static_cast<std::size_t>(L_), W = static_cast<std::size_t>(W_),
             T = static_cast<std::size_t>(T_), A = static_cast<std::size_t>(A_);
  UemParams p;
  p.variant = variant_;
  p.time_slots = T_;
  const double D = static_cast<double>(z_.size());
  p.theta.resize(G);
  p.pi = Matrix(G, U);
  p.phi = Matrix(G, L);
  p.sigma = Matrix(G, W);
  for (std::size_t g = 0; g < G; ++g) {
    const double ng = a.g[g] / count;
    p.theta[g] = (ng + hyper_.alpha) / (D + hyper_.alpha * static_cast<double>(G));
    for (std::size_t u = 0; u < U; ++u) {
      p.pi(g, u) = (a.gu[g * U + u] / count + hyper_.gamma) / (ng + hyper_.gamma * static_cast<double>(U));
    }
    for (std::size_t l = 0; l < L; ++l) {
      p.phi(g, l) = (a.gl[g * L + l] / count + hyper_.beta) / (ng + hyper_.beta * static_cast<double>(L));
    }
    const double nw = a.gw_total[g] / count;
    for (std::size_t w = 0; w < W; ++w) {
      p.sigma(g, w) = (a.gw[g * W + w] / count + hyper_.delta) / (nw + hyper_.delta * static_cast<double>(W));
    }
  }
  if (has_time(variant_)) {
    p.tau = Matrix(G, T);
    for (std::size_t g = 0; g < G; ++g) {
      const double ng = a.g[g] / count;
      for (std::size_t t = 0; t < T; ++t) {
        p.tau(g, t) = (a.gt[g * T + t] / count + hyper_.kappa) / (ng + hyper_.kappa * static_cast<double>(T));
      }
    }
  }
  if (variant_ == Variant::S || variant_ == Variant::ST) {
    p.mu = Matrix(L, W);
    for (std::size_t l = 0; l < L; ++l) {
      const double nl = a.lw_total[l] / count;
      for (std::size_t w = 0; w < W; ++w) {
        p.mu(l, w) = (a.lw[l * W + w] / count + hyper_.epsilon) / (nl + hyper_.epsilon * static_cast<double>(W));
      }
    }
  }
  if (variant_ == Variant::T || variant_ == Variant::ST) {
    p.rho = Matrix(T, W);
    for (std::size_t t = 0; t < T; ++t) {
      const double nt = a.tw_total[t] / count;
      for (std::size_t w = 0; w < W; ++w) {
        p.rho(t, w) = (a.tw[t * W + w] / count + hyper_.iota) / (nt + hyper_.iota * static_cast<double>(W));
      }
    }
  }
  if (has_switch(variant_)) {
    p.eta = Matrix(L, A);
    for (std::size_t l = 0; l < L; ++l) {
      double nl = 0.0;
      for (std::size_t s = 0; s < A; ++s) nl += a.ls[l * A + s] / count;
      for (std::size_t s = 0; s < A; ++s) {
        p.eta(l, s) = (a.ls[l * A + s] / count + hyper_.eta_prior) / (nl + hyper_.eta_prior * static_cast<double>(A));
      }
    }
  }
  return p;
}

double GibbsSampler::heldout_loglik(const Corpus& validation) const {
  if (validation.size() == 0) throw ModelError("empty validation corpus");
  const UemParams p = point_estimate();
  double total = 0.0;
  for (const auto& r : validation.records()) total += record_loglik(p, r);
  return total / static_cast<double>(validation.size());
}

FitResult fit_traced(const Corpus& train, const TrainConfig& config, const Corpus* validation,
                     const ProgressFn& progress) {
  const TrainConfig cfg = config.resolved();
  GibbsSampler sampler(train, cfg.variant, cfg.hyper, cfg.seed);
  FitResult result;
  const auto start = std::chrono::steady_clock::now();
  for (int it = 1; it <= cfg.iterations; ++it) {
    sampler.sweep();
    if (it > cfg.burn_in) sampler.accumulate();
    if (validation && cfg.trace_interval > 0 &&
        (it % cfg.trace_interval == 0 || it == cfg.iterations)) {
      TracePoint point;
      point.sweep = it;
      point.heldout_loglik = sampler.heldout_loglik(*validation);
      point.elapsed_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      result.trace.push_back(point);
      if (progress) progress(point);
    }
  }
  result.params = sampler.posterior_mean();
  return result;
}

UemParams fit(const Corpus& train, const TrainConfig& config) {
  return fit_traced(train, config).params;
}

}  // namespace uem

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "uem/corpus.hpp"
#include "uem/model.hpp"
#include "uem/random.hpp"

namespace uem {

// 5000 + 1500 * |G| sweeps, clamped to [5000, 150000].
int default_iterations(int num_groups);

struct TrainConfig {
  int iterations = 0;  // 0 selects default_iterations
  int burn_in = -1;    // negative selects half of the iterations
  std::uint64_t seed = 1;
  Variant variant = Variant::B;
  Hyperparams hyper;
  int trace_interval = 100;  // sweeps between held-out evaluations; 0 disables

  // Fills in the defaults and checks iterations > burn_in >= 0.
  TrainConfig resolved() const;
};

struct TracePoint {
  int sweep = 0;
  double heldout_loglik = 0.0;
  double elapsed_seconds = 0.0;
};

// Collapsed Gibbs sampler over per-record experience assignments and, for the
// switching variants, per-token word-source assignments. All Dirichlet
// parameters are integrated out; count tables are the sufficient statistics.
class GibbsSampler {
 public:
  GibbsSampler(const Corpus& train, Variant variant, const Hyperparams& hyper,
               std::uint64_t seed);

  // Resamples every record's group, then the sources of its tokens.
  void sweep();
  int sweeps_done() const { return sweeps_; }

  // p(z_d = g | z_-d, data), normalized. Does not change the state.
  std::vector<double> group_conditional(std::size_t record) const;

  // Parameters read off the current counts, smoothed by the priors.
  UemParams point_estimate() const;

  // Adds the current counts to the running average.
  void accumulate();
  int accumulated() const { return accumulated_; }
  // Smoothed estimate from the averaged counts; falls back to the current
  // counts if nothing has been accumulated.
  UemParams posterior_mean() const;

  // Mean record log-likelihood of `validation` under point_estimate().
  double heldout_loglik(const Corpus& validation) const;

  // When a validation corpus is attached, each sweep appends its held-out
  // mean log-likelihood. The corpus must outlive the sampler.
  void track(const Corpus* validation) { validation_ = validation; }
  const std::vector<double>& heldout_trace() const { return trace_; }

  // Recounts every table from the assignments and compares.
  bool counts_consistent() const;

  const std::vector<int>& groups() const { return z_; }
  const std::vector<int>& sources() const { return source_; }

  // Count tables, exposed read-only for tests and diagnostics.
  struct Counts {
    std::vector<std::int64_t> g, gu, gl, gt, gw, gw_total, lw, lw_total, tw, tw_total, ls;
    bool operator==(const Counts&) const = default;
  };
  const Counts& counts() const { return n_; }

 private:
  void add_record(std::size_t d, int sign);
  void add_token(std::size_t tok, int sign);
  // Unnormalized weights into out; when `self_included` the record's own
  // contribution is discounted from the counts.
  void group_weights(std::size_t d, bool self_included, std::vector<double>& out) const;
  double source_predictive(std::size_t tok, int source) const;
  Counts recount() const;

  struct Tables {
    std::vector<double> g, gu, gl, gt, gw, gw_total, lw, lw_total, tw, tw_total, ls;
  };
  // Smoothed parameters from tables holding `count` summed snapshots.
  UemParams estimate(const Tables& n, double count) const;

  Variant variant_;
  Hyperparams hyper_;
  int G_, U_, L_, W_, T_, A_;
  std::vector<WordSource> sources_;

  std::vector<int> user_, spot_, time_;
  std::vector<std::size_t> tok_begin_;
  std::vector<int> word_;
  std::vector<int> tok_record_;

  std::vector<int> z_;
  std::vector<int> source_;
  Counts n_;

  Tables acc_;
  int accumulated_ = 0;
  int sweeps_ = 0;

  Rng rng_;
  std::vector<double> scratch_;
  const Corpus* validation_ = nullptr;
  std::vector<double> trace_;
};

struct FitResult {
  UemParams params;
  std::vector<TracePoint> trace;
};

using ProgressFn = std::function<void(const TracePoint&)>;

// Posterior-mean parameters from `iterations` sweeps, averaging every sweep
// after burn-in. Deterministic for a given corpus and config.
FitResult fit_traced(const Corpus& train, const TrainConfig& config,
                     const Corpus* validation = nullptr, const ProgressFn& progress = {});
UemParams fit(const Corpus& train, const TrainConfig& config);

}  // namespace uem

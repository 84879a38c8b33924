#pragma once

#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "uem/corpus.hpp"
#include "uem/matrix.hpp"
#include "uem/random.hpp"

namespace uem {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// B: words from the experience only. S: words from the spot or the
// experience, no time slot. T: words from the time slot or the experience.
// ST: words from the spot, the time slot or the experience.
enum class Variant { B, S, T, ST };

std::string_view to_string(Variant v);
// Case-insensitive; accepts "b", "s", "t", "st" with an optional "-uem".
Variant parse_variant(std::string_view name);

enum class WordSource { Spot, Time, Group };

// Mixture components in eta order. B has the single Group source.
std::span<const WordSource> word_sources(Variant v);
inline int mixture_arity(Variant v) { return static_cast<int>(word_sources(v).size()); }
inline bool has_time(Variant v) { return v != Variant::S; }
inline bool has_switch(Variant v) { return v != Variant::B; }

// Symmetric Dirichlet concentrations: alpha for theta, beta for phi, gamma for
// pi, delta for sigma, kappa for tau, epsilon for mu, iota for rho and
// eta_prior for the per-spot switch weights.
struct Hyperparams {
  int num_groups = 10;
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
  double delta = 1.0;
  double kappa = 1.0;
  double epsilon = 1.0;
  double iota = 1.0;
  double eta_prior = 1.0;

  void validate() const;
};

struct Dims {
  int users = 0;
  int spots = 0;
  int words = 0;
  int time_slots = kTimeSlots;

  bool operator==(const Dims&) const = default;
};

Dims dims_of(const Corpus& corpus);

// Categorical parameters of a fitted or sampled model. Matrices that a
// variant does not use are empty: tau for S, mu for B and T, rho for B and S,
// eta for B.
struct UemParams {
  Variant variant = Variant::B;
  std::vector<double> theta;  // G
  Matrix pi;                  // G x U
  Matrix phi;                 // G x L
  Matrix sigma;               // G x W
  Matrix tau;                 // G x T
  Matrix mu;                  // L x W
  Matrix rho;                 // T x W
  Matrix eta;                 // L x arity
  int time_slots = kTimeSlots;

  int num_groups() const { return static_cast<int>(theta.size()); }
  Dims dims() const;

  // Every row must be a simplex within `tol`; shapes must match the variant.
  void validate(double tol = 1e-9) const;

  bool operator==(const UemParams&) const = default;
};

UemParams sample_params(const Hyperparams& hyper, Variant variant, Dims dims, Rng& rng);
UemParams uniform_params(Variant variant, int num_groups, Dims dims);

struct WordCountRange {
  int min = 4;
  int max = 4;
};

struct GeneratedCorpus {
  Corpus corpus;
  std::vector<int> groups;                 // per record
  std::vector<std::vector<int>> switches;  // per record, per token; empty for B
};

// Names are "u<i>", "l<i>", "w<i>" so index i in the corpus is index i in the
// parameters. Timestamps fall in 2014, in the month of the drawn slot.
GeneratedCorpus generate_corpus(const UemParams& params, std::size_t num_records,
                                WordCountRange words_per_record, Rng& rng);

// Word probability with the switch marginalized out.
double word_prob(const UemParams& params, int group, int spot, int time_slot, int word);

// log sum_g theta pi phi tau prod word_prob; -infinity when every term is zero.
double record_loglik(const UemParams& params, const IndexedRecord& record);

// p(g | u), proportional to theta(g) pi_g(u).
std::vector<double> group_given_user(const UemParams& params, int user);

// exp of the negative mean log p(l_d | u_d). Users marked unknown (or beyond
// the mask) are scored with the population mixture sum_g theta phi_g.
double perplexity_locations(const UemParams& params, const Corpus& test,
                            const std::vector<bool>& known_users);
double perplexity_locations(const UemParams& params, const Corpus& test);

// Same, per token, with p(w | u) = sum_g p(g | u) word_prob(g, l_d, t_d, w).
double perplexity_words(const UemParams& params, const Corpus& test,
                        const std::vector<bool>& known_users);
double perplexity_words(const UemParams& params, const Corpus& test);

}  // namespace uem

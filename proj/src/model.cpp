#include "uem/model.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <limits>
#include <string>

namespace uem {
namespace {

constexpr std::array<WordSource, 1> kSourcesB{WordSource::Group};
constexpr std::array<WordSource, 2> kSourcesS{WordSource::Spot, WordSource::Group};
constexpr std::array<WordSource, 2> kSourcesT{WordSource::Time, WordSource::Group};
constexpr std::array<WordSource, 3> kSourcesST{WordSource::Spot, WordSource::Time,
                                               WordSource::Group};

Matrix dirichlet_rows(std::size_t rows, std::size_t cols, double concentration, Rng& rng) {
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto draw = rng.dirichlet(cols, concentration);
    std::copy(draw.begin(), draw.end(), m.row(r).begin());
  }
  return m;
}

void check_simplex(std::span<const double> row, double tol, const char* name, std::size_t r) {
  double total = 0.0;
  for (double x : row) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw ModelError(std::string(name) + " row " + std::to_string(r) +
                       " has a negative or non-finite entry");
    }
    total += x;
  }
  if (std::abs(total - 1.0) > tol) {
    throw ModelError(std::string(name) + " row " + std::to_string(r) + " sums to " +
                     std::to_string(total));
  }
}

void check_matrix(const Matrix& m, std::size_t rows, std::size_t cols, double tol,
                  const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ModelError(std::string(name) + " has shape " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  for (std::size_t r = 0; r < rows; ++r) check_simplex(m.row(r), tol, name, r);
}

double log_sum_exp(std::span<const double> xs) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : xs) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - hi);
  return hi + std::log(s);
}

void check_index(int value, int bound, const char* what) {
  if (value < 0 || value >= bound) {
    throw ModelError(std::string(what) + " index " + std::to_string(value) +
                     " out of range [0, " + std::to_string(bound) + ")");
  }
}

bool is_known(const std::vector<bool>& known, int user) {
  return user >= 0 && static_cast<std::size_t>(user) < known.size() &&
         known[static_cast<std::size_t>(user)];
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::B: return "B";
    case Variant::S: return "S";
    case Variant::T: return "T";
    case Variant::ST: return "ST";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  std::string s;
  for (char c : name) s.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (s.size() > 4 && s.substr(s.size() - 4) == "-UEM") s.resize(s.size() - 4);
  if (s == "B") return Variant::B;
  if (s == "S") return Variant::S;
  if (s == "T") return Variant::T;
  if (s == "ST") return Variant::ST;
  throw ModelError("unknown variant '" + std::string(name) + "'");
}

std::span<const WordSource> word_sources(Variant v) {
  switch (v) {
    case Variant::B: return kSourcesB;
    case Variant::S: return kSourcesS;
    case Variant::T: return kSourcesT;
    case Variant::ST: return kSourcesST;
  }
  return kSourcesB;
}

void Hyperparams::validate() const {
  if (num_groups < 1) throw ModelError("num_groups must be at least 1");
  for (double c : {alpha, beta, gamma, delta, kappa, epsilon, iota, eta_prior}) {
    if (!(c > 0.0) || !std::isfinite(c)) {
      throw ModelError("Dirichlet concentrations must be positive");
    }
  }
}

Dims dims_of(const Corpus& corpus) {
  return {corpus.users().size(), corpus.spots().size(), corpus.words().size(),
          corpus.num_time_slots()};
}

Dims UemParams::dims() const {
  return {static_cast<int>(pi.cols()), static_cast<int>(phi.cols()),
          static_cast<int>(sigma.cols()), time_slots};
}

void UemParams::validate(double tol) const {
  const std::size_t g = theta.size();
  if (g == 0) throw ModelError("theta is empty");
  if (time_slots < 1) throw ModelError("time_slots must be positive");
  check_simplex(theta, tol, "theta", 0);
  const Dims d = dims();
  if (d.users < 1 || d.spots < 1 || d.words < 1) throw ModelError("empty dimension");
  const auto U = static_cast<std::size_t>(d.users), L = static_cast<std::size_t>(d.spots),
             W = static_cast<std::size_t>(d.words), T = static_cast<std::size_t>(time_slots);
  check_matrix(pi, g, U, tol, "pi");
  check_matrix(phi, g, L, tol, "phi");
  check_matrix(sigma, g, W, tol, "sigma");
  if (has_time(variant)) check_matrix(tau, g, T, tol, "tau");
  else if (!tau.empty()) throw ModelError("variant S has no tau");
  const bool spot_words = variant == Variant::S || variant == Variant::ST;
  const bool time_words = variant == Variant::T || variant == Variant::ST;
  if (spot_words) check_matrix(mu, L, W, tol, "mu");
  else if (!mu.empty()) throw ModelError("variant has no mu");
  if (time_words) check_matrix(rho, T, W, tol, "rho");
  else if (!rho.empty()) throw ModelError("variant has no rho");
  if (has_switch(variant)) {
    check_matrix(eta, L, static_cast<std::size_t>(mixture_arity(variant)), tol, "eta");
  } else if (!eta.empty()) {
    throw ModelError("variant B has no eta");
  }
}

UemParams sample_params(const Hyperparams& hyper, Variant variant, Dims dims, Rng& rng) {
  hyper.validate();
  if (dims.users < 1 || dims.spots < 1 || dims.words < 1 || dims.time_slots < 1) {
    throw ModelError("dimensions must be positive");
  }
  const auto G = static_cast<std::size_t>(hyper.num_groups);
  const auto U = static_cast<std::size_t>(dims.users), L = static_cast<std::size_t>(dims.spots),
             W = static_cast<std::size_t>(dims.words), T = static_cast<std::size_t>(dims.time_slots);
  UemParams p;
  p.variant = variant;
  p.time_slots = dims.time_slots;
  p.theta = rng.dirichlet(G, hyper.alpha);
  p.pi = dirichlet_rows(G, U, hyper.gamma, rng);
  p.phi = dirichlet_rows(G, L, hyper.beta, rng);
  p.sigma = dirichlet_rows(G, W, hyper.delta, rng);
  if (has_time(variant)) p.tau = dirichlet_rows(G, T, hyper.kappa, rng);
  if (variant == Variant::S || variant == Variant::ST) p.mu = dirichlet_rows(L, W, hyper.epsilon, rng);
  if (variant == Variant::T || variant == Variant::ST) p.rho = dirichlet_rows(T, W, hyper.iota, rng);
  if (has_switch(variant)) {
    p.eta = dirichlet_rows(L, static_cast<std::size_t>(mixture_arity(variant)), hyper.eta_prior, rng);
  }
  return p;
}

UemParams uniform_params(Variant variant, int num_groups, Dims dims) {
  const auto G = static_cast<std::size_t>(num_groups);
  const auto U = static_cast<std::size_t>(dims.users), L = static_cast<std::size_t>(dims.spots),
             W = static_cast<std::size_t>(dims.words), T = static_cast<std::size_t>(dims.time_slots);
  UemParams p;
  p.variant = variant;
  p.time_slots = dims.time_slots;
  p.theta.assign(G, 1.0 / static_cast<double>(G));
  p.pi = Matrix(G, U, 1.0 / static_cast<double>(U));
  p.phi = Matrix(G, L, 1.0 / static_cast<double>(L));
  p.sigma = Matrix(G, W, 1.0 / static_cast<double>(W));
  if (has_time(variant)) p.tau = Matrix(G, T, 1.0 / static_cast<double>(T));
  if (variant == Variant::S || variant == Variant::ST) p.mu = Matrix(L, W, 1.0 / static_cast<double>(W));
  if (variant == Variant::T || variant == Variant::ST) p.rho = Matrix(T, W, 1.0 / static_cast<double>(W));
  if (has_switch(variant)) {
    const auto a = static_cast<std::size_t>(mixture_arity(variant));
    p.eta = Matrix(L, a, 1.0 / static_cast<double>(a));
  }
  return p;
}

GeneratedCorpus generate_corpus(const UemParams& params, std::size_t num_records,
                                WordCountRange words_per_record, Rng& rng) {
  params.validate(1e-6);
  if (words_per_record.min < 0 || words_per_record.max < words_per_record.min) {
    throw ModelError("invalid words-per-record range");
  }
  if (num_records == 0) throw ModelError("num_records must be positive");
  const Dims d = params.dims();
  auto names = [](char prefix, int n) {
    std::vector<std::string> v;
    v.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) v.push_back(prefix + std::to_string(i));
    return Vocabulary(std::move(v));
  };
  const auto sources = word_sources(params.variant);
  const int T = params.time_slots;

  GeneratedCorpus out{Corpus{}, {}, {}};
  std::vector<IndexedRecord> records;
  records.reserve(num_records);
  out.groups.reserve(num_records);
  if (has_switch(params.variant)) out.switches.reserve(num_records);

  for (std::size_t n = 0; n < num_records; ++n) {
    IndexedRecord r;
    const auto g = rng.categorical(params.theta);
    r.user = static_cast<int>(rng.categorical(params.pi.row(g)));
    r.spot = static_cast<int>(rng.categorical(params.phi.row(g)));
    // Variant S carries no time law; the slot is a placeholder.
    r.time_slot = has_time(params.variant)
                      ? static_cast<int>(rng.categorical(params.tau.row(g)))
                      : static_cast<int>(rng.below(static_cast<std::size_t>(T)));
    const int span = words_per_record.max - words_per_record.min + 1;
    const int count = words_per_record.min + static_cast<int>(rng.below(static_cast<std::size_t>(span)));
    std::vector<int> switches;
    for (int i = 0; i < count; ++i) {
      std::size_t source = 0;
      if (has_switch(params.variant)) {
        source = rng.categorical(params.eta.row(static_cast<std::size_t>(r.spot)));
        switches.push_back(static_cast<int>(source));
      }
      std::span<const double> law;
      switch (sources[source]) {
        case WordSource::Spot: law = params.mu.row(static_cast<std::size_t>(r.spot)); break;
        case WordSource::Time: law = params.rho.row(static_cast<std::size_t>(r.time_slot)); break;
        case WordSource::Group: law = params.sigma.row(g); break;
      }
      r.words.push_back(static_cast<int>(rng.categorical(law)));
    }
    // Slot t maps to month t + 1 of 2014 (day 16071 is 2014-01-01); other
    // slot counts fall back to day offsets.
    std::int64_t day;
    if (T == kTimeSlots) {
      static constexpr int kCumDays[12] = {0, 31, 59, 90, 120, 151, 181, 212, 243, 273, 304, 334};
      day = 16071 + kCumDays[r.time_slot] + static_cast<std::int64_t>(rng.below(28));
    } else {
      day = 16071 + r.time_slot;
    }
    r.time = Timestamp{std::chrono::seconds{day * 86400 + static_cast<std::int64_t>(rng.below(86400))}};
    records.push_back(std::move(r));
    out.groups.push_back(static_cast<int>(g));
    if (has_switch(params.variant)) out.switches.push_back(std::move(switches));
  }
  out.corpus = Corpus::from_indexed(names('u', d.users), names('l', d.spots), names('w', d.words),
                                    std::move(records), T);
  return out;
}

double word_prob(const UemParams& params, int group, int spot, int time_slot, int word) {
  const Dims d = params.dims();
  check_index(group, params.num_groups(), "group");
  check_index(spot, d.spots, "spot");
  check_index(time_slot, d.time_slots, "time slot");
  check_index(word, d.words, "word");
  const auto g = static_cast<std::size_t>(group), l = static_cast<std::size_t>(spot),
             t = static_cast<std::size_t>(time_slot), w = static_cast<std::size_t>(word);
  if (params.variant == Variant::B) return params.sigma(g, w);
  const auto sources = word_sources(params.variant);
  double p = 0.0;
  for (std::size_t k = 0; k < sources.size(); ++k) {
    double component = 0.0;
    switch (sources[k]) {
      case WordSource::Spot: component = params.mu(l, w); break;
      case WordSource::Time: component = params.rho(t, w); break;
      case WordSource::Group: component = params.sigma(g, w); break;
    }
    p += params.eta(l, k) * component;
  }
  return p;
}

double record_loglik(const UemParams& params, const IndexedRecord& record) {
  const Dims d = params.dims();
  check_index(record.user, d.users, "user");
  const int G = params.num_groups();
  std::vector<double> terms(static_cast<std::size_t>(G));
  for (int g = 0; g < G; ++g) {
    const auto gi = static_cast<std::size_t>(g);
    double lp = std::log(params.theta[gi]) +
                std::log(params.pi(gi, static_cast<std::size_t>(record.user))) +
                std::log(params.phi(gi, static_cast<std::size_t>(record.spot)));
    if (has_time(params.variant)) {
      lp += std::log(params.tau(gi, static_cast<std::size_t>(record.time_slot)));
    }
    for (int w : record.words) lp += std::log(word_prob(params, g, record.spot, record.time_slot, w));
    terms[gi] = lp;
  }
  return log_sum_exp(terms);
}

std::vector<double> group_given_user(const UemParams& params, int user) {
  check_index(user, params.dims().users, "user");
  std::vector<double> post(params.theta.size());
  double total = 0.0;
  for (std::size_t g = 0; g < post.size(); ++g) {
    post[g] = params.theta[g] * params.pi(g, static_cast<std::size_t>(user));
    total += post[g];
  }
  if (total > 0.0) {
    for (auto& x : post) x /= total;
  } else {
    post = params.theta;
  }
  return post;
}

double perplexity_locations(const UemParams& params, const Corpus& test,
                            const std::vector<bool>& known_users) {
  if (test.size() == 0) throw ModelError("empty test corpus");
  double total = 0.0;
  for (const auto& r : test.records()) {
    const auto weights = is_known(known_users, r.user) ? group_given_user(params, r.user)
                                                       : params.theta;
    double p = 0.0;
    for (std::size_t g = 0; g < weights.size(); ++g) {
      p += weights[g] * params.phi(g, static_cast<std::size_t>(r.spot));
    }
    total += std::log(p);
  }
  return std::exp(-total / static_cast<double>(test.size()));
}

double perplexity_locations(const UemParams& params, const Corpus& test) {
  return perplexity_locations(params, test,
                              std::vector<bool>(static_cast<std::size_t>(params.dims().users), true));
}

double perplexity_words(const UemParams& params, const Corpus& test,
                        const std::vector<bool>& known_users) {
  if (test.size() == 0) throw ModelError("empty test corpus");
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& r : test.records()) {
    if (r.words.empty()) continue;
    const auto weights = is_known(known_users, r.user) ? group_given_user(params, r.user)
                                                       : params.theta;
    for (int w : r.words) {
      double p = 0.0;
      for (std::size_t g = 0; g < weights.size(); ++g) {
        p += weights[g] * word_prob(params, static_cast<int>(g), r.spot, r.time_slot, w);
      }
      total += std::log(p);
      ++tokens;
    }
  }
  if (tokens == 0) throw ModelError("test corpus has no word tokens");
  return std::exp(-total / static_cast<double>(tokens));
}

double perplexity_words(const UemParams& params, const Corpus& test) {
  return perplexity_words(params, test,
                          std::vector<bool>(static_cast<std::size_t>(params.dims().users), true));
}

}  // namespace uem

#include "uem/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

namespace uem {
namespace {

using json = nlohmann::json;

void only_keys(const json& obj, const char* where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(std::string("'") + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    const bool ok = std::any_of(allowed.begin(), allowed.end(),
                                [&](const char* a) { return key == a; });
    if (!ok) throw ConfigError("unknown key '" + key + "' in '" + where + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj[key].get<T>();
}

QuantileMode parse_quantile_mode(const std::string& s) {
  if (s == "auto") return QuantileMode::Auto;
  if (s == "exact") return QuantileMode::Exact;
  if (s == "mc") return QuantileMode::MonteCarlo;
  throw ConfigError("posterior.mode must be auto, exact or mc");
}

}  // namespace

void AppConfig::set_posterior(const PosteriorSettings& settings) {
  experiment.posterior = settings;
  service.posterior = settings;
}

void AppConfig::validate() const {
  train.resolved();
  experiment.validate();
  const auto& p = service.posterior;
  if (!(p.floor > 0.0 && p.floor < 0.2)) throw ConfigError("floor must lie in (0, 0.2)");
  if (p.mc_size == 0 || p.mc_resamples < 1) throw ConfigError("Monte Carlo settings must be positive");
  if (service.port < 0 || service.port > 65535) throw ConfigError("port out of range");
}

AppConfig config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  AppConfig c;
  try {
    only_keys(j, "config", {"corpus", "model", "report", "train", "experiment", "service", "posterior"});
    read(j, "corpus", c.corpus_path);
    read(j, "model", c.model_path);
    read(j, "report", c.report_path);

    if (j.contains("train")) {
      const json& t = j["train"];
      only_keys(t, "train", {"variant", "groups", "iterations", "burn_in", "seed", "trace_interval",
                             "alpha", "beta", "gamma", "delta", "kappa", "epsilon", "iota",
                             "eta_prior"});
      if (t.contains("variant")) c.train.variant = parse_variant(t["variant"].get<std::string>());
      read(t, "groups", c.train.hyper.num_groups);
      read(t, "iterations", c.train.iterations);
      read(t, "burn_in", c.train.burn_in);
      read(t, "seed", c.train.seed);
      read(t, "trace_interval", c.train.trace_interval);
      read(t, "alpha", c.train.hyper.alpha);
      read(t, "beta", c.train.hyper.beta);
      read(t, "gamma", c.train.hyper.gamma);
      read(t, "delta", c.train.hyper.delta);
      read(t, "kappa", c.train.hyper.kappa);
      read(t, "epsilon", c.train.hyper.epsilon);
      read(t, "iota", c.train.hyper.iota);
      read(t, "eta_prior", c.train.hyper.eta_prior);
    }

    if (j.contains("experiment")) {
      const json& e = j["experiment"];
      only_keys(e, "experiment", {"methods", "split", "ratio", "ks", "runs", "distribution",
                                  "sigma", "seed", "threads"});
      if (e.contains("methods")) {
        c.experiment.methods.clear();
        for (const auto& m : e["methods"]) {
          c.experiment.methods.push_back(parse_recommender(m.get<std::string>()));
        }
      }
      if (e.contains("split")) c.experiment.split = parse_split_mode(e["split"].get<std::string>());
      read(e, "ratio", c.experiment.ratio);
      read(e, "ks", c.experiment.ks);
      read(e, "runs", c.experiment.runs);
      read(e, "distribution", c.experiment.distribution);
      read(e, "sigma", c.experiment.distribution_sigma);
      read(e, "seed", c.experiment.seed);
      read(e, "threads", c.experiment.threads);
    }

    if (j.contains("service")) {
      const json& s = j["service"];
      only_keys(s, "service", {"bind", "idle_timeout_seconds", "snapshot", "top_k", "batch_size",
                               "distribution", "sigma"});
      if (s.contains("bind")) parse_bind(s["bind"].get<std::string>(), c.service.host, c.service.port);
      if (s.contains("idle_timeout_seconds")) {
        c.service.idle_timeout = std::chrono::seconds(s["idle_timeout_seconds"].get<long>());
      }
      read(s, "snapshot", c.service.snapshot_path);
      read(s, "top_k", c.service.top_k);
      read(s, "batch_size", c.service.batch_size);
      read(s, "distribution", c.service.distribution);
      read(s, "sigma", c.service.distribution_sigma);
    }

    PosteriorSettings ps;
    if (j.contains("posterior")) {
      const json& p = j["posterior"];
      only_keys(p, "posterior", {"floor", "mode", "exact_limit", "mc_size", "mc_resamples", "seed"});
      read(p, "floor", ps.floor);
      if (p.contains("mode")) ps.mode = parse_quantile_mode(p["mode"].get<std::string>());
      read(p, "exact_limit", ps.exact_limit);
      read(p, "mc_size", ps.mc_size);
      read(p, "mc_resamples", ps.mc_resamples);
      read(p, "seed", ps.seed);
    }
    c.set_posterior(ps);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config has a field of the wrong type: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.experiment.train = c.train;
  return c;
}

AppConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

void apply_env(AppConfig& config, const EnvLookup& lookup) {
  if (auto bind = lookup("UEM_BIND")) {
    try {
      parse_bind(*bind, config.service.host, config.service.port);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("UEM_BIND: ") + e.what());
    }
  }
  if (auto model = lookup("UEM_MODEL")) config.model_path = *model;
}

std::optional<std::string> process_env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

std::vector<int> parse_int_list(std::string_view text) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = std::min(text.find(',', pos), text.size());
    const std::string_view part = text.substr(pos, comma - pos);
    int v = 0;
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (part.empty() || ec != std::errc() || ptr != part.data() + part.size()) {
      throw ConfigError("expected a comma-separated list of integers, got '" + std::string(text) + "'");
    }
    out.push_back(v);
    pos = comma + 1;
  }
  return out;
}

}  // namespace uem

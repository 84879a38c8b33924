// uem: ingest, synthesize, train, evaluate, recommend and serve.

#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "uem/config.hpp"
#include "uem/corpus.hpp"
#include "uem/experiment.hpp"
#include "uem/inference.hpp"
#include "uem/model.hpp"
#include "uem/recommend.hpp"
#include "uem/service.hpp"
#include "uem/trained_model.hpp"

namespace {

using json = nlohmann::json;
using namespace uem;

// Exit status for failures that are not usage errors.
constexpr int kFailure = 1;

struct CommonFlags {
  std::optional<std::string> config;
};

struct TrainFlags {
  std::optional<std::string> variant;
  std::optional<int> groups;
  std::optional<int> iterations;
  std::optional<int> burn_in;
  std::optional<std::uint64_t> seed;
  std::optional<int> trace_interval;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--variant", f.variant, "Model variant: b, s, t or st");
  cmd->add_option("--groups", f.groups, "Number of experience groups |G|")->check(CLI::PositiveNumber);
  cmd->add_option("--iterations", f.iterations,
                  "Gibbs sweeps (default 5000 + 1500 |G|, capped at 150000)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--burn-in", f.burn_in, "Sweeps discarded before averaging (default half)")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--seed", f.seed, "Random seed");
}

void apply_train_flags(const TrainFlags& f, TrainConfig& t) {
  if (f.variant) t.variant = parse_variant(*f.variant);
  if (f.groups) t.hyper.num_groups = *f.groups;
  if (f.iterations) t.iterations = *f.iterations;
  if (f.burn_in) t.burn_in = *f.burn_in;
  if (f.seed) t.seed = *f.seed;
  if (f.trace_interval) t.trace_interval = *f.trace_interval;
}

AppConfig base_config(const CommonFlags& common) {
  AppConfig cfg = common.config ? load_config(*common.config) : AppConfig{};
  apply_env(cfg, process_env);
  return cfg;
}

InputFormat format_for(const std::optional<std::string>& flag, const std::string& path) {
  return flag ? parse_input_format(*flag) : guess_input_format(path);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

std::string corpus_text(const Corpus& corpus, InputFormat fmt) {
  std::ostringstream out;
  if (fmt == InputFormat::Csv) {
    write_csv(out, corpus);
  } else {
    write_jsonl(out, corpus);
  }
  return out.str();
}

// ---- ingest ---------------------------------------------------------------

struct IngestFlags {
  std::string input;
  std::optional<std::string> format;
  int min_pois = 1;
  std::optional<std::string> output;
  std::optional<std::string> output_format;
};

int run_ingest(const IngestFlags& f) {
  Corpus corpus = ingest(f.input, format_for(f.format, f.input));
  if (f.min_pois > 1) corpus = filter_min_pois(corpus, f.min_pois);
  std::cout << format_summary(corpus.summary());
  if (f.output) {
    write_text(*f.output, corpus_text(corpus, format_for(f.output_format, *f.output)));
  }
  return 0;
}

// ---- synth ----------------------------------------------------------------

struct SynthFlags {
  std::string output;
  std::optional<std::string> format;
  std::optional<std::string> params;
  std::optional<std::string> truth;
  int users = 50;
  int spots = 40;
  int words = 30;
  std::size_t records = 20000;
  std::string words_per_record = "4";
  TrainFlags train;
};

int run_synth(const CommonFlags& common, const SynthFlags& f) {
  AppConfig cfg = base_config(common);
  apply_train_flags(f.train, cfg.train);
  Rng rng(cfg.train.seed);
  UemParams params;
  Hyperparams hyper = cfg.train.hyper;
  if (f.params) {
    TrainedModel given = load_model(*f.params);
    params = given.params;
    hyper = given.hyper;
  } else {
    params = sample_params(hyper, cfg.train.variant, Dims{f.users, f.spots, f.words, kTimeSlots}, rng);
  }
  const auto range = parse_int_list(f.words_per_record);
  if (range.empty() || range.size() > 2) throw ConfigError("--words-per-record takes n or min,max");
  const WordCountRange wc{range.front(), range.back()};
  const GeneratedCorpus gen = generate_corpus(params, f.records, wc, rng);
  write_text(f.output, corpus_text(gen.corpus, format_for(f.format, f.output)));
  if (f.truth) save_model(*f.truth, make_trained_model(gen.corpus, params, hyper));
  std::cout << format_summary(gen.corpus.summary());
  return 0;
}

// ---- train ----------------------------------------------------------------

struct TrainCmdFlags {
  std::optional<std::string> input;
  std::optional<std::string> format;
  std::optional<std::string> model;
  double ratio = 1.0;
  std::string split = "time";
  int min_pois = 2;
  std::optional<std::string> trace;
  TrainFlags train;
};

int run_train(const CommonFlags& common, const TrainCmdFlags& f) {
  AppConfig cfg = base_config(common);
  apply_train_flags(f.train, cfg.train);
  if (f.input) cfg.corpus_path = *f.input;
  if (f.model) cfg.model_path = *f.model;
  if (cfg.corpus_path.empty()) throw ConfigError("train needs --input (or 'corpus' in the config)");
  if (cfg.model_path.empty()) throw ConfigError("train needs --model (or 'model' in the config)");
  if (!(f.ratio > 0.0 && f.ratio <= 1.0)) throw ConfigError("--ratio must lie in (0, 1]");

  Corpus corpus = ingest(cfg.corpus_path, format_for(f.format, cfg.corpus_path));
  if (f.min_pois > 1) corpus = filter_min_pois(corpus, f.min_pois);

  std::optional<SplitResult> parts;
  if (f.ratio < 1.0) parts = split(corpus, parse_split_mode(f.split), f.ratio, cfg.train.seed);
  const Corpus& train = parts ? parts->train : corpus;
  const Corpus* validation = parts ? &parts->test : nullptr;

  std::ofstream trace_file;
  std::ostream* trace_out = &std::cout;
  if (f.trace) {
    trace_file.open(*f.trace, std::ios::binary);
    if (!trace_file) throw std::runtime_error("cannot write '" + *f.trace + "'");
    trace_out = &trace_file;
  }
  const TrainConfig resolved = cfg.train.resolved();
  std::cerr << "training " << to_string(resolved.variant) << " with " << resolved.hyper.num_groups
            << " groups for " << resolved.iterations << " sweeps (burn-in " << resolved.burn_in
            << ") on " << train.size() << " records\n";
  const FitResult result = fit_traced(train, resolved, validation, [&](const TracePoint& p) {
    *trace_out << json{{"sweep", p.sweep},
                       {"heldout_loglik", p.heldout_loglik},
                       {"elapsed_seconds", p.elapsed_seconds}}
                      .dump()
               << "\n"
               << std::flush;
  });
  save_model(cfg.model_path, make_trained_model(train, result.params, resolved.hyper));
  std::cerr << "wrote " << cfg.model_path << "\n";
  return 0;
}

// ---- eval -----------------------------------------------------------------

struct EvalFlags {
  std::vector<std::string> inputs;
  std::optional<std::string> format;
  std::optional<std::string> methods;
  std::optional<std::string> ks;
  std::optional<int> runs;
  std::optional<std::string> split;
  std::optional<double> ratio;
  std::optional<std::string> distribution;
  std::optional<double> sigma;
  std::optional<int> threads;
  std::optional<std::string> report;
  std::optional<std::string> csv;
  int min_pois = 2;
  TrainFlags train;
};

int run_eval(const CommonFlags& common, const EvalFlags& f) {
  AppConfig cfg = base_config(common);
  apply_train_flags(f.train, cfg.train);
  ExperimentConfig& e = cfg.experiment;
  e.train = cfg.train;
  if (f.train.seed) e.seed = *f.train.seed;
  if (f.methods) {
    e.methods.clear();
    std::string_view rest = *f.methods;
    while (!rest.empty()) {
      const auto comma = std::min(rest.find(','), rest.size());
      e.methods.push_back(parse_recommender(rest.substr(0, comma)));
      rest = comma < rest.size() ? rest.substr(comma + 1) : std::string_view{};
    }
  }
  if (f.ks) e.ks = parse_int_list(*f.ks);
  if (f.runs) e.runs = *f.runs;
  if (f.split) e.split = parse_split_mode(*f.split);
  if (f.ratio) e.ratio = *f.ratio;
  if (f.distribution) e.distribution = *f.distribution;
  if (f.sigma) e.distribution_sigma = *f.sigma;
  if (f.threads) e.threads = *f.threads;
  if (f.report) cfg.report_path = *f.report;

  std::vector<std::string> inputs = f.inputs;
  if (inputs.empty() && !cfg.corpus_path.empty()) inputs.push_back(cfg.corpus_path);
  if (inputs.empty()) throw ConfigError("eval needs --input (or 'corpus' in the config)");

  std::vector<EvalReport> all;
  std::vector<std::vector<EvalReport>> by_city;
  for (const auto& path : inputs) {
    Corpus corpus = ingest(path, format_for(f.format, path));
    if (f.min_pois > 1) corpus = filter_min_pois(corpus, f.min_pois);
    auto reports = run_experiments(e, corpus);
    for (auto& r : reports) r.city = inputs.size() > 1 ? path : std::string{};
    by_city.push_back(reports);
    all.insert(all.end(), reports.begin(), reports.end());
  }

  std::vector<CityAverage> cities;
  if (inputs.size() > 1) {
    for (std::size_t m = 0; m < e.methods.size(); ++m) {
      std::vector<EvalReport> same;
      for (const auto& city : by_city) same.push_back(city[m]);
      cities.push_back(average_cities(same));
    }
  }

  std::ostringstream report;
  write_report_json(report, all, cities);
  if (!cfg.report_path.empty()) {
    write_text(cfg.report_path, report.str());
  }
  if (f.csv) {
    std::ostringstream csv;
    write_report_csv(csv, all);
    write_text(*f.csv, csv.str());
  }

  // Human-readable summary; the report file carries the full detail.
  std::cout << "method";
  for (int k : e.ks) std::cout << "\tP@" << k << "\tR@" << k << "\tF@" << k << "\tGini@" << k;
  std::cout << "\n";
  auto row = [&](const std::string& label, const std::vector<PrfScore>& avg,
                 const std::vector<double>& g) {
    std::cout << label;
    for (std::size_t i = 0; i < e.ks.size(); ++i) {
      std::cout << "\t" << avg[i].precision << "\t" << avg[i].recall << "\t" << avg[i].f << "\t"
                << g[i];
    }
    std::cout << "\n";
  };
  for (const auto& r : all) {
    row((r.city.empty() ? "" : r.city + ":") + std::string(to_string(r.method)), r.averages, r.gini);
  }
  for (const auto& c : cities) row("average:" + std::string(to_string(c.method)), c.averages, c.gini);
  for (const auto& r : all) {
    std::size_t excluded = 0;
    for (const auto& run : r.per_run) excluded += run.users_excluded;
    if (excluded) std::cerr << "excluded " << excluded << " user-runs (no relevant spots, or too few unexperienced items)\n";
  }
  return 0;
}

// ---- recommend ------------------------------------------------------------

struct RecommendFlags {
  std::optional<std::string> model;
  std::optional<std::string> user;
  std::optional<std::string> ratings;
  std::string method = "al";
  std::size_t k = 10;
  bool pairs = false;
  std::optional<std::string> distribution;
  std::optional<double> sigma;
};

// Ratings file: a JSON array (or {"ratings": [...]}) of objects with a score
// and either an image_id or a spot name and/or word names.
std::vector<RatedItem> read_ratings(const std::string& path, const TrainedModel& model,
                                    const Catalog& catalog) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open ratings file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("ratings file is not valid JSON: " + std::string(e.what()));
  }
  if (j.is_object() && j.contains("ratings")) j = j["ratings"];
  if (!j.is_array()) throw std::runtime_error("ratings file must hold an array of ratings");
  std::vector<RatedItem> out;
  std::size_t n = 0;
  for (const auto& e : j) {
    ++n;
    const std::string where = "rating " + std::to_string(n);
    if (!e.is_object() || !e.contains("score") || !e["score"].is_number_integer()) {
      throw std::runtime_error(where + ": needs an integer score");
    }
    RatedItem r;
    r.score = e["score"].get<int>();
    if (!valid_rating(r.score)) throw std::runtime_error(where + ": score outside -2..2");
    if (e.contains("image_id")) {
      const Item* item = catalog.find(e["image_id"].get<std::string>());
      if (!item) throw std::runtime_error(where + ": unknown image_id");
      r.item = *item;
    } else {
      if (e.contains("spot")) r.item.spot = model.spots.at(e["spot"].get<std::string>());
      if (e.contains("words")) {
        for (const auto& w : e["words"]) r.item.words.push_back(model.words.at(w.get<std::string>()));
        std::sort(r.item.words.begin(), r.item.words.end());
      }
      if (!r.item.spot && r.item.words.empty()) {
        throw std::runtime_error(where + ": needs an image_id, a spot or words");
      }
      r.item.image_id = "file" + std::to_string(n);
    }
    out.push_back(std::move(r));
  }
  return out;
}

int run_recommend(const CommonFlags& common, const RecommendFlags& f) {
  AppConfig cfg = base_config(common);
  if (f.model) cfg.model_path = *f.model;
  if (cfg.model_path.empty()) throw ConfigError("recommend needs --model (or 'model' in the config)");
  if (f.distribution) cfg.service.distribution = *f.distribution;
  if (f.sigma) cfg.service.distribution_sigma = *f.sigma;
  const TrainedModel model = load_model(cfg.model_path);
  const UemParams& p = model.params;

  std::vector<double> posterior;
  if (f.ratings) {
    const Catalog catalog = model.catalog(parse_method(f.method));
    const RankIndex index(p, catalog);
    const auto dist = make_rating_distribution(cfg.service.distribution, cfg.service.distribution_sigma);
    const auto ratings = read_ratings(*f.ratings, model, catalog);
    posterior = group_posterior(index, ratings, dist, {}, cfg.service.posterior);
    for (const auto& s : recommend_spots(p, posterior, f.k)) {
      std::cout << model.spots.name(s.index) << "\t" << json(s.score).dump() << "\n";
    }
  } else if (f.user) {
    const auto u = model.users.find(*f.user);
    if (!u || !model.known_users[static_cast<std::size_t>(*u)]) {
      std::cerr << "error: user '" << *f.user
                << "' has no training records; rate a few items instead (--ratings FILE, or a "
                   "session via 'uem serve')\n";
      return kFailure;
    }
    const auto ranked = score_locations(p, *u, model.known_users);
    for (std::size_t i = 0; i < ranked.size() && i < f.k; ++i) {
      std::cout << model.spots.name(ranked[i].index) << "\t" << json(ranked[i].score).dump() << "\n";
    }
    posterior = group_given_user(p, *u);
  } else {
    throw ConfigError("recommend needs --user or --ratings");
  }

  if (f.pairs) {
    for (const auto& s : recommend_pairs(p, posterior, f.k)) {
      std::cout << model.spots.name(s.spot) << "\t"
                << (model.words.size() > 0 ? model.words.name(s.word) : std::to_string(s.word))
                << "\t" << json(s.score).dump() << "\n";
    }
  }
  return 0;
}

// ---- serve ----------------------------------------------------------------

struct ServeFlags {
  std::optional<std::string> model;
  std::optional<std::string> bind;
  std::optional<long> idle_timeout;
  std::optional<std::string> snapshot;
  std::optional<std::size_t> k;
};

httplib::Server* g_server = nullptr;

extern "C" void stop_server(int) {
  if (g_server) g_server->stop();
}

int run_serve(const CommonFlags& common, const ServeFlags& f) {
  AppConfig cfg = base_config(common);
  if (f.model) cfg.model_path = *f.model;
  if (f.bind) parse_bind(*f.bind, cfg.service.host, cfg.service.port);
  if (f.idle_timeout) cfg.service.idle_timeout = std::chrono::seconds(*f.idle_timeout);
  if (f.snapshot) cfg.service.snapshot_path = *f.snapshot;
  if (f.k) cfg.service.top_k = *f.k;

  SessionService service(cfg.service);
  if (!cfg.model_path.empty()) {
    service.set_model(std::make_shared<const TrainedModel>(load_model(cfg.model_path)));
  } else {
    std::cerr << "warning: no model given; every request will answer 503\n";
  }
  httplib::Server server;
  service.mount(server);
  g_server = &server;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  int port = cfg.service.port;
  if (port == 0) {
    port = server.bind_to_any_port(cfg.service.host);
  } else if (!server.bind_to_port(cfg.service.host, port)) {
    port = -1;
  }
  if (port < 0) {
    std::cerr << "error: cannot bind " << cfg.service.host << ":" << cfg.service.port << "\n";
    return kFailure;
  }
  std::cerr << "listening on " << cfg.service.host << ":" << port << "\n";
  server.listen_after_bind();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tourist experience models: ingest, synth, train, eval, recommend, serve"};
  app.require_subcommand(1);
  CommonFlags common;
  app.add_option("--config", common.config, "JSON config file")->check(CLI::ExistingFile);

  IngestFlags ingest_f;
  auto* ingest_cmd = app.add_subcommand("ingest", "Read a corpus and print its summary");
  ingest_cmd->add_option("--input", ingest_f.input, "Corpus file (jsonl or csv)")->required();
  ingest_cmd->add_option("--format", ingest_f.format, "jsonl or csv (default from extension)");
  ingest_cmd->add_option("--min-pois", ingest_f.min_pois,
                         "Drop users with fewer distinct spots (default 1, no filter)")
      ->check(CLI::PositiveNumber);
  ingest_cmd->add_option("--output", ingest_f.output, "Write the (filtered) corpus here");
  ingest_cmd->add_option("--output-format", ingest_f.output_format, "jsonl or csv");

  SynthFlags synth_f;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic corpus");
  synth_cmd->add_option("--output", synth_f.output, "Corpus file to write")->required();
  synth_cmd->add_option("--format", synth_f.format, "jsonl or csv (default from extension)");
  synth_cmd->add_option("--params", synth_f.params, "Model file whose parameters generate the data");
  synth_cmd->add_option("--truth", synth_f.truth, "Also save the generating parameters as a model file");
  synth_cmd->add_option("--users", synth_f.users, "Users when sampling parameters")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--spots", synth_f.spots, "Spots when sampling parameters")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--words", synth_f.words, "Words when sampling parameters")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--records", synth_f.records, "Records to generate")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--words-per-record", synth_f.words_per_record, "n or min,max");
  add_train_flags(synth_cmd, synth_f.train);

  TrainCmdFlags train_f;
  auto* train_cmd = app.add_subcommand("train", "Fit a model and save it");
  train_cmd->add_option("--input", train_f.input, "Corpus file");
  train_cmd->add_option("--format", train_f.format, "jsonl or csv (default from extension)");
  train_cmd->add_option("--model", train_f.model, "Model file to write");
  train_cmd->add_option("--ratio", train_f.ratio,
                        "Fraction used for training; the rest is held out for the trace (default 1)");
  train_cmd->add_option("--split", train_f.split, "time or user");
  train_cmd->add_option("--min-pois", train_f.min_pois, "Drop users with fewer distinct spots (default 2)")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--trace", train_f.trace, "Write the held-out trace here instead of stdout");
  train_cmd->add_option("--trace-interval", train_f.train.trace_interval, "Sweeps between trace points")
      ->check(CLI::NonNegativeNumber);
  add_train_flags(train_cmd, train_f.train);

  EvalFlags eval_f;
  auto* eval_cmd = app.add_subcommand("eval", "Run the evaluation protocol and write a report");
  eval_cmd->add_option("--input", eval_f.inputs, "Corpus file; repeat for several cities");
  eval_cmd->add_option("--format", eval_f.format, "jsonl or csv (default from extension)");
  eval_cmd->add_option("--method", eval_f.methods,
                       "Comma-separated: base, al, wtol, wl, popularity, random");
  eval_cmd->add_option("--k", eval_f.ks, "Comma-separated cutoffs (default 5,10,15)");
  eval_cmd->add_option("--runs", eval_f.runs, "Repetitions (default 10)")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--split", eval_f.split, "time or user");
  eval_cmd->add_option("--ratio", eval_f.ratio, "Train fraction (default 0.8)");
  eval_cmd->add_option("--distribution", eval_f.distribution, "normal or exponential");
  eval_cmd->add_option("--sigma", eval_f.sigma, "Scale of the exponential rating distribution");
  eval_cmd->add_option("--threads", eval_f.threads, "Parallel runs (default all cores)");
  eval_cmd->add_option("--report", eval_f.report, "JSON report file");
  eval_cmd->add_option("--csv", eval_f.csv, "Per-user CSV file");
  eval_cmd->add_option("--min-pois", eval_f.min_pois, "Drop users with fewer distinct spots (default 2)")
      ->check(CLI::PositiveNumber);
  add_train_flags(eval_cmd, eval_f.train);

  RecommendFlags rec_f;
  auto* rec_cmd = app.add_subcommand("recommend", "Top-k spots for a known user or a set of ratings");
  rec_cmd->add_option("--model", rec_f.model, "Model file");
  auto* user_opt = rec_cmd->add_option("--user", rec_f.user, "User id seen in training");
  rec_cmd->add_option("--ratings", rec_f.ratings, "JSON ratings file for a new user")->excludes(user_opt);
  rec_cmd->add_option("--method", rec_f.method, "Catalog for --ratings: al, wtol or wl");
  rec_cmd->add_option("--k", rec_f.k, "Number of recommendations")->check(CLI::PositiveNumber);
  rec_cmd->add_flag("--pairs", rec_f.pairs, "Also list (spot, word) pairs");
  rec_cmd->add_option("--distribution", rec_f.distribution, "normal or exponential");
  rec_cmd->add_option("--sigma", rec_f.sigma, "Scale of the exponential rating distribution");
  rec_cmd->get_option("--user")->excludes("--ratings");

  ServeFlags serve_f;
  auto* serve_cmd = app.add_subcommand("serve", "Start the HTTP session API");
  serve_cmd->add_option("--model", serve_f.model, "Model file (or UEM_MODEL)");
  serve_cmd->add_option("--bind", serve_f.bind, "host:port (or UEM_BIND; default 127.0.0.1:8080)");
  serve_cmd->add_option("--idle-timeout", serve_f.idle_timeout, "Seconds before an idle session expires");
  serve_cmd->add_option("--snapshot", serve_f.snapshot, "File that sessions are saved to and restored from");
  serve_cmd->add_option("--k", serve_f.k, "Recommendations per response");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*ingest_cmd) return run_ingest(ingest_f);
    if (*synth_cmd) return run_synth(common, synth_f);
    if (*train_cmd) return run_train(common, train_f);
    if (*eval_cmd) return run_eval(common, eval_f);
    if (*rec_cmd) return run_recommend(common, rec_f);
    if (*serve_cmd) return run_serve(common, serve_f);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return 2;
}

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <map>

#include <json.hpp>

#include "support/synthetic.hpp"
#include "uem/config.hpp"
#include "uem/inference.hpp"
#include "uem/trained_model.hpp"

using namespace uem;
using json = nlohmann::json;

namespace {

TrainedModel small_model(Variant v) {
  Rng prng(3);
  const UemParams truth = testing::separable_params(v, prng);
  Rng rng(4);
  const Corpus c = generate_corpus(truth, 800, {1, 3}, rng).corpus;
  TrainConfig cfg;
  cfg.variant = v;
  cfg.hyper.num_groups = 3;
  cfg.iterations = 10;
  return make_trained_model(c, fit(c, cfg), cfg.hyper);
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("uem_test_" + name);
}

}  // namespace

TEST_SUITE("persistence") {
  TEST_CASE("model round trip preserves scores exactly") {
    for (Variant v : {Variant::B, Variant::S, Variant::T, Variant::ST}) {
      const TrainedModel m = small_model(v);
      const std::string text = model_to_json(m);
      const TrainedModel back = model_from_json(text);
      CHECK(back.params == m.params);
      CHECK(back.users == m.users);
      CHECK(back.words == m.words);
      CHECK(back.known_users == m.known_users);
      CHECK(back.observations == m.observations);
      CHECK(model_to_json(back) == text);
      for (int u = 0; u < 5; ++u) CHECK(score_locations(back.params, u) == score_locations(m.params, u));
    }

    const TrainedModel m = small_model(Variant::ST);
    const auto path = temp_file("model.json");
    save_model(path.string(), m);
    CHECK(load_model(path.string()).params == m.params);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_model(path.string()), ModelError);
  }

  TEST_CASE("model loader rejects broken documents") {
    const TrainedModel m = small_model(Variant::S);
    const json good = json::parse(model_to_json(m));

    json bad_row = good;
    bad_row["phi"][0][0] = bad_row["phi"][0][0].get<double>() + 0.5;
    CHECK_THROWS_AS(model_from_json(bad_row.dump()), ModelError);

    json bad_shape = good;
    bad_shape["theta"].erase(0);
    CHECK_THROWS_AS(model_from_json(bad_shape.dump()), ModelError);

    json bad_version = good;
    bad_version["version"] = 99;
    CHECK_THROWS_AS(model_from_json(bad_version.dump()), ModelError);

    json extra_tau = good;
    extra_tau["tau"] = good["phi"];
    CHECK_THROWS_AS(model_from_json(extra_tau.dump()), ModelError);

    json missing = good;
    missing.erase("vocab");
    CHECK_THROWS_AS(model_from_json(missing.dump()), ModelError);

    CHECK_THROWS_AS(model_from_json("{not json"), ModelError);
  }

  TEST_CASE("trained model bookkeeping") {
    const Corpus c = Corpus::from_indexed(
        Vocabulary({"a", "b", "c"}), Vocabulary({"x", "y"}), Vocabulary({"p", "q"}),
        {IndexedRecord{0, 1, 0, {}, {1, 0}}, IndexedRecord{2, 0, 0, {}, {}}, IndexedRecord{0, 1, 3, {}, {0, 1}}});
    const TrainedModel m = make_trained_model(c, uniform_params(Variant::B, 2, dims_of(c)), Hyperparams{});
    CHECK(m.known_users == std::vector<bool>{true, false, true});
    CHECK(m.observations.size() == 2);
    CHECK(m.catalog(Method::Al).size() == 2);
    CHECK(m.catalog(Method::Wtol).size() == 2);
  }

  TEST_CASE("config documents") {
    const AppConfig c = config_from_json(R"({
      "corpus": "data.jsonl",
      "train": {"variant": "ST", "groups": 4, "iterations": 300, "seed": 9},
      "experiment": {"methods": ["al", "random"], "split": "user", "ks": [5], "runs": 2},
      "service": {"bind": "0.0.0.0:9000", "idle_timeout_seconds": 60, "top_k": 3},
      "posterior": {"floor": 0.02, "mode": "mc", "mc_size": 100}
    })");
    CHECK(c.corpus_path == "data.jsonl");
    CHECK(c.train.variant == Variant::ST);
    CHECK(c.train.hyper.num_groups == 4);
    CHECK(c.experiment.train.iterations == 300);
    CHECK(c.experiment.methods == std::vector<Recommender>{Recommender::Al, Recommender::Random});
    CHECK(c.experiment.split == SplitMode::User);
    CHECK(c.service.host == "0.0.0.0");
    CHECK(c.service.port == 9000);
    CHECK(c.service.idle_timeout == std::chrono::seconds(60));
    CHECK(c.service.posterior.floor == 0.02);
    CHECK(c.experiment.posterior.mode == QuantileMode::MonteCarlo);
    CHECK_NOTHROW(c.validate());

    const AppConfig empty = config_from_json("{}");
    CHECK(empty.service.port == 8080);
    CHECK(empty.experiment.runs == 10);

    CHECK_THROWS_AS(config_from_json(R"({"trian": {}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"train": {"grups": 3}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"train": {"groups": "three"}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"posterior": {"mode": "fast"}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json("[1, 2"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"posterior": {"floor": 0.5}})").validate(), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/uem.json"), ConfigError);
  }

  TEST_CASE("environment overrides") {
    AppConfig c = config_from_json(R"({"model": "a.json", "service": {"bind": "127.0.0.1:1"}})");
    std::map<std::string, std::string> env{{"UEM_BIND", ":7070"}, {"UEM_MODEL", "b.json"}};
    apply_env(c, [&](const char* name) -> std::optional<std::string> {
      const auto it = env.find(name);
      if (it == env.end()) return std::nullopt;
      return it->second;
    });
    CHECK(c.service.port == 7070);
    CHECK(c.model_path == "b.json");

    AppConfig d;
    CHECK_THROWS_AS(apply_env(d, [](const char*) -> std::optional<std::string> { return "nope"; }),
                    ConfigError);
  }

  TEST_CASE("bind and list parsing") {
    std::string host;
    int port = 0;
    parse_bind("10.0.0.1:8081", host, port);
    CHECK(host == "10.0.0.1");
    CHECK(port == 8081);
    CHECK_THROWS_AS(parse_bind("host:", host, port), std::invalid_argument);
    CHECK_THROWS_AS(parse_bind("host:99999", host, port), std::invalid_argument);
    CHECK(parse_int_list("5,10,15") == std::vector<int>{5, 10, 15});
    CHECK(parse_int_list("7") == std::vector<int>{7});
    CHECK_THROWS_AS(parse_int_list("5,,10"), ConfigError);
    CHECK_THROWS_AS(parse_int_list("5x"), ConfigError);
    CHECK_THROWS_AS(parse_int_list(""), ConfigError);
  }
}

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "uem/corpus.hpp"
#include "uem/model.hpp"
#include "uem/recommend.hpp"

namespace uem {

// Everything the recommend and serve commands need from a training run:
// parameters, the vocabularies they are indexed by, which users had training
// records, and the observed (spot, words) pairs that rating catalogs are
// built from.
struct TrainedModel {
  UemParams params;
  Hyperparams hyper;
  Vocabulary users;
  Vocabulary spots;
  Vocabulary words;
  std::vector<bool> known_users;
  std::vector<Item> observations;

  Catalog catalog(Method method) const { return build_catalog(observations, method); }
};

TrainedModel make_trained_model(const Corpus& train, UemParams params, const Hyperparams& hyper);

// Versioned JSON document. Doubles are written with round-trip precision so
// a reloaded model scores byte-identically.
std::string model_to_json(const TrainedModel& model);
// Throws ModelError on a malformed document or a row that is not a simplex.
TrainedModel model_from_json(std::string_view text);

void save_model(const std::string& path, const TrainedModel& model);
TrainedModel load_model(const std::string& path);

}  // namespace uem

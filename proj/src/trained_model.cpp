#include "uem/trained_model.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace uem {
namespace {

using json = nlohmann::json;

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  }
  return rows;
}

Matrix matrix_from(const json& j, const char* name) {
  if (!j.is_array()) throw ModelError(std::string("field '") + name + "' must be an array of rows");
  if (j.empty()) return {};
  const std::size_t cols = j.at(0).size();
  Matrix m(j.size(), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto& row = j[r];
    if (!row.is_array() || row.size() != cols) {
      throw ModelError(std::string("field '") + name + "' has ragged rows");
    }
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = row[c].get<double>();
  }
  return m;
}

void check_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ModelError(std::string("field '") + name + "' has shape " + std::to_string(m.rows()) +
                     "x" + std::to_string(m.cols()) + ", expected " + std::to_string(rows) +
                     "x" + std::to_string(cols));
  }
}

}  // namespace

TrainedModel make_trained_model(const Corpus& train, UemParams params, const Hyperparams& hyper) {
  const Dims d = params.dims();
  if (d.users != train.users().size() || d.spots != train.spots().size() ||
      (train.words().size() > 0 && d.words != train.words().size())) {
    throw ModelError("parameters do not match the corpus vocabularies");
  }
  TrainedModel m;
  m.params = std::move(params);
  m.hyper = hyper;
  m.users = train.users();
  m.spots = train.spots();
  m.words = train.words();
  m.known_users = users_present(train);
  m.observations = observed_items(train);
  return m;
}

std::string model_to_json(const TrainedModel& model) {
  const UemParams& p = model.params;
  const Dims d = p.dims();
  json j;
  j["version"] = 1;
  j["variant"] = std::string(to_string(p.variant));
  j["dims"] = {{"groups", p.num_groups()},
               {"users", d.users},
               {"spots", d.spots},
               {"words", d.words},
               {"time_slots", d.time_slots}};
  j["hyper"] = {{"alpha", model.hyper.alpha},     {"beta", model.hyper.beta},
                {"gamma", model.hyper.gamma},     {"delta", model.hyper.delta},
                {"kappa", model.hyper.kappa},     {"epsilon", model.hyper.epsilon},
                {"iota", model.hyper.iota},       {"eta_prior", model.hyper.eta_prior}};
  j["theta"] = p.theta;
  j["pi"] = matrix_json(p.pi);
  j["phi"] = matrix_json(p.phi);
  j["sigma"] = matrix_json(p.sigma);
  if (!p.tau.empty()) j["tau"] = matrix_json(p.tau);
  if (!p.mu.empty()) j["mu"] = matrix_json(p.mu);
  if (!p.rho.empty()) j["rho"] = matrix_json(p.rho);
  if (!p.eta.empty()) j["eta"] = matrix_json(p.eta);
  j["vocab"] = {{"users", model.users.names()},
                {"spots", model.spots.names()},
                {"words", model.words.names()}};
  j["known_users"] = model.known_users;
  json obs = json::array();
  for (const auto& item : model.observations) {
    obs.push_back({{"spot", item.spot.value_or(-1)}, {"words", item.words}});
  }
  j["observations"] = std::move(obs);
  return j.dump() + "\n";
}

TrainedModel model_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ModelError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    if (j.value("version", 0) != 1) throw ModelError("unsupported model file version");
    TrainedModel m;
    UemParams& p = m.params;
    p.variant = parse_variant(j.at("variant").get<std::string>());
    const auto& dims = j.at("dims");
    const auto G = dims.at("groups").get<std::size_t>();
    const auto U = dims.at("users").get<std::size_t>();
    const auto L = dims.at("spots").get<std::size_t>();
    const auto W = dims.at("words").get<std::size_t>();
    const auto T = dims.at("time_slots").get<std::size_t>();
    p.time_slots = static_cast<int>(T);
    p.theta = j.at("theta").get<std::vector<double>>();
    p.pi = matrix_from(j.at("pi"), "pi");
    p.phi = matrix_from(j.at("phi"), "phi");
    p.sigma = matrix_from(j.at("sigma"), "sigma");
    if (j.contains("tau")) p.tau = matrix_from(j["tau"], "tau");
    if (j.contains("mu")) p.mu = matrix_from(j["mu"], "mu");
    if (j.contains("rho")) p.rho = matrix_from(j["rho"], "rho");
    if (j.contains("eta")) p.eta = matrix_from(j["eta"], "eta");
    if (p.theta.size() != G) throw ModelError("field 'theta' does not match dims.groups");
    check_shape(p.pi, G, U, "pi");
    check_shape(p.phi, G, L, "phi");
    check_shape(p.sigma, G, W, "sigma");
    p.validate();

    if (j.contains("hyper")) {
      const auto& h = j["hyper"];
      m.hyper.num_groups = static_cast<int>(G);
      m.hyper.alpha = h.value("alpha", 1.0);
      m.hyper.beta = h.value("beta", 1.0);
      m.hyper.gamma = h.value("gamma", 1.0);
      m.hyper.delta = h.value("delta", 1.0);
      m.hyper.kappa = h.value("kappa", 1.0);
      m.hyper.epsilon = h.value("epsilon", 1.0);
      m.hyper.iota = h.value("iota", 1.0);
      m.hyper.eta_prior = h.value("eta_prior", 1.0);
    }
    m.hyper.num_groups = static_cast<int>(G);

    const auto& vocab = j.at("vocab");
    m.users = Vocabulary(vocab.at("users").get<std::vector<std::string>>());
    m.spots = Vocabulary(vocab.at("spots").get<std::vector<std::string>>());
    m.words = Vocabulary(vocab.at("words").get<std::vector<std::string>>());
    if (static_cast<std::size_t>(m.users.size()) != U ||
        static_cast<std::size_t>(m.spots.size()) != L ||
        (m.words.size() > 0 && static_cast<std::size_t>(m.words.size()) != W)) {
      throw ModelError("vocabulary sizes do not match dims");
    }
    m.known_users = j.at("known_users").get<std::vector<bool>>();
    if (m.known_users.size() != U) throw ModelError("field 'known_users' does not match dims");
    for (const auto& o : j.at("observations")) {
      Item item;
      const int spot = o.at("spot").get<int>();
      if (spot >= static_cast<int>(L)) throw ModelError("observation spot out of range");
      if (spot >= 0) item.spot = spot;
      item.words = o.at("words").get<std::vector<int>>();
      for (int w : item.words) {
        if (w < 0 || w >= static_cast<int>(W)) throw ModelError("observation word out of range");
      }
      m.observations.push_back(std::move(item));
    }
    return m;
  } catch (const json::exception& e) {
    throw ModelError(std::string("malformed model file: ") + e.what());
  } catch (const CorpusError& e) {
    throw ModelError(std::string("malformed model vocabulary: ") + e.what());
  }
}

void save_model(const std::string& path, const TrainedModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelError("cannot write model file '" + path + "'");
  out << model_to_json(model);
  if (!out) throw ModelError("failed writing model file '" + path + "'");
}

TrainedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open model file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return model_from_json(buf.str());
}

}  // namespace uem

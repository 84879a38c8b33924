#include "uem/service.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <httplib.h>
#include <json.hpp>

namespace uem {
namespace {

using json = nlohmann::json;

SessionService::Response error(int status, const std::string& message) {
  return {status, json{{"error", message}}.dump()};
}

json item_json(const TrainedModel& m, const Item& item) {
  json j;
  j["image_id"] = item.image_id;
  j["spot"] = item.spot ? json(m.spots.name(*item.spot)) : json(nullptr);
  json words = json::array();
  for (int w : item.words) words.push_back(w < m.words.size() ? m.words.name(w) : std::to_string(w));
  j["words"] = std::move(words);
  return j;
}

json recommendations_json(const TrainedModel& m, const std::vector<double>& posterior,
                          std::size_t k) {
  json out = json::array();
  for (const auto& s : recommend_spots(m.params, posterior, k)) {
    out.push_back({{"spot", m.spots.name(s.index)}, {"index", s.index}, {"score", s.score}});
  }
  return out;
}

json next_items_json(const TrainedModel& m, const RatingSession& s, const Catalog& catalog,
                     std::size_t count) {
  std::vector<std::string> rated;
  for (const auto& r : s.history) rated.push_back(r.item.image_id);
  json out = json::array();
  for (const auto& item : select_items_for_rating(m.params, s.posterior, catalog, rated, count)) {
    out.push_back(item_json(m, item));
  }
  return out;
}

json history_json(const RatingSession& s) {
  json out = json::array();
  for (const auto& r : s.history) out.push_back({{"image_id", r.item.image_id}, {"score", r.score}});
  return out;
}

}  // namespace

void parse_bind(const std::string& text, std::string& host, int& port) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("bind address must be host:port");
  const std::string h = text.substr(0, colon);
  const std::string p = text.substr(colon + 1);
  int value = 0;
  try {
    std::size_t used = 0;
    value = std::stoi(p, &used);
    if (used != p.size()) throw std::invalid_argument("port");
  } catch (const std::exception&) {
    throw std::invalid_argument("bad port in bind address '" + text + "'");
  }
  if (value < 0 || value > 65535) throw std::invalid_argument("port out of range in '" + text + "'");
  host = h.empty() ? "0.0.0.0" : h;
  port = value;
}

SessionService::SessionService(ServiceConfig config)
    : config_(std::move(config)),
      dist_(make_rating_distribution(config_.distribution, config_.distribution_sigma)) {
  if (config_.top_k == 0) throw std::invalid_argument("top_k must be positive");
  if (config_.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (config_.id_seed) {
    id_state_ = *config_.id_seed;
  } else {
    std::random_device rd;
    id_state_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  }
}

SessionService::~SessionService() = default;

void SessionService::set_model(std::shared_ptr<const TrainedModel> model) {
  auto l = std::make_shared<Loaded>();
  l->model = std::move(model);
  for (Method m : {Method::Al, Method::Wtol, Method::Wl}) {
    try {
      l->catalogs.emplace(m, l->model->catalog(m));
    } catch (const RecommendError&) {
      continue;  // e.g. a corpus without words has no wtol catalog
    }
    l->indexes.emplace(m, std::make_unique<RankIndex>(l->model->params, l->catalogs.at(m)));
  }
  {
    std::unique_lock lock(model_mutex_);
    loaded_ = l;
  }
  {
    std::lock_guard lock(sessions_mutex_);
    sessions_.clear();
  }
  read_snapshot(*l);
}

bool SessionService::has_model() const { return loaded() != nullptr; }

std::shared_ptr<const SessionService::Loaded> SessionService::loaded() const {
  std::shared_lock lock(model_mutex_);
  return loaded_;
}

std::string SessionService::new_id() {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(mix64(id_state_++)));
  return buf;
}

std::shared_ptr<SessionService::Session> SessionService::find(const std::string& id) {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::size_t SessionService::expire_idle(Clock::time_point now) {
  std::size_t dropped = 0;
  {
    std::lock_guard lock(sessions_mutex_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      std::unique_lock session_lock(it->second->mutex, std::try_to_lock);
      if (session_lock.owns_lock() && now - it->second->last_used > config_.idle_timeout) {
        session_lock.unlock();
        it = sessions_.erase(it);
        ++dropped;
      } else {
        ++it;
      }
    }
  }
  if (dropped) write_snapshot();
  return dropped;
}

std::size_t SessionService::session_count() const {
  std::lock_guard lock(sessions_mutex_);
  return sessions_.size();
}

SessionService::Response SessionService::handle_create(const std::string& body) {
  const auto l = loaded();
  if (!l) return error(503, "no model loaded");
  expire_idle(Clock::now());
  Method method = Method::Al;
  try {
    if (!body.empty()) {
      const json j = json::parse(body);
      if (!j.is_object()) return error(400, "request body must be a JSON object");
      if (j.contains("method")) {
        if (!j["method"].is_string()) return error(422, "method must be a string");
        method = parse_method(j["method"].get<std::string>());
      }
    }
  } catch (const json::parse_error&) {
    return error(400, "request body is not valid JSON");
  } catch (const RecommendError& e) {
    return error(422, e.what());
  }
  const auto cat = l->catalogs.find(method);
  if (cat == l->catalogs.end()) {
    return error(422, "method '" + std::string(to_string(method)) + "' has no rating catalog");
  }

  auto session = std::make_shared<Session>();
  std::string id;
  {
    std::lock_guard lock(sessions_mutex_);
    do {
      id = new_id();
    } while (sessions_.count(id));
    session->state = start_session(l->model->params, id, method, cat->second.size());
    session->last_used = Clock::now();
    sessions_.emplace(id, session);
  }
  json out;
  {
    std::lock_guard lock(session->mutex);
    const RatingSession& s = session->state;
    out["session_id"] = s.session_id;
    out["method"] = std::string(to_string(s.method));
    out["posterior"] = s.posterior;
    out["catalog_size"] = s.catalog_size;
    out["items"] = next_items_json(*l->model, s, cat->second, config_.batch_size);
    out["recommendations"] = recommendations_json(*l->model, s.posterior, config_.top_k);
  }
  write_snapshot();
  return {201, out.dump()};
}

SessionService::Response SessionService::handle_ratings(const std::string& session_id,
                                                        const std::string& body) {
  const auto l = loaded();
  if (!l) return error(503, "no model loaded");
  expire_idle(Clock::now());
  auto session = find(session_id);
  if (!session) return error(404, "unknown session '" + session_id + "'");

  json list;
  try {
    const json j = json::parse(body.empty() ? std::string("[]") : body);
    if (j.is_array()) {
      list = j;
    } else if (j.is_object() && j.contains("ratings") && j["ratings"].is_array()) {
      list = j["ratings"];
    } else {
      return error(400, "expected an array of {image_id, score}");
    }
  } catch (const json::parse_error&) {
    return error(400, "request body is not valid JSON");
  }

  std::string text;
  {
    std::lock_guard lock(session->mutex);
    auto result = apply_ratings(*l, *session, list);
    if (result.status != 200) return result;
    text = std::move(result.body);
  }
  write_snapshot();
  return {200, text};
}

SessionService::Response SessionService::apply_ratings(const Loaded& loaded, Session& session,
                                                       const json& list) {
  const Loaded* l = &loaded;
  RatingSession& s = session.state;
  const Catalog& catalog = l->catalogs.at(s.method);
  std::vector<RatedItem> rated;
  std::vector<std::string> seen;
  for (const auto& h : s.history) seen.push_back(h.item.image_id);
  for (const auto& entry : list) {
    if (!entry.is_object() || !entry.contains("image_id") || !entry["image_id"].is_string()) {
      return error(422, "each rating needs a string image_id");
    }
    const std::string id = entry["image_id"].get<std::string>();
    if (!entry.contains("score") || !entry["score"].is_number_integer()) {
      return error(422, "score for '" + id + "' must be an integer in -2..2");
    }
    const auto score = entry["score"].get<long long>();
    if (score < -2 || score > 2) {
      return error(422, "score for '" + id + "' must be an integer in -2..2");
    }
    const Item* item = catalog.find(id);
    if (!item) return error(422, "unknown image_id '" + id + "'");
    if (std::find(seen.begin(), seen.end(), id) != seen.end()) {
      return error(422, "image_id '" + id + "' was already rated in this session");
    }
    seen.push_back(id);
    rated.push_back({*item, static_cast<int>(score)});
  }
  s = update_session(s, rated, *l->indexes.at(s.method), dist_, config_.posterior);
  session.last_used = Clock::now();

  json out;
  out["session_id"] = s.session_id;
  out["posterior"] = s.posterior;
  out["rated"] = s.history.size();
  out["recommendations"] = recommendations_json(*l->model, s.posterior, config_.top_k);
  out["next_items"] = next_items_json(*l->model, s, catalog, config_.batch_size);
  return {200, out.dump()};
}

SessionService::Response SessionService::handle_get(const std::string& session_id) {
  const auto l = loaded();
  if (!l) return error(503, "no model loaded");
  expire_idle(Clock::now());
  auto session = find(session_id);
  if (!session) return error(404, "unknown session '" + session_id + "'");
  std::lock_guard lock(session->mutex);
  session->last_used = Clock::now();
  const RatingSession& s = session->state;
  json out;
  out["session_id"] = s.session_id;
  out["method"] = std::string(to_string(s.method));
  out["posterior"] = s.posterior;
  out["catalog_size"] = s.catalog_size;
  out["history"] = history_json(s);
  out["recommendations"] = recommendations_json(*l->model, s.posterior, config_.top_k);
  out["next_items"] = next_items_json(*l->model, s, l->catalogs.at(s.method), config_.batch_size);
  return {200, out.dump()};
}

SessionService::Response SessionService::handle_summary() const {
  const auto l = loaded();
  if (!l) return error(503, "no model loaded");
  const UemParams& p = l->model->params;
  const Dims d = p.dims();
  json out;
  out["variant"] = std::string(to_string(p.variant));
  out["dims"] = {{"groups", p.num_groups()},
                 {"users", d.users},
                 {"spots", d.spots},
                 {"words", d.words},
                 {"time_slots", d.time_slots}};
  json catalogs = json::object();
  for (const auto& [m, c] : l->catalogs) catalogs[std::string(to_string(m))] = c.size();
  out["catalogs"] = std::move(catalogs);
  out["theta"] = p.theta;
  return {200, out.dump()};
}

void SessionService::write_snapshot() {
  if (config_.snapshot_path.empty()) return;
  json sessions = json::array();
  {
    std::lock_guard lock(sessions_mutex_);
    for (const auto& [id, session] : sessions_) {
      std::lock_guard session_lock(session->mutex);
      const RatingSession& s = session->state;
      sessions.push_back({{"session_id", s.session_id},
                          {"method", std::string(to_string(s.method))},
                          {"posterior", s.posterior},
                          {"catalog_size", s.catalog_size},
                          {"history", history_json(s)}});
    }
  }
  std::lock_guard lock(snapshot_mutex_);
  const std::string tmp = config_.snapshot_path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) return;
    out << json{{"sessions", sessions}}.dump() << "\n";
  }
  std::error_code ec;
  std::filesystem::rename(tmp, config_.snapshot_path, ec);
}

void SessionService::read_snapshot(const Loaded& l) {
  if (config_.snapshot_path.empty()) return;
  std::ifstream in(config_.snapshot_path, std::ios::binary);
  if (!in) return;
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error&) {
    return;
  }
  if (!j.contains("sessions") || !j["sessions"].is_array()) return;
  const auto now = Clock::now();
  std::lock_guard lock(sessions_mutex_);
  for (const auto& e : j["sessions"]) {
    try {
      auto session = std::make_shared<Session>();
      RatingSession& s = session->state;
      s.session_id = e.at("session_id").get<std::string>();
      s.method = parse_method(e.at("method").get<std::string>());
      const auto cat = l.catalogs.find(s.method);
      if (cat == l.catalogs.end()) continue;
      s.posterior = e.at("posterior").get<std::vector<double>>();
      if (s.posterior.size() != l.model->params.theta.size()) continue;
      s.catalog_size = cat->second.size();
      bool ok = true;
      for (const auto& h : e.at("history")) {
        const Item* item = cat->second.find(h.at("image_id").get<std::string>());
        if (!item) {
          ok = false;
          break;
        }
        s.history.push_back({*item, h.at("score").get<int>()});
      }
      if (!ok) continue;
      session->last_used = now;
      sessions_[s.session_id] = std::move(session);
    } catch (const std::exception&) {
      continue;  // skip entries that do not fit the current model
    }
  }
}

void SessionService::mount(httplib::Server& server) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  auto reply = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
  });
  server.Post("/sessions", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_create(req.body));
  });
  server.Post(R"(/sessions/([^/]+)/ratings)",
              [this, reply](const httplib::Request& req, httplib::Response& res) {
                reply(res, handle_ratings(req.matches[1], req.body));
              });
  server.Get(R"(/sessions/([^/]+))",
             [this, reply](const httplib::Request& req, httplib::Response& res) {
               reply(res, handle_get(req.matches[1]));
             });
  server.Get("/model/summary", [this, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, handle_summary());
  });
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      res.set_content(json{{"error", "not found"}}.dump(), "application/json");
    }
  });
}

}  // namespace uem

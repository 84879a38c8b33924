#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "uem/rating.hpp"
#include "uem/recommend.hpp"
#include "uem/trained_model.hpp"

#include <json.hpp>

namespace httplib {
class Server;
}

namespace uem {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::chrono::seconds idle_timeout{1800};
  std::string snapshot_path;  // empty disables the snapshot file
  std::size_t top_k = 10;
  std::size_t batch_size = 5;
  std::string distribution = "normal";
  double distribution_sigma = 1.0;
  PosteriorSettings posterior;
  std::optional<std::uint64_t> id_seed;  // fixed seed for session ids (tests)
};

// Parses "host:port" or ":port"; throws std::invalid_argument.
void parse_bind(const std::string& text, std::string& host, int& port);

// Rating sessions over a loaded model. The HTTP layer is a thin adapter over
// the handle_* methods, which take and return JSON text so they can be tested
// without a socket.
class SessionService {
 public:
  struct Response {
    int status = 200;
    std::string body;
  };
  using Clock = std::chrono::steady_clock;

  explicit SessionService(ServiceConfig config);
  ~SessionService();
  SessionService(const SessionService&) = delete;
  SessionService& operator=(const SessionService&) = delete;

  // Builds the rating catalogs and rank indexes, then restores the snapshot
  // if one is configured. Sessions from an earlier model are dropped.
  void set_model(std::shared_ptr<const TrainedModel> model);
  bool has_model() const;

  Response handle_create(const std::string& body);
  Response handle_ratings(const std::string& session_id, const std::string& body);
  Response handle_get(const std::string& session_id);
  Response handle_summary() const;

  // Drops sessions idle for longer than the timeout as of `now`.
  std::size_t expire_idle(Clock::time_point now);
  std::size_t session_count() const;

  void mount(httplib::Server& server);

 private:
  struct Session {
    std::mutex mutex;
    RatingSession state;
    Clock::time_point last_used;
  };
  struct Loaded {
    std::shared_ptr<const TrainedModel> model;
    std::map<Method, Catalog> catalogs;
    std::map<Method, std::unique_ptr<RankIndex>> indexes;
  };

  std::shared_ptr<const Loaded> loaded() const;
  std::shared_ptr<Session> find(const std::string& id);
  std::string new_id();
  // Validates and applies a JSON array of ratings; the caller holds the
  // session lock.
  Response apply_ratings(const Loaded& loaded, Session& session, const nlohmann::json& list);
  void write_snapshot();
  void read_snapshot(const Loaded& l);

  ServiceConfig config_;
  RatingDistribution dist_;

  mutable std::shared_mutex model_mutex_;
  std::shared_ptr<const Loaded> loaded_;

  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t id_state_;
  std::mutex snapshot_mutex_;
};

}  // namespace uem

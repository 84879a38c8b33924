#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "uem/experiment.hpp"
#include "uem/inference.hpp"
#include "uem/service.hpp"

namespace uem {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Settings shared by the CLI subcommands. Command-line flags override the
// config file; UEM_BIND and UEM_MODEL override both for serve.
struct AppConfig {
  std::string corpus_path;
  std::string model_path;
  std::string report_path;
  TrainConfig train;
  ExperimentConfig experiment;
  ServiceConfig service;

  // Applies the ε floor and Monte Carlo settings to both the experiment and
  // the service.
  void set_posterior(const PosteriorSettings& settings);
  void validate() const;
};

// Reads a JSON config document. Unknown keys are rejected so typos surface.
AppConfig config_from_json(std::string_view text);
AppConfig load_config(const std::string& path);

using EnvLookup = std::function<std::optional<std::string>(const char*)>;
// UEM_BIND ("host:port") and UEM_MODEL (model file path).
void apply_env(AppConfig& config, const EnvLookup& lookup);
std::optional<std::string> process_env(const char* name);

std::vector<int> parse_int_list(std::string_view text);

}  // namespace uem

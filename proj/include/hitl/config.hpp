#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "hitl/loop_sim.hpp"
#include "hitl/pipeline.hpp"
#include "hitl/ssid.hpp"

namespace hitl {

/// Value of the small TOML subset we accept: numbers, booleans, strings and
/// (nested) arrays. Inline tables, dates and dotted keys are not supported.
struct TomlValue {
  std::variant<std::int64_t, double, bool, std::string, std::vector<TomlValue>> v;
};

/// section -> key -> value; top-level keys live in section "".
using TomlDocument = std::map<std::string, std::map<std::string, TomlValue>>;

/// Throws ConfigError("line N: ...") on syntax errors and duplicate keys.
TomlDocument parse_toml(const std::string& text);

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string store = "live_store";
  double input_gain = 1.0;
  double preview_resolution = 0.02;  // seconds between preview samples
  std::uint64_t seed = 20190601;     // master seed of the 40-command schedule

  void validate() const;
};

struct ReportConfig {
  std::vector<TrialBucket> buckets = default_buckets();
  std::vector<int> trace_trials{1, 20, 40};
  std::vector<int> bode_trials{1, 40};
  int last_trials = 5;  // trials per subject averaged for the group tests
  int quadrature_nodes = 2048;
};

/// Everything a subcommand needs, with the defaults of the original study.
struct AppConfig {
  ExperimentConfig experiment;
  CohortConfig cohort;
  PoolConfig pools;
  Weighting weighting = Weighting::none;
  unsigned threads = 1;
  ReportConfig report;
  ServiceConfig service;

  void validate() const;
};

/// Unknown sections/keys and wrong types raise ConfigError naming "section.key".
AppConfig config_from_toml(const std::string& text);
AppConfig load_config(const std::string& path);
/// Canonical text of every setting; parsing it back gives the same config.
std::string to_toml(const AppConfig& cfg);

}  // namespace hitl

#pragma once

#include <map>
#include <string>

#include "equirl/agent.hpp"

namespace equirl {

/// Settings of the verification suites and the exact oracle.
struct VerifyConfig {
  int networks = 100;    ///< random networks in the equivariance suite
  int histories = 10;    ///< histories per network
  int max_length = 50;
  int depth = 5;         ///< belief-invariance history depth
  int horizon = 6;       ///< exact-solver horizon
  double discount = 0.99;
  long node_budget = 5'000'000;
  int episodes = 200;    ///< oracle policy evaluation
};

struct RunConfig {
  EnvConfig env;
  AgentConfig agent;
  VerifyConfig verify;
  std::string group = "auto";  ///< auto | reflection-2 | cyclic-4, must match the env
  std::string out;             ///< run directory, empty for the default
};

/// Flat "section.key" -> text view; the key set is fixed by the defaults.
/// Precedence: defaults < config file < explicit flags.
class Settings {
 public:
  Settings();

  /// Reads an INI file; throws config on unknown sections or keys.
  void load_file(const std::string& path);
  /// Throws config for an unknown key.
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Typed view; throws config on malformed or inconsistent values.
  RunConfig resolve() const;
  /// INI text with every effective value; loading it reproduces the run.
  std::string manifest() const;

 private:
  std::map<std::string, std::string> values_;
};

/// Root for run directories: $EQUIRL_RUN_ROOT, else "runs".
std::string default_run_root();

}  // namespace equirl

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "laber/agents.hpp"
#include "laber/diagnostics.hpp"
#include "laber/environments.hpp"

namespace laber::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2 };

struct EnvSpec {
  std::string kind = "chain";  // chain | grid
  std::size_t states = 10;
  double slip = 0.1;
  std::size_t width = 5;
  std::size_t height = 5;
  Cell goal{4, 4};
  std::vector<Cell> traps{{1, 1}, {3, 2}, {1, 3}};
  Cell start{0, 0};

  std::unique_ptr<Env> make() const;
};

struct RunConfig {
  EnvSpec env;
  AgentConfig agent;
  std::uint64_t seed = 0;
  std::uint64_t steps = 10'000;
  std::filesystem::path out = "laber-run";
  ExportFormat format = ExportFormat::csv;
  TVStudyConfig tv = TVStudyConfig::defaults();
  double significance = 0.01;
};

// Command-line values that take precedence over the config file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> steps;
  std::optional<std::string> sampler;
  std::optional<std::size_t> m;
  std::optional<std::size_t> batch_size;
  std::optional<std::filesystem::path> out;
};

// Defaults used by the tv-study subcommand before file and flags apply.
RunConfig tv_study_defaults();

// Applies an INI file ([run], [env], [agent], [diagnostics]) and then the
// overrides on top of `base`, validating everything. Throws Error(Config)
// naming the offending key.
RunConfig resolve_config(RunConfig base, const std::optional<std::filesystem::path>& file, const Overrides& overrides);

// INI text that resolve_config reads back into the same configuration.
std::string render_manifest(const RunConfig& config);

struct TrainSummary {
  std::uint64_t steps = 0;
  std::size_t episodes = 0;
  std::optional<bool> matches_oracle;
};

// Runs one training job into config.out. A 0-step run writes the manifest only.
TrainSummary train(const RunConfig& config, const std::optional<std::filesystem::path>& resume = std::nullopt);

// The two-sample counter-example: uniform, optimal and TD-error variances.
std::array<double, 3> variance_study_values();
// Prints the table and returns kOk when every value is within 1e-12 of the
// exact one and the TD-error variance exceeds the uniform one.
int report_variance_study(const std::array<double, 3>& values, std::ostream& out);

// Entry point shared by the executable and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace laber::cli

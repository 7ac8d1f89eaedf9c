#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sgmcmc/models.hpp"
#include "sgmcmc/samplers.hpp"

namespace sgmcmc::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitIo = 4;

struct GenOptions {
  ModelSpec model;
  std::size_t n = 1000;
  std::optional<std::size_t> test_n;  // default: 0 for gaussian/mixture, n/5 for classifiers
  std::uint64_t seed = 1;
  std::filesystem::path out = ".";
};

/// Writes train.csv, test.csv (when the split is non-empty) and metadata.json.
void run_gen(const GenOptions& opts);

enum class TestFunctionKind { full_chain, running_mean, log_loss };

struct RunOptions {
  std::filesystem::path data;  // directory written by run_gen
  std::filesystem::path out = ".";
  Algorithm algorithm = Algorithm::sgld;
  StepsizeSpec stepsize = 1e-4;
  double minibatch = 0.01;
  std::size_t iters = 10000;
  std::optional<std::size_t> burn_in;  // default: iters, or 0 for control-variate runs
  std::uint64_t seed = 1;
  std::optional<double> opt_stepsize;
  std::optional<std::size_t> opt_iters;
  std::size_t trajectory = 5;
  double friction = 0.01;
  double diffusion = 0.01;
  std::size_t thin = 10;
  TestFunctionKind test_function = TestFunctionKind::full_chain;
  std::size_t chains = 1;
};

struct RunSummary {
  double wall_clock_seconds = 0.0;
  std::vector<std::filesystem::path> files;
};

/// Runs the sampler and writes chain, diagnostics and manifest files.
/// Divergence still leaves the rows written so far and the manifest.
RunSummary run_sampler(const RunOptions& opts);

struct KlReport {
  double kl = 0.0;
  double wall_clock_seconds = 0.0;
};

/// Moment-matched KL from a gaussian-model chain file to its analytic posterior.
KlReport run_kl(const std::filesystem::path& chain, const std::filesystem::path& manifest);

/// "1e-4" or "theta1=5e-3,theta2=1e-3".
StepsizeSpec parse_stepsize(const std::string& text);
TestFunctionKind parse_test_function(const std::string& text);

/// Entry point shared by the executable and tests; returns the exit code.
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sgmcmc::cli

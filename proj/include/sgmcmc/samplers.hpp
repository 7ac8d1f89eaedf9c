#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "sgmcmc/data.hpp"
#include "sgmcmc/graph.hpp"

namespace sgmcmc {

using ShapeMap = std::map<std::string, Shape, std::less<>>;
using NodeMap = std::map<std::string, NodeId, std::less<>>;

/// Builds the log-likelihood of a batch of rows. The returned node may be a
/// scalar or per-row; per-row values are summed.
using LogLikBuilder = std::function<NodeId(GraphBuilder&, const NodeMap& params, const NodeMap& data)>;
using LogPriorBuilder = std::function<NodeId(GraphBuilder&, const NodeMap& params)>;

/// A log-likelihood and log-prior over named parameters, compiled into one
/// graph with outputs "log_lik" and "log_prior".
class Model {
 public:
  /// `data_rows` gives the per-observation shape of each data entry.
  /// Without a prior, log p(theta) is the constant 0. Parameters listed in
  /// `positive` must stay strictly positive.
  static Model create(ShapeMap params, ShapeMap data_rows, const LogLikBuilder& log_lik,
                      const LogPriorBuilder& log_prior = nullptr, std::set<std::string> positive = {});

  const Graph& graph() const noexcept { return graph_; }
  const ShapeMap& param_shapes() const noexcept { return params_; }
  const ShapeMap& data_rows() const noexcept { return data_rows_; }
  const std::vector<std::string>& param_names() const noexcept { return names_; }
  const std::set<std::string>& positive() const noexcept { return positive_; }

  /// ShapeError unless `theta` has exactly the declared names and shapes.
  void check_params(const TensorMap& theta) const;
  /// DomainError if a positive-constrained parameter has an entry <= 0.
  void check_support(const TensorMap& theta) const;

  double log_lik(const TensorMap& theta, const Dataset& data) const;
  double log_prior(const TensorMap& theta) const;

 private:
  Graph graph_;
  ShapeMap params_;
  ShapeMap data_rows_;
  std::vector<std::string> names_;
  std::set<std::string> positive_;
};

/// Rows per likelihood-gradient pass; sums run over chunks in row order.
inline constexpr std::size_t kGradientChunk = 1024;

/// prior gradient + (N/n) * sum of likelihood gradients over `minibatch`.
TensorMap estimate_gradient(const Model& model, const TensorMap& theta, const Dataset& minibatch,
                            std::size_t n_total);

/// Exact gradient of the log posterior over every row of `data`.
TensorMap full_log_posterior_grad(const Model& model, const Dataset& data, const TensorMap& theta);

struct ControlVariateState {
  TensorMap mode;       // estimate of the posterior mode
  TensorMap full_grad;  // full-data log-posterior gradient at `mode`
};

ControlVariateState prepare_control_variate(const Model& model, const Dataset& data, TensorMap mode);

/// full_grad + est(theta) - est(mode), both estimates on the same minibatch.
TensorMap cv_gradient(const Model& model, const TensorMap& theta, const ControlVariateState& cv,
                      const Dataset& minibatch, std::size_t n_total);

/// Plain stochastic gradient ascent for `iters` steps from `init`.
TensorMap find_mode(const Model& model, const Dataset& data, TensorMap init, double opt_stepsize,
                    std::size_t iters, double minibatch_spec, Rng& rng);

using StepsizeMap = std::map<std::string, double, std::less<>>;

enum class Algorithm { sgld, sghmc, sgnht, sgldcv, sghmccv, sgnhtcv };

std::string_view to_string(Algorithm a);
Algorithm parse_algorithm(std::string_view name);
bool uses_control_variate(Algorithm a);
bool uses_momentum(Algorithm a);

struct ChainState {
  TensorMap params;
  TensorMap momenta;                                    // sghmc, sgnht
  std::map<std::string, double, std::less<>> thermostats;  // sgnht
  std::uint64_t iteration = 0;
  Rng rng{0};
  std::uint64_t gradient_evals = 0;
};

/// Draws a minibatch and returns the configured gradient estimate.
class GradientSource {
 public:
  GradientSource(const Model& model, const Dataset& data, std::size_t batch_size,
                 const ControlVariateState* cv = nullptr);

  TensorMap operator()(const TensorMap& theta, ChainState& state) const;

  const Model& model() const noexcept { return *model_; }
  std::size_t batch_size() const noexcept { return batch_; }

 private:
  const Model* model_;
  const Dataset* data_;
  std::size_t batch_;
  const ControlVariateState* cv_;
};

// Kernels. Each advances `state` by one outer iteration. Noise is drawn per
// parameter in sorted-name order, after the step's minibatch.
void sgld_step(ChainState& state, const GradientSource& grad, const StepsizeMap& eps);
void sghmc_step(ChainState& state, const GradientSource& grad, const StepsizeMap& eps, double friction,
                std::size_t trajectory);
void sgnht_step(ChainState& state, const GradientSource& grad, const StepsizeMap& eps, double diffusion);

/// Fresh state for `algorithm` at `params`: zero momenta for sghmc, and for
/// sgnht momenta drawn from N(0, eps) with every thermostat at `diffusion`.
ChainState initial_state(Algorithm algorithm, TensorMap params, const StepsizeMap& eps, double diffusion,
                         Rng rng);

/// Scalar stepsize or one per parameter.
using StepsizeSpec = std::variant<double, StepsizeMap>;

struct SamplerConfig {
  Algorithm algorithm = Algorithm::sgld;
  StepsizeSpec stepsize = 1e-4;
  double minibatch = 0.01;
  std::size_t n_iters = 10000;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  double friction = 0.01;   // sghmc
  double diffusion = 0.01;  // sgnht: injected noise scale, also the initial thermostat
  std::size_t trajectory = 5;
  std::optional<double> opt_stepsize;
  std::optional<std::size_t> opt_iters;  // defaults to n_iters

  /// ConfigError on any invalid field.
  void validate(const Model& model) const;
  StepsizeMap resolve_stepsize(const Model& model) const;
};

/// Step-by-step chain: construct (setup), init(), then step() repeatedly.
/// The model and dataset must outlive the sampler.
class Sampler {
 public:
  Sampler(const Model& model, const Dataset& data, TensorMap init_params, SamplerConfig config);

  /// Prepares the chain. Control-variate algorithms find the mode, compute
  /// the full gradient there and start from the mode.
  void init();
  void step();
  bool ready() const noexcept { return ready_; }

  TensorMap params() const;
  const ChainState& state() const noexcept { return state_; }
  const SamplerConfig& config() const noexcept { return config_; }
  const std::optional<ControlVariateState>& control_variate() const noexcept { return cv_; }
  std::size_t batch_size() const noexcept { return batch_; }

 private:
  const Model* model_;
  const Dataset* data_;
  SamplerConfig config_;
  StepsizeMap eps_;
  std::size_t batch_;
  ChainState state_;
  std::optional<ControlVariateState> cv_;
  bool ready_ = false;
};

/// Called after every step; whatever it returns is stored instead of θ.
using TestFunction = std::function<TensorMap(const ChainState&)>;

struct ChainOutput {
  TensorMap samples;  // name -> [n_iters, ...] (or hook outputs stacked the same way)
  ChainState final_state;
};

ChainOutput run_chain(const Model& model, const Dataset& data, TensorMap init_params,
                      const SamplerConfig& config, const TestFunction& hook = nullptr);

}  // namespace sgmcmc

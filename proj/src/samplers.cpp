#include "sgmcmc/samplers.hpp"

#include <algorithm>
#include <cmath>

#include "sgmcmc/errors.hpp"

namespace sgmcmc {

// ---------------------------------------------------------------------------
// Model

Model Model::create(ShapeMap params, ShapeMap data_rows, const LogLikBuilder& log_lik,
                    const LogPriorBuilder& log_prior, std::set<std::string> positive) {
  if (params.empty()) throw ShapeError("a model needs at least one parameter");
  if (!log_lik) throw ConfigError("a model needs a log-likelihood");
  for (const auto& name : positive) {
    if (!params.contains(name)) throw UnknownVariable("positive constraint on unknown parameter '" + name + "'");
  }

  GraphBuilder b;
  NodeMap param_nodes;
  NodeMap data_nodes;
  for (const auto& [name, shape] : params) param_nodes.emplace(name, b.variable(name, shape));
  for (const auto& [name, shape] : data_rows) data_nodes.emplace(name, b.placeholder(name, shape));

  NodeId lik = log_lik(b, param_nodes, data_nodes);
  if (!b.shape(lik).empty()) lik = b.reduce_sum(lik);
  NodeId prior = log_prior ? log_prior(b, param_nodes) : b.constant(0.0);
  if (!b.shape(prior).empty()) prior = b.reduce_sum(prior);
  b.output("log_lik", lik);
  b.output("log_prior", prior);

  Model m;
  m.graph_ = std::move(b).build();
  for (const auto& [name, shape] : params) m.names_.push_back(name);
  m.params_ = std::move(params);
  m.data_rows_ = std::move(data_rows);
  m.positive_ = std::move(positive);
  return m;
}

void Model::check_params(const TensorMap& theta) const {
  if (theta.size() != params_.size()) {
    throw ShapeError("expected " + std::to_string(params_.size()) + " parameters, got " +
                     std::to_string(theta.size()));
  }
  for (const auto& [name, shape] : params_) {
    auto it = theta.find(name);
    if (it == theta.end()) throw ShapeError("missing parameter '" + name + "'");
    if (it->second.shape() != shape) {
      throw ShapeError("parameter '" + name + "' should have shape " + to_string(shape) + ", got " +
                       to_string(it->second.shape()));
    }
  }
}

void Model::check_support(const TensorMap& theta) const {
  for (const auto& name : positive_) {
    for (double v : theta.at(name).data()) {
      if (!(v > 0.0)) throw DomainError("parameter '" + name + "' must be positive, got " + format_double(v));
    }
  }
}

namespace {

Feed theta_feed(const TensorMap& theta) { return make_feed(theta); }

Feed data_feed(const TensorMap& theta, const Dataset& data) {
  Feed f = make_feed(theta);
  for (const auto& [name, t] : data.entries()) f.emplace(name, std::cref(t));
  return f;
}

}  // namespace

double Model::log_lik(const TensorMap& theta, const Dataset& data) const {
  check_params(theta);
  double total = 0.0;
  for (std::size_t begin = 0; begin < data.size(); begin += kGradientChunk) {
    const Dataset chunk = data.slice(begin, std::min(data.size(), begin + kGradientChunk));
    total += graph_.eval(data_feed(theta, chunk), "log_lik").item();
  }
  return total;
}

double Model::log_prior(const TensorMap& theta) const {
  check_params(theta);
  return graph_.eval(theta_feed(theta), "log_prior").item();
}

// ---------------------------------------------------------------------------
// Gradient estimates

namespace {

/// Sum over rows of the likelihood gradient, accumulated chunk by chunk in
/// row order so that equal inputs give bit-equal sums.
TensorMap likelihood_gradient_sum(const Model& model, const TensorMap& theta, const Dataset& rows) {
  const auto& names = model.param_names();
  TensorMap total;
  for (const auto& [name, shape] : model.param_shapes()) total.emplace(name, Tensor(shape));
  if (rows.size() <= kGradientChunk) {
    return model.graph().grad("log_lik", names, data_feed(theta, rows)).gradients;
  }
  for (std::size_t begin = 0; begin < rows.size(); begin += kGradientChunk) {
    const Dataset chunk = rows.slice(begin, std::min(rows.size(), begin + kGradientChunk));
    auto part = model.graph().grad("log_lik", names, data_feed(theta, chunk)).gradients;
    for (auto& [name, t] : total) {
      const Tensor& p = part.at(name);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] += p[i];
    }
  }
  return total;
}

TensorMap prior_gradient(const Model& model, const TensorMap& theta) {
  return model.graph().grad("log_prior", model.param_names(), theta_feed(theta)).gradients;
}

}  // namespace

TensorMap estimate_gradient(const Model& model, const TensorMap& theta, const Dataset& minibatch,
                            std::size_t n_total) {
  model.check_params(theta);
  const double scale = static_cast<double>(n_total) / static_cast<double>(minibatch.size());
  TensorMap g = prior_gradient(model, theta);
  const TensorMap lik = likelihood_gradient_sum(model, theta, minibatch);
  for (auto& [name, t] : g) {
    const Tensor& l = lik.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += scale * l[i];
  }
  return g;
}

TensorMap full_log_posterior_grad(const Model& model, const Dataset& data, const TensorMap& theta) {
  return estimate_gradient(model, theta, data, data.size());
}

ControlVariateState prepare_control_variate(const Model& model, const Dataset& data, TensorMap mode) {
  ControlVariateState cv;
  cv.full_grad = full_log_posterior_grad(model, data, mode);
  cv.mode = std::move(mode);
  return cv;
}

TensorMap cv_gradient(const Model& model, const TensorMap& theta, const ControlVariateState& cv,
                      const Dataset& minibatch, std::size_t n_total) {
  const TensorMap at_theta = estimate_gradient(model, theta, minibatch, n_total);
  const TensorMap at_mode = estimate_gradient(model, cv.mode, minibatch, n_total);
  TensorMap out = cv.full_grad;
  for (auto& [name, t] : out) {
    const Tensor& a = at_theta.at(name);
    const Tensor& b = at_mode.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += a[i] - b[i];
  }
  return out;
}

namespace {

void require_finite(const TensorMap& values, std::uint64_t iteration, const char* what) {
  for (const auto& [name, t] : values) {
    if (!t.all_finite()) throw NumericalDivergence(iteration, name, std::string("non-finite ") + what);
  }
}

}  // namespace

TensorMap find_mode(const Model& model, const Dataset& data, TensorMap init, double opt_stepsize,
                    std::size_t iters, double minibatch_spec, Rng& rng) {
  model.check_params(init);
  const std::size_t n = resolve_minibatch_size(minibatch_spec, data.size());
  for (std::size_t it = 1; it <= iters; ++it) {
    const Minibatch mb = sample_minibatch(data, n, rng);
    const TensorMap g = estimate_gradient(model, init, mb.views, data.size());
    require_finite(g, it, "gradient during mode search");
    for (auto& [name, t] : init) {
      const Tensor& gi = g.at(name);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] += opt_stepsize * gi[i];
    }
    require_finite(init, it, "parameter during mode search");
  }
  return init;
}

// ---------------------------------------------------------------------------
// Algorithms

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::sgld: return "sgld";
    case Algorithm::sghmc: return "sghmc";
    case Algorithm::sgnht: return "sgnht";
    case Algorithm::sgldcv: return "sgldcv";
    case Algorithm::sghmccv: return "sghmccv";
    case Algorithm::sgnhtcv: return "sgnhtcv";
  }
  return "unknown";
}

Algorithm parse_algorithm(std::string_view name) {
  for (Algorithm a : {Algorithm::sgld, Algorithm::sghmc, Algorithm::sgnht, Algorithm::sgldcv,
                      Algorithm::sghmccv, Algorithm::sgnhtcv}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown algorithm '" + std::string(name) + "'");
}

bool uses_control_variate(Algorithm a) {
  return a == Algorithm::sgldcv || a == Algorithm::sghmccv || a == Algorithm::sgnhtcv;
}

bool uses_momentum(Algorithm a) { return a != Algorithm::sgld && a != Algorithm::sgldcv; }

namespace {

Algorithm base_kernel(Algorithm a) {
  switch (a) {
    case Algorithm::sgldcv: return Algorithm::sgld;
    case Algorithm::sghmccv: return Algorithm::sghmc;
    case Algorithm::sgnhtcv: return Algorithm::sgnht;
    default: return a;
  }
}

}  // namespace

GradientSource::GradientSource(const Model& model, const Dataset& data, std::size_t batch_size,
                               const ControlVariateState* cv)
    : model_(&model), data_(&data), batch_(batch_size), cv_(cv) {}

TensorMap GradientSource::operator()(const TensorMap& theta, ChainState& state) const {
  const Minibatch mb = sample_minibatch(*data_, batch_, state.rng);
  TensorMap g = cv_ ? cv_gradient(*model_, theta, *cv_, mb.views, data_->size())
                    : estimate_gradient(*model_, theta, mb.views, data_->size());
  ++state.gradient_evals;
  require_finite(g, state.iteration + 1, "gradient");
  return g;
}

namespace {

void check_chain_params(const ChainState& state, const Model& model) {
  const std::uint64_t t = state.iteration + 1;
  require_finite(state.params, t, "parameter");
  for (const auto& name : model.positive()) {
    for (double v : state.params.at(name).data()) {
      if (!(v > 0.0)) throw NumericalDivergence(t, name, "left the positive support (" + format_double(v) + ")");
    }
  }
}

}  // namespace

void sgld_step(ChainState& state, const GradientSource& grad, const StepsizeMap& eps) {
  const TensorMap g = grad(state.params, state);
  for (auto& [name, theta] : state.params) {
    const double e = eps.at(name);
    const double sd = std::sqrt(e);
    const Tensor& gi = g.at(name);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += 0.5 * e * gi[i] + sd * state.rng.normal();
  }
  check_chain_params(state, grad.model());
  ++state.iteration;
}

void sghmc_step(ChainState& state, const GradientSource& grad, const StepsizeMap& eps, double friction,
                std::size_t trajectory) {
  for (auto& [name, theta] : state.params) {
    state.momenta.insert_or_assign(name, standard_normal(state.rng, theta.shape()));
    const double sd = std::sqrt(eps.at(name));
    for (double& v : state.momenta.at(name).data()) v *= sd;
  }
  for (std::size_t l = 0; l < trajectory; ++l) {
    for (auto& [name, theta] : state.params) {
      const Tensor& nu = state.momenta.at(name);
      for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += nu[i];
    }
    check_chain_params(state, grad.model());
    const TensorMap g = grad(state.params, state);
    for (auto& [name, nu] : state.momenta) {
      const double e = eps.at(name);
      const double sd = std::sqrt(2.0 * friction * e);
      const Tensor& gi = g.at(name);
      for (std::size_t i = 0; i < nu.size(); ++i) {
        nu[i] = (1.0 - friction) * nu[i] + e * gi[i] + sd * state.rng.normal();
      }
    }
    require_finite(state.momenta, state.iteration + 1, "momentum");
  }
  ++state.iteration;
}

void sgnht_step(ChainState& state, const GradientSource& grad, const StepsizeMap& eps, double diffusion) {
  for (auto& [name, theta] : state.params) {
    const Tensor& nu = state.momenta.at(name);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += nu[i];
  }
  check_chain_params(state, grad.model());
  const TensorMap g = grad(state.params, state);
  for (auto& [name, nu] : state.momenta) {
    const double e = eps.at(name);
    const double sd = std::sqrt(2.0 * diffusion * e);
    double& alpha = state.thermostats.at(name);
    const Tensor& gi = g.at(name);
    double sq = 0.0;
    for (std::size_t i = 0; i < nu.size(); ++i) {
      nu[i] = (1.0 - alpha) * nu[i] + e * gi[i] + sd * state.rng.normal();
      sq += nu[i] * nu[i];
    }
    alpha += sq / static_cast<double>(nu.size()) - e;
  }
  require_finite(state.momenta, state.iteration + 1, "momentum");
  ++state.iteration;
}

ChainState initial_state(Algorithm algorithm, TensorMap params, const StepsizeMap& eps, double diffusion,
                         Rng rng) {
  ChainState s;
  s.params = std::move(params);
  s.rng = std::move(rng);
  switch (base_kernel(algorithm)) {
    case Algorithm::sghmc:
      for (const auto& [name, theta] : s.params) s.momenta.emplace(name, Tensor(theta.shape()));
      break;
    case Algorithm::sgnht:
      for (const auto& [name, theta] : s.params) {
        Tensor nu = standard_normal(s.rng, theta.shape());
        const double sd = std::sqrt(eps.at(name));
        for (double& v : nu.data()) v *= sd;
        s.momenta.emplace(name, std::move(nu));
        s.thermostats.emplace(name, diffusion);
      }
      break;
    default:
      break;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Config and lifecycle

StepsizeMap SamplerConfig::resolve_stepsize(const Model& model) const {
  StepsizeMap out;
  if (const double* scalar = std::get_if<double>(&stepsize)) {
    for (const auto& name : model.param_names()) out.emplace(name, *scalar);
    return out;
  }
  out = std::get<StepsizeMap>(stepsize);
  for (const auto& [name, v] : out) {
    if (!model.param_shapes().contains(name)) throw ConfigError("stepsize given for unknown parameter '" + name + "'");
  }
  for (const auto& name : model.param_names()) {
    if (!out.contains(name)) throw ConfigError("no stepsize for parameter '" + name + "'");
  }
  return out;
}

void SamplerConfig::validate(const Model& model) const {
  for (const auto& [name, e] : resolve_stepsize(model)) {
    if (!(e > 0.0) || !std::isfinite(e)) {
      throw ConfigError("stepsize for '" + name + "' must be positive, got " + format_double(e));
    }
  }
  if (!(minibatch > 0.0) || !std::isfinite(minibatch)) {
    throw ConfigError("minibatch size must be positive, got " + format_double(minibatch));
  }
  if (!(friction > 0.0 && friction < 1.0)) {
    throw ConfigError("friction must lie in (0, 1), got " + format_double(friction));
  }
  if (!(diffusion > 0.0) || !std::isfinite(diffusion)) {
    throw ConfigError("diffusion must be positive, got " + format_double(diffusion));
  }
  if (trajectory < 1) throw ConfigError("trajectory length must be at least 1");
  if (uses_control_variate(algorithm)) {
    if (!opt_stepsize) throw ConfigError(std::string(to_string(algorithm)) + " needs an optimisation stepsize");
    if (!(*opt_stepsize > 0.0) || !std::isfinite(*opt_stepsize)) {
      throw ConfigError("optimisation stepsize must be positive, got " + format_double(*opt_stepsize));
    }
    if (opt_iters && *opt_iters < 1) throw ConfigError("optimisation iterations must be at least 1");
  }
}

Sampler::Sampler(const Model& model, const Dataset& data, TensorMap init_params, SamplerConfig config)
    : model_(&model), data_(&data), config_(std::move(config)) {
  config_.validate(model);
  model.check_params(init_params);
  model.check_support(init_params);
  eps_ = config_.resolve_stepsize(model);
  batch_ = resolve_minibatch_size(config_.minibatch, data.size());
  state_.params = std::move(init_params);
}

void Sampler::init() {
  if (ready_) throw LifecycleError("sampler already initialised");
  Rng rng(config_.seed, config_.stream);
  TensorMap start = state_.params;
  if (uses_control_variate(config_.algorithm)) {
    const std::size_t iters = config_.opt_iters.value_or(config_.n_iters);
    start = find_mode(*model_, *data_, std::move(start), *config_.opt_stepsize, iters, config_.minibatch, rng);
    model_->check_support(start);
    cv_ = prepare_control_variate(*model_, *data_, start);
    require_finite(cv_->full_grad, 0, "full gradient at the mode");
  }
  state_ = initial_state(config_.algorithm, std::move(start), eps_, config_.diffusion, std::move(rng));
  ready_ = true;
}

void Sampler::step() {
  if (!ready_) throw LifecycleError("step() called before init()");
  const GradientSource source(*model_, *data_, batch_, cv_ ? &*cv_ : nullptr);
  switch (base_kernel(config_.algorithm)) {
    case Algorithm::sgld:
      sgld_step(state_, source, eps_);
      break;
    case Algorithm::sghmc:
      sghmc_step(state_, source, eps_, config_.friction, config_.trajectory);
      break;
    case Algorithm::sgnht:
      sgnht_step(state_, source, eps_, config_.diffusion);
      break;
    default:
      break;
  }
}

TensorMap Sampler::params() const { return state_.params; }

ChainOutput run_chain(const Model& model, const Dataset& data, TensorMap init_params,
                      const SamplerConfig& config, const TestFunction& hook) {
  Sampler sampler(model, data, std::move(init_params), config);
  sampler.init();
  const std::size_t n = config.n_iters;

  std::map<std::string, std::pair<Shape, std::vector<double>>, std::less<>> store;
  auto record = [&](const TensorMap& values) {
    for (const auto& [name, t] : values) {
      auto [it, fresh] = store.try_emplace(name);
      if (fresh) {
        it->second.first = t.shape();
        it->second.second.reserve(n * t.size());
      } else if (it->second.first != t.shape()) {
        throw ShapeError("stored value '" + name + "' changed shape during the chain");
      }
      it->second.second.insert(it->second.second.end(), t.data().begin(), t.data().end());
    }
  };

  for (std::size_t i = 0; i < n; ++i) {
    sampler.step();
    if (hook) {
      record(hook(sampler.state()));
    } else {
      record(sampler.state().params);
    }
  }

  ChainOutput out;
  for (auto& [name, entry] : store) {
    Shape shape{n};
    shape.insert(shape.end(), entry.first.begin(), entry.first.end());
    out.samples.emplace(name, Tensor(std::move(shape), std::move(entry.second)));
  }
  if (!hook && n == 0) {
    for (const auto& [name, shape] : model.param_shapes()) {
      Shape s{0};
      s.insert(s.end(), shape.begin(), shape.end());
      out.samples.emplace(name, Tensor(std::move(s)));
    }
  }
  out.final_state = sampler.state();
  return out;
}

}  // namespace sgmcmc

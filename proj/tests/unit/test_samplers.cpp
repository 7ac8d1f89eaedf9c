#include <doctest.h>

#include <cmath>
#include <numeric>

#include "sgmcmc/diagnostics.hpp"
#include "sgmcmc/errors.hpp"
#include "sgmcmc/models.hpp"
#include "sgmcmc/samplers.hpp"
#include "support.hpp"

using namespace sgmcmc;

namespace {

Dataset normal_data(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return Dataset(TensorMap{{"x", standard_normal(rng, Shape{n})}});
}

TensorMap scalar_theta(double v) { return TensorMap{{"theta", Tensor::scalar(v)}}; }

double analytic_mean(const Dataset& d, double v0 = 10.0) {
  const auto x = d.at("x").data();
  return std::accumulate(x.begin(), x.end(), 0.0) / (static_cast<double>(x.size()) + 1.0 / v0);
}

// Normal likelihood, no prior.
Model flat_gaussian() {
  return Model::create({{"theta", {}}}, {{"x", {}}}, [](GraphBuilder& b, const NodeMap& p, const NodeMap& d) {
    return b.normal(d.at("x"), p.at("theta"), b.constant(1.0));
  });
}

// Likelihood that ignores theta, no prior: the gradient is exactly zero.
Model zero_gradient_model() {
  return Model::create({{"theta", {}}}, {{"x", {}}}, [](GraphBuilder& b, const NodeMap& p, const NodeMap&) {
    return b.multiply(b.constant(0.0), p.at("theta"));
  });
}

// Log-likelihood sum(W) * x per row, so each entry's gradient is sum(x).
Model linear_matrix_model() {
  return Model::create({{"W", {2, 3}}}, {{"x", {}}}, [](GraphBuilder& b, const NodeMap& p, const NodeMap& d) {
    return b.multiply(b.reduce_sum(p.at("W")), d.at("x"));
  });
}

SamplerConfig config_for(Algorithm a, double eps, double minibatch, std::size_t iters, std::uint64_t seed = 1) {
  SamplerConfig c;
  c.algorithm = a;
  c.stepsize = eps;
  c.minibatch = minibatch;
  c.n_iters = iters;
  c.seed = seed;
  if (uses_control_variate(a)) c.opt_stepsize = 1e-4;
  return c;
}

std::vector<double> scalar_chain(const ChainOutput& out, const std::string& name, std::size_t skip = 0) {
  const auto d = out.samples.at(name).data();
  return std::vector<double>(d.begin() + static_cast<std::ptrdiff_t>(skip), d.end());
}

double relative_gap(const TensorMap& a, const TensorMap& b) {
  double worst = 0.0;
  for (const auto& [name, t] : a) {
    const Tensor& u = b.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      worst = std::max(worst, std::abs(t[i] - u[i]) / std::max(1.0, std::abs(u[i])));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("full batch estimate is the full gradient, bit for bit") {
  const Model m = build_gaussian();
  const Dataset d = normal_data(3000, 1);
  Rng rng(2);
  const Minibatch mb = sample_minibatch(d, d.size(), rng);
  for (double t : {-1.0, 0.0, 0.37}) {
    CHECK(estimate_gradient(m, scalar_theta(t), mb.views, d.size()) == full_log_posterior_grad(m, d, scalar_theta(t)));
  }
}

TEST_CASE("the estimator averages to the full gradient over every minibatch") {
  const Model m = build_gaussian();
  const Dataset d = normal_data(12, 3);
  for (double t : {-0.8, 0.2, 1.5}) {
    double total = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < 12; ++i)
      for (std::size_t j = i + 1; j < 12; ++j)
        for (std::size_t k = j + 1; k < 12; ++k) {
          const std::vector<std::size_t> rows{i, j, k};
          total += estimate_gradient(m, scalar_theta(t), d.gather(rows), 12).at("theta").item();
          ++count;
        }
    CHECK(count == 220);
    const double full = full_log_posterior_grad(m, d, scalar_theta(t)).at("theta").item();
    CHECK(std::abs(total / count - full) <= 1e-10 * std::abs(full));
  }
}

TEST_CASE("single-row estimate under a flat prior is N times that row's gradient") {
  const Model m = flat_gaussian();
  const Dataset d = normal_data(40, 4);
  const double theta = 0.3;
  for (std::size_t i : {0u, 17u, 39u}) {
    const std::vector<std::size_t> row{i};
    const double g = estimate_gradient(m, scalar_theta(theta), d.gather(row), 40).at("theta").item();
    CHECK(g == doctest::Approx(40.0 * (d.at("x")[i] - theta)).epsilon(1e-14));
  }
}

TEST_CASE("shape mismatch in theta") {
  const Model m = build_gaussian();
  const Dataset d = normal_data(5, 1);
  CHECK_THROWS_AS(estimate_gradient(m, TensorMap{{"theta", Tensor::vector({1})}}, d, 5), ShapeError);
  CHECK_THROWS_AS(estimate_gradient(m, TensorMap{{"mu", Tensor::scalar(1)}}, d, 5), ShapeError);
}

TEST_CASE("analytic gradient of the conjugate model") {
  const Model m = build_gaussian(10.0);
  const Dataset d = normal_data(500, 5);
  const auto x = d.at("x").data();
  const double sum = std::accumulate(x.begin(), x.end(), 0.0);
  for (double t : {-0.5, 0.1, 2.0}) {
    const double expected = (sum - 500.0 * t) - t / 10.0;
    CHECK(full_log_posterior_grad(m, d, scalar_theta(t)).at("theta").item() ==
          doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("full gradient scales exactly with duplicated data under a flat prior") {
  const Model m = flat_gaussian();
  const std::vector<double> base{0.5, -1.25, 2.0, 0.75, -0.125, 3.5, -2.0, 1.0};
  std::vector<double> tripled;
  for (int k = 0; k < 3; ++k) tripled.insert(tripled.end(), base.begin(), base.end());
  const Dataset once(TensorMap{{"x", Tensor::vector(base)}});
  const Dataset thrice(TensorMap{{"x", Tensor::vector(tripled)}});
  const double g1 = full_log_posterior_grad(m, once, scalar_theta(0.25)).at("theta").item();
  const double g3 = full_log_posterior_grad(m, thrice, scalar_theta(0.25)).at("theta").item();
  CHECK(g3 == 3.0 * g1);
}

TEST_CASE("chunked full gradient matches a per-row sum and is stationary at the mode") {
  const Model m = build_gaussian();
  const Dataset d = normal_data(5000, 6);
  const double mode = analytic_mean(d);
  CHECK(std::abs(full_log_posterior_grad(m, d, scalar_theta(mode)).at("theta").item()) < 1e-8);
  CHECK(full_log_posterior_grad(m, d, scalar_theta(0.1)) == full_log_posterior_grad(m, d, scalar_theta(0.1)));
}

TEST_CASE("control variate cancels exactly at the mode") {
  const Model m = build_gaussian();
  const Dataset d = normal_data(200, 7);
  const ControlVariateState cv = prepare_control_variate(m, d, scalar_theta(analytic_mean(d) + 0.02));
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    const Minibatch mb = sample_minibatch(d, 10, rng);
    CHECK(cv_gradient(m, cv.mode, cv, mb.views, d.size()) == cv.full_grad);
  }
  const Minibatch all = sample_minibatch(d, d.size(), rng);
  for (int t = 0; t < 20; ++t) {
    const TensorMap theta = scalar_theta(4.0 * rng.uniform() - 2.0);
    CHECK(relative_gap(cv_gradient(m, theta, cv, all.views, d.size()), full_log_posterior_grad(m, d, theta)) <= 1e-12);
  }
}

TEST_CASE("control variate reduces gradient variance near the mode") {
  const Model m = build_gaussian();
  const Dataset d = normal_data(200, 9);
  const ControlVariateState cv = prepare_control_variate(m, d, scalar_theta(analytic_mean(d)));
  const TensorMap theta = scalar_theta(analytic_mean(d) + 0.05);
  Rng rng(10);
  std::vector<double> plain, reduced;
  for (int t = 0; t < 10000; ++t) {
    const Minibatch mb = sample_minibatch(d, 10, rng);
    plain.push_back(estimate_gradient(m, theta, mb.views, d.size()).at("theta").item());
    reduced.push_back(cv_gradient(m, theta, cv, mb.views, d.size()).at("theta").item());
  }
  CHECK(testing::variance_of(reduced) < testing::variance_of(plain));
}

TEST_CASE("find_mode") {
  const Model m = build_gaussian();
  const Dataset d = normal_data(1000, 11);
  Rng rng(12);

  SUBCASE("converges to the conjugate mode") {
    const TensorMap mode = find_mode(m, d, scalar_theta(1.0), 1e-3, 10000, 1000, rng);
    CHECK(std::abs(mode.at("theta").item() - analytic_mean(d)) < 1e-4);
  }
  SUBCASE("one iteration is one ascent step") {
    const double g = full_log_posterior_grad(m, d, scalar_theta(0.5)).at("theta").item();
    const TensorMap one = find_mode(m, d, scalar_theta(0.5), 1e-4, 1, 1000, rng);
    CHECK(one.at("theta").item() == 0.5 + 1e-4 * g);
  }
  SUBCASE("quadratic log posterior follows 0.9^k") {
    const Model quad = Model::create(
        {{"theta", {}}}, {{"x", {}}},
        [](GraphBuilder& b, const NodeMap& p, const NodeMap&) { return b.multiply(b.constant(0.0), p.at("theta")); },
        [](GraphBuilder& b, const NodeMap& p) { return b.normal(p.at("theta"), b.constant(0.0), b.constant(1.0)); });
    TensorMap theta = scalar_theta(1.0);
    for (int k = 1; k <= 50; ++k) {
      theta = find_mode(quad, d, theta, 0.1, 1, 1000, rng);
      CHECK(theta.at("theta").item() == doctest::Approx(std::pow(0.9, k)).epsilon(1e-13));
    }
  }
  SUBCASE("non-finite gradients abort") {
    CHECK_THROWS_AS(find_mode(m, d, scalar_theta(1.0), 10.0, 1000, 1000, rng), NumericalDivergence);
  }
}

TEST_CASE("zero stepsize leaves SGLD parameters unchanged") {
  const Model m = build_gaussian();
  const Dataset d = normal_data(50, 13);
  const GradientSource source(m, d, 5);
  ChainState s = initial_state(Algorithm::sgld, scalar_theta(0.7), {{"theta", 0.0}}, 0.01, Rng(1));
  for (int t = 0; t < 10; ++t) sgld_step(s, source, {{"theta", 0.0}});
  CHECK(s.params.at("theta").item() == 0.7);
  CHECK(s.iteration == 10);
}

TEST_CASE("SGLD increments under a flat posterior have variance eps") {
  const Model m = zero_gradient_model();
  const Dataset d = normal_data(10, 14);
  const GradientSource source(m, d, 10);
  const double eps = 0.02;
  ChainState s = initial_state(Algorithm::sgld, scalar_theta(0.0), {{"theta", eps}}, 0.01, Rng(15));
  std::vector<double> inc;
  for (int t = 0; t < 10000; ++t) {
    const double before = s.params.at("theta").item();
    sgld_step(s, source, {{"theta", eps}});
    inc.push_back(s.params.at("theta").item() - before);
  }
  CHECK(std::abs(testing::variance_of(inc) / eps - 1.0) <= 0.05);
}

TEST_CASE("kernels consume a fixed number of draws and gradient evaluations") {
  const Model m = build_gaussian_mixture();
  Rng data_rng(16);
  const Dataset d(TensorMap{{"x", standard_normal(data_rng, Shape{100, 2})}});
  const GradientSource source(m, d, 10);
  const TensorMap theta{{"theta1", Tensor::vector({0.1, 0.2})}, {"theta2", Tensor::vector({-0.1, 0.3})}};
  const StepsizeMap eps{{"theta1", 1e-3}, {"theta2", 1e-3}};

  ChainState sgld = initial_state(Algorithm::sgld, theta, eps, 0.01, Rng(1));
  sgld_step(sgld, source, eps);
  CHECK(sgld.gradient_evals == 1);
  CHECK(sgld.rng.draws() == 10 + 2 * 4);

  ChainState hmc = initial_state(Algorithm::sghmc, theta, eps, 0.01, Rng(1));
  CHECK(hmc.rng.draws() == 0);
  sghmc_step(hmc, source, eps, 0.01, 5);
  CHECK(hmc.gradient_evals == 5);
  CHECK(hmc.rng.draws() == 2 * 4 + 5 * (10 + 2 * 4));
  CHECK(hmc.iteration == 1);

  ChainState nht = initial_state(Algorithm::sgnht, theta, eps, 0.01, Rng(1));
  CHECK(nht.rng.draws() == 2 * 4);
  CHECK(nht.thermostats.at("theta1") == 0.01);
  sgnht_step(nht, source, eps, 0.01);
  CHECK(nht.gradient_evals == 1);
  CHECK(nht.rng.draws() == 2 * 4 + 10 + 2 * 4);

  CHECK(sgld.momenta.empty());
  CHECK(sgld.thermostats.empty());
  CHECK(hmc.thermostats.empty());
  CHECK(hmc.momenta.size() == 2);
}

TEST_CASE("SGHMC with full friction and zero gradient draws momentum from N(0, 2 eps)") {
  const Model m = zero_gradient_model();
  const Dataset d = normal_data(10, 17);
  const GradientSource source(m, d, 10);
  const double eps = 0.01;
  ChainState s = initial_state(Algorithm::sghmc, scalar_theta(0.0), {{"theta", eps}}, 0.01, Rng(18));
  std::vector<double> nu;
  for (int t = 0; t < 10000; ++t) {
    sghmc_step(s, source, {{"theta", eps}}, 1.0, 1);
    nu.push_back(s.momenta.at("theta").item());
  }
  CHECK(std::abs(testing::mean_of(nu)) < 4.0 * std::sqrt(2.0 * eps / 10000.0));
  CHECK(std::abs(testing::variance_of(nu) / (2.0 * eps) - 1.0) <= 0.05);
}

TEST_CASE("SGNHT thermostat update") {
  const Model m = linear_matrix_model();
  const double eps = 0.25;

  SUBCASE("constant momentum with kinetic temperature eps is a fixed point") {
    // alpha = 1 wipes the old momentum, diffusion 0 removes the noise, and
    // eps * gradient = 0.5 sets every entry of the new momentum.
    const Dataset d(TensorMap{{"x", Tensor::vector({2.0})}});
    const GradientSource source(m, d, 1);
    ChainState s = initial_state(Algorithm::sgnht, TensorMap{{"W", Tensor(Shape{2, 3})}}, {{"W", eps}}, 1.0, Rng(1));
    sgnht_step(s, source, {{"W", eps}}, 0.0);
    CHECK(s.momenta.at("W") == Tensor(Shape{2, 3}, 0.5));
    CHECK(s.thermostats.at("W") == 1.0);
  }
  SUBCASE("matrix parameter with all entries v moves alpha by v^2 - eps") {
    const Dataset d(TensorMap{{"x", Tensor::vector({6.0})}});
    const GradientSource source(m, d, 1);
    ChainState s = initial_state(Algorithm::sgnht, TensorMap{{"W", Tensor(Shape{2, 3})}}, {{"W", eps}}, 1.0, Rng(1));
    sgnht_step(s, source, {{"W", eps}}, 0.0);
    CHECK(s.momenta.at("W") == Tensor(Shape{2, 3}, 1.5));
    CHECK(s.thermostats.at("W") == 1.0 + (2.25 - 0.25));
  }
  SUBCASE("with noise, the increment is the mean square of the new momentum minus eps") {
    const Dataset d = normal_data(30, 19);
    const GradientSource source(m, d, 5);
    ChainState s = initial_state(Algorithm::sgnht, TensorMap{{"W", Tensor(Shape{2, 3}, 0.1)}}, {{"W", 1e-3}}, 0.01,
                                 Rng(20));
    for (int t = 0; t < 20; ++t) {
      const double before = s.thermostats.at("W");
      sgnht_step(s, source, {{"W", 1e-3}}, 0.01);
      double sq = 0.0;
      for (double v : s.momenta.at("W").data()) sq += v * v;
      CHECK(s.thermostats.at("W") - before == doctest::Approx(sq / 6.0 - 1e-3).epsilon(1e-12));
    }
  }
}

TEST_CASE("SGLD recovers the conjugate posterior mean") {
  const Model m = build_gaussian();
  const Dataset d = normal_data(1000, 21);
  const ChainOutput out = run_chain(m, d, scalar_theta(0.0), config_for(Algorithm::sgld, 1e-3, 1000, 100000, 22));
  const auto chain = scalar_chain(out, "theta", 1000);
  CHECK(std::abs(testing::mean_of(chain) - analytic_mean(d)) < 3.0 * testing::batch_means_se(chain));
}

TEST_CASE("SGHMC recovers the conjugate posterior mean") {
  const Model m = build_gaussian();
  const Dataset d = normal_data(1000, 23);
  const ChainOutput out = run_chain(m, d, scalar_theta(0.0), config_for(Algorithm::sghmc, 1e-4, 1000, 20000, 24));
  const auto chain = scalar_chain(out, "theta", 1000);
  CHECK(std::abs(testing::mean_of(chain) - analytic_mean(d)) < 3.0 * testing::batch_means_se(chain));
  CHECK(out.final_state.gradient_evals == 5 * 20000);
}

TEST_CASE("configuration validation") {
  const Model m = build_gaussian();
  const Dataset d = normal_data(20, 25);
  auto rejects = [&](auto mutate) {
    SamplerConfig c = config_for(Algorithm::sgld, 1e-3, 5, 10);
    mutate(c);
    CHECK_THROWS_AS(Sampler(m, d, scalar_theta(0.0), c), ConfigError);
  };
  rejects([](SamplerConfig& c) { c.stepsize = 0.0; });
  rejects([](SamplerConfig& c) { c.stepsize = -1e-3; });
  rejects([](SamplerConfig& c) { c.stepsize = StepsizeMap{{"mu", 1e-3}}; });
  rejects([](SamplerConfig& c) { c.stepsize = StepsizeMap{}; });
  rejects([](SamplerConfig& c) { c.minibatch = 0.0; });
  rejects([](SamplerConfig& c) { c.friction = 0.0; });
  rejects([](SamplerConfig& c) { c.friction = 1.0; });
  rejects([](SamplerConfig& c) { c.diffusion = 0.0; });
  rejects([](SamplerConfig& c) { c.trajectory = 0; });
  rejects([](SamplerConfig& c) { c.algorithm = Algorithm::sgldcv; });
  rejects([](SamplerConfig& c) {
    c.algorithm = Algorithm::sgldcv;
    c.opt_stepsize = 1e-3;
    c.opt_iters = 0;
  });
  CHECK_THROWS_AS(parse_algorithm("hmc"), ConfigError);
  CHECK(parse_algorithm("sghmccv") == Algorithm::sghmccv);
  CHECK_THROWS_AS(Sampler(m, d, TensorMap{{"theta", Tensor::vector({0})}}, config_for(Algorithm::sgld, 1e-3, 5, 1)),
                  ShapeError);
}

TEST_CASE("sampler lifecycle") {
  const Model m = build_gaussian();
  const Dataset d = normal_data(100, 26);

  Sampler plain(m, d, scalar_theta(0.4), config_for(Algorithm::sgld, 1e-3, 10, 10));
  CHECK_FALSE(plain.ready());
  CHECK_THROWS_AS(plain.step(), LifecycleError);
  plain.init();
  CHECK_THROWS_AS(plain.init(), LifecycleError);
  CHECK(plain.params() == scalar_theta(0.4));

  // The returned copy is detached from the chain.
  TensorMap copy = plain.params();
  copy.at("theta")[0] = 99.0;
  CHECK(plain.params() == scalar_theta(0.4));
  plain.step();
  CHECK(plain.state().iteration == 1);

  SamplerConfig cvc = config_for(Algorithm::sgldcv, 1e-3, 10, 10);
  cvc.opt_stepsize = 1e-3;
  cvc.opt_iters = 500;
  Sampler cv(m, d, scalar_theta(0.4), cvc);
  cv.init();
  REQUIRE(cv.control_variate().has_value());
  CHECK(cv.params() == cv.control_variate()->mode);
  CHECK(cv.params() != scalar_theta(0.4));
  CHECK(cv.control_variate()->full_grad == full_log_posterior_grad(m, d, cv.control_variate()->mode));
}

TEST_CASE("same seed and config give identical trajectories for every algorithm") {
  const Model m = build_gaussian_mixture();
  Rng data_rng(27);
  const Dataset d(TensorMap{{"x", standard_normal(data_rng, Shape{200, 2})}});
  const TensorMap init{{"theta1", Tensor::vector({0.5, -0.5})}, {"theta2", Tensor::vector({-0.5, 0.5})}};
  for (Algorithm a : {Algorithm::sgld, Algorithm::sghmc, Algorithm::sgnht, Algorithm::sgldcv, Algorithm::sghmccv,
                      Algorithm::sgnhtcv}) {
    SamplerConfig c = config_for(a, 1e-3, 20, 1000, 28);
    c.opt_iters = 100;
    Sampler s1(m, d, init, c), s2(m, d, init, c);
    s1.init();
    s2.init();
    bool same = true;
    for (int t = 0; t < 1000; ++t) {
      s1.step();
      s2.step();
      same = same && s1.params() == s2.params();
    }
    INFO(to_string(a));
    CHECK(same);

    SamplerConfig other = c;
    other.seed = 29;
    Sampler s3(m, d, init, other);
    s3.init();
    for (int t = 0; t < 10; ++t) s3.step();
    Sampler s4(m, d, init, c);
    s4.init();
    for (int t = 0; t < 10; ++t) s4.step();
    CHECK(s3.params() != s4.params());
  }
}

TEST_CASE("scalar stepsize matches the explicit per-parameter map bit for bit") {
  const Model m = build_gaussian_mixture();
  Rng data_rng(30);
  const Dataset d(TensorMap{{"x", standard_normal(data_rng, Shape{100, 2})}});
  const TensorMap init{{"theta1", Tensor::vector({0.5, -0.5})}, {"theta2", Tensor::vector({-0.5, 0.5})}};
  for (Algorithm a : {Algorithm::sgld, Algorithm::sghmc, Algorithm::sgnht}) {
    SamplerConfig scalar = config_for(a, 2e-3, 10, 300, 31);
    SamplerConfig mapped = scalar;
    mapped.stepsize = StepsizeMap{{"theta1", 2e-3}, {"theta2", 2e-3}};
    CHECK(run_chain(m, d, init, scalar).samples == run_chain(m, d, init, mapped).samples);
  }
}

TEST_CASE("divergence names the iteration and parameter") {
  const Model m = build_gaussian();
  const Dataset d = normal_data(1000, 32);
  try {
    run_chain(m, d, scalar_theta(1.0), config_for(Algorithm::sgld, 10.0, 1000, 1000));
    FAIL("expected divergence");
  } catch (const NumericalDivergence& e) {
    CHECK(e.parameter() == "theta");
    CHECK(e.iteration() > 1);
    CHECK(e.iteration() < 1000);
  }
}

TEST_CASE("positive parameters that leave their support abort the chain") {
  const Model m = Model::create(
      {{"lambda", {}}}, {{"x", {}}},
      [](GraphBuilder& b, const NodeMap& p, const NodeMap&) { return b.multiply(b.constant(0.0), p.at("lambda")); },
      nullptr, {"lambda"});
  const Dataset d = normal_data(5, 33);
  CHECK_THROWS_AS(Sampler(m, d, TensorMap{{"lambda", Tensor::scalar(-1.0)}}, config_for(Algorithm::sgld, 1.0, 5, 1)),
                  DomainError);
  // Random-walk noise of scale 1 from 0.01 drives lambda negative quickly.
  CHECK_THROWS_AS(run_chain(m, d, TensorMap{{"lambda", Tensor::scalar(0.01)}}, config_for(Algorithm::sgld, 1.0, 5, 1000)),
                  NumericalDivergence);
}

TEST_CASE("run_chain storage") {
  SUBCASE("logistic regression with 54 covariates") {
    ModelSpec spec{.name = "logistic_regression", .d = 54};
    Rng rng(34);
    const SyntheticData data = gen_synth(spec, 200, 0, rng);
    const Model m = build_model(spec);
    const ChainOutput out = run_chain(m, data.train, initial_params(spec, rng),
                                      config_for(Algorithm::sgld, 1e-4, 10, 10000));
    CHECK(out.samples.at("beta").shape() == Shape{10000, 54, 1});
    CHECK(out.samples.at("bias").shape() == Shape{10000});
  }

  const Model m = build_gaussian();
  const Dataset d = normal_data(100, 35);
  const SamplerConfig c = config_for(Algorithm::sgld, 1e-3, 10, 1000, 36);

  SUBCASE("identity hook equals full storage") {
    const ChainOutput full = run_chain(m, d, scalar_theta(0.0), c);
    const ChainOutput hooked = run_chain(m, d, scalar_theta(0.0), c, [](const ChainState& s) { return s.params; });
    CHECK(hooked.samples == full.samples);
  }
  SUBCASE("running-mean hook equals the batch mean of the full chain") {
    RunningMean rm;
    const ChainOutput hooked = run_chain(m, d, scalar_theta(0.0), c, [&rm](const ChainState& s) {
      rm.update(s.params.at("theta"));
      return TensorMap{{"mean", rm.mean()}};
    });
    const auto chain = scalar_chain(run_chain(m, d, scalar_theta(0.0), c), "theta");
    CHECK(std::abs(rm.mean().item() - testing::mean_of(chain)) <= 1e-10);
    CHECK(hooked.samples.at("mean").shape() == Shape{1000});
  }
  SUBCASE("zero iterations") {
    SamplerConfig none = c;
    none.n_iters = 0;
    const ChainOutput out = run_chain(m, d, scalar_theta(0.25), none);
    CHECK(out.samples.at("theta").shape() == Shape{0});
    CHECK(out.final_state.params == scalar_theta(0.25));
  }
}

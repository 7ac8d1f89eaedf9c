#include <doctest.h>

#include <cmath>
#include <numbers>

#include "sgmcmc/errors.hpp"
#include "sgmcmc/models.hpp"
#include "support.hpp"

using namespace sgmcmc;

namespace {

// Keeps |entries| away from the Laplace kink and lambdas positive.
TensorMap random_point(const ModelSpec& spec, Rng& rng) {
  TensorMap theta = initial_params(spec, rng);
  for (auto& [name, t] : theta) {
    for (double& v : t.data()) {
      if (name.starts_with("lambda")) {
        v = 0.5 + 2.0 * rng.uniform();
      } else {
        v = (0.1 + rng.uniform()) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
      }
    }
  }
  return theta;
}

double worst_fd_violation(const ModelSpec& spec, std::size_t n, int points, std::uint64_t seed) {
  Rng rng(seed);
  const Model m = build_model(spec);
  const Dataset d = gen_synth(spec, n, 0, rng).train;
  double worst = 0.0;
  for (int k = 0; k < points; ++k) {
    const TensorMap theta = random_point(spec, rng);
    const TensorMap g = full_log_posterior_grad(m, d, theta);
    const TensorMap fd = testing::central_differences(
        [&](const TensorMap& p) { return testing::log_posterior(m, d, p); }, theta);
    worst = std::max(worst, testing::fd_violation(g, fd));
  }
  return worst;
}

}  // namespace

TEST_CASE("model gradients match central differences") {
  for (const ModelSpec& spec : {ModelSpec{.name = "gaussian"}, ModelSpec{.name = "gaussian_mixture"},
                                ModelSpec{.name = "logistic_regression", .d = 4},
                                ModelSpec{.name = "bayes_nn", .d = 5, .hidden = 4, .classes = 3}}) {
    INFO(spec.name);
    CHECK(worst_fd_violation(spec, 50, 5, 1) == 0.0);
  }
}

TEST_CASE("gaussian model") {
  const Model m = build_gaussian(10.0);
  const Dataset d(TensorMap{{"x", Tensor::vector({0.5, -1.0, 2.0})}});
  const TensorMap theta{{"theta", Tensor::scalar(0.3)}};
  double expected = 0.0;
  for (double x : {0.5, -1.0, 2.0}) expected += -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * (x - 0.3) * (x - 0.3);
  CHECK(m.log_lik(theta, d) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(m.log_prior(theta) ==
        doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi * 10.0) - 0.045 / 10.0).epsilon(1e-14));
  CHECK(full_log_posterior_grad(m, d, theta).at("theta").item() ==
        doctest::Approx((1.5 - 3.0 * 0.3) - 0.3 / 10.0).epsilon(1e-14));
  CHECK_THROWS_AS(build_gaussian(0.0), DomainError);
}

TEST_CASE("gaussian posterior oracle") {
  const std::vector<double> none;
  const DiagGaussian prior = gaussian_posterior(10.0, none);
  CHECK(prior.mean[0] == 0.0);
  CHECK(prior.variance[0] == doctest::Approx(10.0).epsilon(1e-15));

  Rng rng(2);
  const Tensor x = standard_normal(rng, Shape{1000});
  const DiagGaussian post = gaussian_posterior(10.0, x.data());
  CHECK(post.variance[0] == doctest::Approx(1.0 / 1000.1).epsilon(1e-14));
  const DiagGaussian flat = gaussian_posterior(1e9, x.data());
  CHECK(std::abs(flat.mean[0] - testing::mean_of({x.data().begin(), x.data().end()})) <= 1e-6);

  // The oracle agrees with the model: the gradient vanishes at its mean.
  const Dataset d(TensorMap{{"x", x}});
  CHECK(std::abs(full_log_posterior_grad(build_gaussian(10.0), d, {{"theta", Tensor::scalar(post.mean[0])}})
                     .at("theta")
                     .item()) < 1e-9);
}

TEST_CASE("mixture model") {
  const Model m = build_gaussian_mixture();
  Rng rng(3);
  const Dataset d = gen_synth({.name = "gaussian_mixture"}, 40, 0, rng).train;

  SUBCASE("equal components collapse to one Gaussian") {
    const Tensor mu = Tensor::vector({0.3, -0.2});
    double single = 0.0;
    const Tensor& x = d.at("x");
    for (std::size_t r = 0; r < 40; ++r) {
      for (std::size_t j = 0; j < 2; ++j) {
        const double z = x[2 * r + j] - mu[j];
        single += -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * z * z;
      }
    }
    CHECK(m.log_lik({{"theta1", mu}, {"theta2", mu}}, d) == doctest::Approx(single).epsilon(1e-13));
  }
  SUBCASE("log posterior and gradient are symmetric under relabelling") {
    for (int k = 0; k < 20; ++k) {
      const Tensor a = standard_normal(rng, {2});
      const Tensor b = standard_normal(rng, {2});
      const TensorMap ab{{"theta1", a}, {"theta2", b}};
      const TensorMap ba{{"theta1", b}, {"theta2", a}};
      CHECK(testing::log_posterior(m, d, ab) == testing::log_posterior(m, d, ba));
      const TensorMap g1 = full_log_posterior_grad(m, d, ab);
      const TensorMap g2 = full_log_posterior_grad(m, d, ba);
      CHECK(g1.at("theta1") == g2.at("theta2"));
      CHECK(g1.at("theta2") == g2.at("theta1"));
    }
  }
}

TEST_CASE("logistic regression model") {
  const ModelSpec spec{.name = "logistic_regression", .d = 3};
  const Model m = build_model(spec);
  Rng rng(4);
  const Dataset d = gen_synth(spec, 25, 0, rng).train;
  const TensorMap zero{{"bias", Tensor::scalar(0.0)}, {"beta", Tensor(Shape{3, 1})}};
  CHECK(m.log_lik(zero, d) == doctest::Approx(-25.0 * std::log(2.0)).epsilon(1e-14));
  CHECK(m.log_prior(zero) == 0.0);

  const TensorMap theta{{"bias", Tensor::scalar(-0.5)}, {"beta", Tensor::matrix(3, 1, {1.0, -2.0, 0.5})}};
  CHECK(m.log_prior(theta) == -4.0);

  // The Laplace prior contributes nothing to the gradient at exactly 0.
  const Model prior_only = Model::create(
      {{"bias", {}}, {"beta", {3, 1}}}, {{"y", {}}},
      [](GraphBuilder& b, const NodeMap& p, const NodeMap&) { return b.multiply(b.constant(0.0), p.at("bias")); },
      [](GraphBuilder& b, const NodeMap& p) {
        return b.negate(b.add(b.reduce_sum(b.abs(p.at("beta"))), b.abs(p.at("bias"))));
      });
  const TensorMap kink{{"bias", Tensor::scalar(0.0)}, {"beta", Tensor::matrix(3, 1, {0.0, 2.0, -1.0})}};
  const TensorMap g = full_log_posterior_grad(prior_only, d, kink);
  CHECK(g.at("bias").item() == 0.0);
  CHECK(g.at("beta") == Tensor::matrix(3, 1, {0.0, -1.0, 1.0}));
}

TEST_CASE("network model") {
  const ModelSpec spec{.name = "bayes_nn", .d = 6, .hidden = 5, .classes = 4};
  Rng rng(5);
  TensorMap theta = initial_params(spec, rng);
  CHECK(theta.at("A").shape() == Shape{5, 4});
  CHECK(theta.at("B").shape() == Shape{6, 5});
  CHECK(theta.at("a").shape() == Shape{4});
  CHECK(theta.at("b").shape() == Shape{5});
  CHECK(theta.at("lambdaA").item() > 0.0);

  const Tensor X = standard_normal(rng, {30, 6});
  const Tensor probs = bayes_nn_predict(theta, X);
  for (std::size_t r = 0; r < 30; ++r) {
    double total = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(probs[r * 4 + k] > 0.0);
      total += probs[r * 4 + k];
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }

  TensorMap zero = theta;
  for (const char* w : {"A", "B", "a", "b"}) zero.at(w) = Tensor(theta.at(w).shape());
  const Tensor uniform = bayes_nn_predict(zero, X);
  for (double p : uniform.data()) CHECK(p == doctest::Approx(0.25).epsilon(1e-15));

  // The graph's likelihood agrees with the standalone forward pass.
  const SyntheticData data = gen_synth(spec, 30, 0, rng);
  const Model m = build_model(spec);
  const Tensor p = bayes_nn_predict(theta, data.train.at("X"));
  const Tensor& y = data.train.at("y");
  double direct = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) direct += y[i] * std::log(p[i]);
  CHECK(m.log_lik(theta, data.train) == doctest::Approx(direct).epsilon(1e-12));

  TensorMap bad = theta;
  bad.at("lambdaB") = Tensor::scalar(-1.0);
  CHECK_THROWS_AS(m.check_support(bad), DomainError);
  SamplerConfig c;
  CHECK_THROWS_AS(Sampler(m, data.train, bad, c), DomainError);
}

TEST_CASE("log likelihood is additive over any partition") {
  Rng rng(6);
  for (const ModelSpec& spec : {ModelSpec{.name = "gaussian"}, ModelSpec{.name = "gaussian_mixture"},
                                ModelSpec{.name = "logistic_regression", .d = 3},
                                ModelSpec{.name = "bayes_nn", .d = 4, .hidden = 3, .classes = 3}}) {
    const Model m = build_model(spec);
    const Dataset d = gen_synth(spec, 2500, 0, rng).train;
    const TensorMap theta = random_point(spec, rng);
    const double whole = m.log_lik(theta, d);
    const double parts = m.log_lik(theta, d.slice(0, 7)) + m.log_lik(theta, d.slice(7, 1900)) +
                         m.log_lik(theta, d.slice(1900, 2500));
    INFO(spec.name);
    CHECK(parts == doctest::Approx(whole).epsilon(1e-12));
  }
}

TEST_CASE("synthetic generators") {
  SUBCASE("mixture data at seed 2") {
    Rng a(2), b(2);
    const SyntheticData first = gen_synth({.name = "gaussian_mixture"}, 1000, 0, a);
    const SyntheticData second = gen_synth({.name = "gaussian_mixture"}, 1000, 0, b);
    CHECK(first.train.entries() == second.train.entries());
    CHECK_FALSE(first.test.has_value());
    const Tensor& x = first.train.at("x");
    CHECK(x.shape() == Shape{1000, 2});
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < 1000; ++r) s += x[2 * r + j];
      CHECK(std::abs(s / 1000.0 - 0.05) <= 0.1);
    }
  }
  SUBCASE("logistic labels with zero coefficients are balanced") {
    const ModelSpec spec{.name = "logistic_regression", .d = 4};
    Rng rng(7);
    const TensorMap truth{{"bias", Tensor::scalar(0.0)}, {"beta", Tensor(Shape{4, 1})}};
    const SyntheticData data = gen_synth(spec, 1000, 200, rng, truth);
    const auto y = data.train.at("y").data();
    double ones = 0.0;
    for (double v : y) ones += v;
    CHECK(std::abs(ones / 1000.0 - 0.5) <= 0.05);
    REQUIRE(data.test.has_value());
    CHECK(data.test->size() == 200);
    for (double v : data.train.at("X").data()) {
      CHECK(v >= 0.0);
      CHECK(v < 1.0);
    }
  }
  SUBCASE("network labels are one-hot") {
    const ModelSpec spec{.name = "bayes_nn", .d = 3, .hidden = 4, .classes = 5};
    Rng rng(8);
    const SyntheticData data = gen_synth(spec, 100, 0, rng);
    const Tensor& y = data.train.at("y");
    CHECK(y.shape() == Shape{100, 5});
    for (std::size_t r = 0; r < 100; ++r) {
      double total = 0.0;
      for (std::size_t k = 0; k < 5; ++k) total += y[r * 5 + k];
      CHECK(total == 1.0);
    }
  }
  SUBCASE("bad specs") {
    Rng rng(9);
    CHECK_THROWS_AS(gen_synth({.name = "gaussian"}, 1, 0, rng), DomainError);
    CHECK_THROWS_AS(build_model({.name = "poisson"}), ConfigError);
    CHECK_THROWS_AS(build_model({.name = "logistic_regression", .d = 0}), ConfigError);
    CHECK_FALSE(is_classifier({.name = "gaussian"}));
    CHECK(is_classifier({.name = "bayes_nn"}));
  }
}

TEST_CASE("held-out log loss at the generating parameters beats the uninformative loss") {
  const ModelSpec spec{.name = "logistic_regression", .d = 5};
  Rng rng(10);
  const SyntheticData data = gen_synth(spec, 100, 2000, rng);
  CHECK(test_log_loss(spec, data.truth, *data.test) < std::log(2.0));
  const TensorMap zero{{"bias", Tensor::scalar(0.0)}, {"beta", Tensor(Shape{5, 1})}};
  CHECK(test_log_loss(spec, zero, *data.test) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

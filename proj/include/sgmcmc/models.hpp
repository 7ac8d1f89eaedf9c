#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "sgmcmc/data.hpp"
#include "sgmcmc/diagnostics.hpp"
#include "sgmcmc/samplers.hpp"

namespace sgmcmc {

// Built-in models. Data entry names:
//   gaussian             x [N]
//   gaussian_mixture     x [N,2]
//   logistic_regression  X [N,d], y [N] in {0,1}
//   bayes_nn             X [N,d], y [N,K] one-hot

/// x_i ~ N(theta, 1), theta ~ N(0, prior_variance). Parameter `theta` is a scalar.
Model build_gaussian(double prior_variance = 10.0);

/// x_i ~ 0.5 N(theta1, I) + 0.5 N(theta2, I) in two dimensions, with
/// theta_k ~ N(0, prior_variance I).
Model build_gaussian_mixture(double prior_variance = 10.0);

/// Bernoulli likelihood with p = sigmoid(bias + x beta); Laplace(0,1)
/// priors on bias and beta with constants dropped. `beta` is [d,1].
Model build_logistic_regression(std::size_t d);

/// softmax(softmax(X B + b) A + a) over K classes with Normal(0, 1/sqrt(lambda))
/// priors per weight block and Gamma(1,1) priors on each lambda.
Model build_bayes_nn(std::size_t d = 20, std::size_t hidden = 10, std::size_t classes = 3);

/// Class probabilities [T,K] of the network at `theta`.
Tensor bayes_nn_predict(const TensorMap& theta, const Tensor& X);

struct ModelSpec {
  std::string name;  // gaussian | gaussian_mixture | logistic_regression | bayes_nn
  double prior_variance = 10.0;
  std::size_t d = 5;
  std::size_t hidden = 10;
  std::size_t classes = 3;
};

/// ConfigError for an unknown model name or zero dimension.
void validate(const ModelSpec& spec);
Model build_model(const ModelSpec& spec);

/// Starting point: 0 for gaussian and logistic regression, standard normal
/// draws for the mixture and network weights, Exp(1) draws for lambdas.
TensorMap initial_params(const ModelSpec& spec, Rng& rng);

/// True for models with a held-out log loss.
bool is_classifier(const ModelSpec& spec);

/// Held-out log loss (binary or multiclass) at `theta`.
double test_log_loss(const ModelSpec& spec, const TensorMap& theta, const Dataset& test);

struct SyntheticData {
  Dataset train;
  std::optional<Dataset> test;
  TensorMap truth;  // generating parameters (empty for gaussian)
};

/// Rows 0..n-1 form `train`, the next `test_n` rows `test`.
///   gaussian          x ~ N(0,1)
///   gaussian_mixture  0.5 N((0,0), I) + 0.5 N((0.1,0.1), I)
///   logistic          X ~ U[0,1]^d, y ~ Bernoulli(sigmoid(bias + X beta))
///   bayes_nn          X ~ N(0,1)^d, y one-hot from the network's probabilities
/// `truth` overrides the default generating parameters for the classifiers.
SyntheticData gen_synth(const ModelSpec& spec, std::size_t n, std::size_t test_n, Rng& rng,
                        const std::optional<TensorMap>& truth = std::nullopt);

/// Default generating parameters for the classifiers.
TensorMap default_truth(const ModelSpec& spec, Rng& rng);

/// Conjugate posterior of the gaussian model: N(sum/(N + 1/v0), 1/(N + 1/v0)).
DiagGaussian gaussian_posterior(double prior_variance, std::span<const double> x);

}  // namespace sgmcmc

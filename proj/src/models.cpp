#include "sgmcmc/models.hpp"

#include <cmath>

#include "sgmcmc/errors.hpp"

namespace sgmcmc {

Model build_gaussian(double prior_variance) {
  if (!(prior_variance > 0.0)) throw DomainError("prior variance must be positive");
  const double prior_scale = std::sqrt(prior_variance);
  return Model::create(
      {{"theta", {}}}, {{"x", {}}},
      [](GraphBuilder& b, const NodeMap& p, const NodeMap& data) {
        return b.normal(data.at("x"), p.at("theta"), b.constant(1.0));
      },
      [prior_scale](GraphBuilder& b, const NodeMap& p) {
        return b.normal(p.at("theta"), b.constant(0.0), b.constant(prior_scale));
      });
}

Model build_gaussian_mixture(double prior_variance) {
  if (!(prior_variance > 0.0)) throw DomainError("prior variance must be positive");
  const double prior_scale = std::sqrt(prior_variance);
  return Model::create(
      {{"theta1", {2}}, {"theta2", {2}}}, {{"x", {2}}},
      [](GraphBuilder& b, const NodeMap& p, const NodeMap& data) {
        const NodeId unit = b.constant(Tensor::vector({1.0, 1.0}));
        return b.mixture2(data.at("x"), {0.5, 0.5}, p.at("theta1"), unit, p.at("theta2"), unit);
      },
      [prior_scale](GraphBuilder& b, const NodeMap& p) {
        const NodeId zero = b.constant(Tensor::vector({0.0, 0.0}));
        const NodeId scale = b.constant(Tensor::vector({prior_scale, prior_scale}));
        return b.add(b.mvnormal_diag(p.at("theta1"), zero, scale), b.mvnormal_diag(p.at("theta2"), zero, scale));
      });
}

Model build_logistic_regression(std::size_t d) {
  if (d < 1) throw DomainError("logistic regression needs d >= 1");
  return Model::create(
      {{"bias", {}}, {"beta", {d, 1}}}, {{"X", {d}}, {"y", {}}},
      [](GraphBuilder& b, const NodeMap& p, const NodeMap& data) {
        const NodeId xb = b.reshape(b.matmul(data.at("X"), p.at("beta")), {kBatch});
        const NodeId prob = b.sigmoid(b.add(p.at("bias"), xb));
        const NodeId one = b.constant(1.0);
        const NodeId y = data.at("y");
        return b.add(b.multiply(y, b.log(prob)), b.multiply(b.subtract(one, y), b.log(b.subtract(one, prob))));
      },
      [](GraphBuilder& b, const NodeMap& p) {
        return b.negate(b.add(b.reduce_sum(b.abs(p.at("beta"))), b.abs(p.at("bias"))));
      });
}

Model build_bayes_nn(std::size_t d, std::size_t hidden, std::size_t classes) {
  if (d < 1 || hidden < 1 || classes < 2) throw DomainError("network needs d, hidden >= 1 and classes >= 2");
  ShapeMap params{{"A", {hidden, classes}}, {"B", {d, hidden}}, {"a", {classes}}, {"b", {hidden}},
                  {"lambdaA", {}},         {"lambdaB", {}},    {"lambdaa", {}},    {"lambdab", {}}};
  return Model::create(
      std::move(params), {{"X", {d}}, {"y", {classes}}},
      [](GraphBuilder& b, const NodeMap& p, const NodeMap& data) {
        const NodeId h = b.softmax(b.broadcast_add(b.matmul(data.at("X"), p.at("B")), p.at("b")));
        const NodeId probs = b.softmax(b.broadcast_add(b.matmul(h, p.at("A")), p.at("a")));
        return b.categorical(data.at("y"), probs);
      },
      [](GraphBuilder& b, const NodeMap& p) {
        const NodeId zero = b.constant(0.0);
        const NodeId one = b.constant(1.0);
        NodeId total = b.constant(0.0);
        for (const auto& [weights, lambda] : {std::pair{"A", "lambdaA"}, {"B", "lambdaB"}, {"a", "lambdaa"},
                                              {"b", "lambdab"}}) {
          const NodeId w = b.reduce_sum(b.normal(p.at(weights), zero, b.rsqrt(p.at(lambda))));
          total = b.add(total, b.add(w, b.gamma(p.at(lambda), one, one)));
        }
        return total;
      },
      {"lambdaA", "lambdaB", "lambdaa", "lambdab"});
}

namespace {

void softmax_rows(std::vector<double>& v, std::size_t k) {
  for (std::size_t r = 0; r < v.size() / k; ++r) {
    double m = -INFINITY;
    for (std::size_t j = 0; j < k; ++j) m = std::max(m, v[r * k + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += (v[r * k + j] = std::exp(v[r * k + j] - m));
    for (std::size_t j = 0; j < k; ++j) v[r * k + j] /= s;
  }
}

// rows x inner times inner x cols, plus a row-broadcast bias.
std::vector<double> affine(std::span<const double> x, std::size_t rows, std::size_t inner, const Tensor& w,
                           const Tensor& bias) {
  const std::size_t cols = w.shape()[1];
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < inner; ++i) s += x[r * inner + i] * w[i * cols + c];
      out[r * cols + c] = s + bias[c];
    }
  }
  return out;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Tensor bayes_nn_predict(const TensorMap& theta, const Tensor& X) {
  const Tensor& B = theta.at("B");
  const Tensor& A = theta.at("A");
  if (X.rank() != 2 || X.shape()[1] != B.shape()[0]) {
    throw ShapeError("network input must be [T," + std::to_string(B.shape()[0]) + "], got " + to_string(X.shape()));
  }
  const std::size_t rows = X.shape()[0];
  auto hidden = affine(X.data(), rows, B.shape()[0], B, theta.at("b"));
  softmax_rows(hidden, B.shape()[1]);
  auto out = affine(hidden, rows, A.shape()[0], A, theta.at("a"));
  softmax_rows(out, A.shape()[1]);
  return Tensor(Shape{rows, A.shape()[1]}, std::move(out));
}

void validate(const ModelSpec& spec) {
  if (spec.name == "gaussian" || spec.name == "gaussian_mixture") {
    if (!(spec.prior_variance > 0.0)) throw ConfigError("prior variance must be positive");
    return;
  }
  if (spec.name == "logistic_regression") {
    if (spec.d < 1) throw ConfigError("logistic regression needs d >= 1");
    return;
  }
  if (spec.name == "bayes_nn") {
    if (spec.d < 1 || spec.hidden < 1 || spec.classes < 2) {
      throw ConfigError("network needs d >= 1, hidden >= 1, classes >= 2");
    }
    return;
  }
  throw ConfigError("unknown model '" + spec.name + "'");
}

Model build_model(const ModelSpec& spec) {
  validate(spec);
  if (spec.name == "gaussian") return build_gaussian(spec.prior_variance);
  if (spec.name == "gaussian_mixture") return build_gaussian_mixture(spec.prior_variance);
  if (spec.name == "logistic_regression") return build_logistic_regression(spec.d);
  return build_bayes_nn(spec.d, spec.hidden, spec.classes);
}

bool is_classifier(const ModelSpec& spec) {
  return spec.name == "logistic_regression" || spec.name == "bayes_nn";
}

TensorMap initial_params(const ModelSpec& spec, Rng& rng) {
  validate(spec);
  if (spec.name == "gaussian") return {{"theta", Tensor::scalar(0.0)}};
  if (spec.name == "logistic_regression") {
    return {{"bias", Tensor::scalar(0.0)}, {"beta", Tensor(Shape{spec.d, 1})}};
  }
  if (spec.name == "gaussian_mixture") {
    TensorMap out;
    out.emplace("theta1", standard_normal(rng, {2}));
    out.emplace("theta2", standard_normal(rng, {2}));
    return out;
  }
  TensorMap out;
  out.emplace("A", standard_normal(rng, {spec.hidden, spec.classes}));
  out.emplace("B", standard_normal(rng, {spec.d, spec.hidden}));
  out.emplace("a", standard_normal(rng, {spec.classes}));
  out.emplace("b", standard_normal(rng, {spec.hidden}));
  for (const char* name : {"lambdaA", "lambdaB", "lambdaa", "lambdab"}) {
    out.emplace(name, Tensor::scalar(-std::log(1.0 - rng.uniform())));
  }
  return out;
}

double test_log_loss(const ModelSpec& spec, const TensorMap& theta, const Dataset& test) {
  if (spec.name == "logistic_regression") {
    return log_loss_binary(theta.at("bias").item(), theta.at("beta"), test.at("X"), test.at("y"));
  }
  if (spec.name == "bayes_nn") return log_loss_multiclass(bayes_nn_predict(theta, test.at("X")), test.at("y"));
  throw ConfigError("model '" + spec.name + "' has no log loss");
}

TensorMap default_truth(const ModelSpec& spec, Rng& rng) {
  if (spec.name == "logistic_regression") {
    Tensor beta(Shape{spec.d, 1});
    double sum = 0.0;
    for (std::size_t j = 0; j < spec.d; ++j) sum += (beta[j] = j % 2 == 0 ? 3.0 : -3.0);
    // Centres the linear predictor for X uniform on [0,1].
    return {{"bias", Tensor::scalar(-0.5 * sum)}, {"beta", std::move(beta)}};
  }
  if (spec.name == "bayes_nn") {
    TensorMap t;
    auto scaled = [&](Shape s, double k) {
      Tensor x = standard_normal(rng, s);
      for (double& v : x.data()) v *= k;
      return x;
    };
    t.emplace("A", scaled({spec.hidden, spec.classes}, 3.0));
    t.emplace("B", scaled({spec.d, spec.hidden}, 2.0));
    t.emplace("a", scaled({spec.classes}, 1.0));
    t.emplace("b", scaled({spec.hidden}, 1.0));
    return t;
  }
  return {};
}

SyntheticData gen_synth(const ModelSpec& spec, std::size_t n, std::size_t test_n, Rng& rng,
                        const std::optional<TensorMap>& truth) {
  validate(spec);
  if (n < 2) throw DomainError("synthetic datasets need at least 2 rows");
  const std::size_t total = n + test_n;
  SyntheticData out;
  TensorMap rows;

  if (spec.name == "gaussian") {
    rows.emplace("x", standard_normal(rng, {total}));
  } else if (spec.name == "gaussian_mixture") {
    Tensor x(Shape{total, 2});
    for (std::size_t r = 0; r < total; ++r) {
      const double shift = rng.uniform() < 0.5 ? 0.0 : 0.1;
      x[2 * r] = shift + rng.normal();
      x[2 * r + 1] = shift + rng.normal();
    }
    rows.emplace("x", std::move(x));
  } else if (spec.name == "logistic_regression") {
    out.truth = truth ? *truth : default_truth(spec, rng);
    const Tensor& beta = out.truth.at("beta");
    const double bias = out.truth.at("bias").item();
    if (beta.size() != spec.d) throw ShapeError("true beta must have d entries");
    Tensor X(Shape{total, spec.d});
    Tensor y(Shape{total});
    for (std::size_t r = 0; r < total; ++r) {
      double z = bias;
      for (std::size_t j = 0; j < spec.d; ++j) z += (X[r * spec.d + j] = rng.uniform()) * beta[j];
      y[r] = rng.uniform() < sigmoid(z) ? 1.0 : 0.0;
    }
    rows.emplace("X", std::move(X));
    rows.emplace("y", std::move(y));
  } else {
    out.truth = truth ? *truth : default_truth(spec, rng);
    Tensor X = standard_normal(rng, {total, spec.d});
    const Tensor probs = bayes_nn_predict(out.truth, X);
    const std::size_t k = spec.classes;
    Tensor y(Shape{total, k});
    for (std::size_t r = 0; r < total; ++r) {
      const double u = rng.uniform();
      double acc = 0.0;
      std::size_t cls = k - 1;
      for (std::size_t j = 0; j < k; ++j) {
        acc += probs[r * k + j];
        if (u < acc) {
          cls = j;
          break;
        }
      }
      y[r * k + cls] = 1.0;
    }
    rows.emplace("X", std::move(X));
    rows.emplace("y", std::move(y));
  }

  Dataset all(std::move(rows));
  out.train = all.slice(0, n);
  if (test_n > 0) out.test = all.slice(n, total);
  return out;
}

DiagGaussian gaussian_posterior(double prior_variance, std::span<const double> x) {
  if (!(prior_variance > 0.0)) throw DomainError("prior variance must be positive");
  double sum = 0.0;
  for (double v : x) sum += v;
  const double precision = static_cast<double>(x.size()) + 1.0 / prior_variance;
  return DiagGaussian{{sum / precision}, {1.0 / precision}};
}

}  // namespace sgmcmc

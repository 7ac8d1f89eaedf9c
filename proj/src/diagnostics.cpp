#include "sgmcmc/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "sgmcmc/errors.hpp"

namespace sgmcmc {
namespace {

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

double log_loss_binary(std::span<const double> probs, std::span<const double> labels) {
  if (probs.empty()) throw DomainError("log loss of an empty test set");
  if (probs.size() != labels.size()) throw ShapeError("probabilities and labels differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = clamp_prob(probs[i]);
    const double y = labels[i];
    total += y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return -total / static_cast<double>(probs.size());
}

double log_loss_binary(double bias, const Tensor& beta, const Tensor& X, const Tensor& labels) {
  if (X.rank() != 2) throw ShapeError("X must be [T,d], got " + to_string(X.shape()));
  const std::size_t t = X.shape()[0];
  const std::size_t d = X.shape()[1];
  if (t == 0) throw DomainError("log loss of an empty test set");
  if (beta.size() != d) throw ShapeError("beta has " + std::to_string(beta.size()) + " entries, X has " +
                                         std::to_string(d) + " columns");
  if (labels.size() != t) throw ShapeError("expected " + std::to_string(t) + " labels");
  std::vector<double> probs(t);
  for (std::size_t r = 0; r < t; ++r) {
    double z = bias;
    for (std::size_t j = 0; j < d; ++j) z += X[r * d + j] * beta[j];
    probs[r] = sigmoid(z);
  }
  return log_loss_binary(probs, labels.data());
}

double log_loss_multiclass(const Tensor& probs, const Tensor& labels) {
  if (probs.rank() != 2) throw ShapeError("probabilities must be [T,K], got " + to_string(probs.shape()));
  const std::size_t t = probs.shape()[0];
  const std::size_t k = probs.shape()[1];
  if (t == 0) throw DomainError("log loss of an empty test set");
  const bool one_hot = labels.rank() == 2;
  if (one_hot ? labels.shape() != probs.shape() : labels.size() != t) {
    throw ShapeError("labels " + to_string(labels.shape()) + " do not match probabilities " +
                     to_string(probs.shape()));
  }
  double total = 0.0;
  for (std::size_t r = 0; r < t; ++r) {
    std::size_t cls = 0;
    if (one_hot) {
      std::size_t hits = 0;
      for (std::size_t j = 0; j < k; ++j) {
        const double y = labels[r * k + j];
        if (y == 1.0) {
          cls = j;
          ++hits;
        } else if (y != 0.0) {
          throw DomainError("one-hot label row " + std::to_string(r) + " has a non 0/1 entry");
        }
      }
      if (hits != 1) throw DomainError("one-hot label row " + std::to_string(r) + " needs exactly one 1");
    } else {
      const double y = labels[r];
      if (!(y >= 0.0) || y != std::floor(y) || y >= static_cast<double>(k)) {
        throw DomainError("label " + std::to_string(y) + " outside {0,...," + std::to_string(k - 1) + "}");
      }
      cls = static_cast<std::size_t>(y);
    }
    total += std::log(clamp_prob(probs[r * k + cls]));
  }
  return -total / static_cast<double>(t);
}

DiagGaussian moment_match(const Tensor& samples) {
  if (samples.rank() == 0 || samples.shape()[0] < 2) {
    throw DomainError("moment matching needs at least 2 samples");
  }
  const std::size_t n = samples.shape()[0];
  const std::size_t dim = samples.row_stride();
  DiagGaussian g{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < dim; ++j) g.mean[j] += samples[r * dim + j];
  }
  for (double& m : g.mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = samples[r * dim + j] - g.mean[j];
      g.variance[j] += d * d;
    }
  }
  for (std::size_t j = 0; j < dim; ++j) {
    g.variance[j] /= static_cast<double>(n - 1);
    if (!(g.variance[j] > 0.0)) {
      throw DegenerateChain("coordinate " + std::to_string(j) + " of the chain has zero variance");
    }
  }
  return g;
}

double kl_diag_gaussian(const DiagGaussian& q, const DiagGaussian& p) {
  if (q.mean.size() != p.mean.size() || q.variance.size() != q.mean.size() ||
      p.variance.size() != p.mean.size()) {
    throw ShapeError("KL between Gaussians of dimension " + std::to_string(q.mean.size()) + " and " +
                     std::to_string(p.mean.size()));
  }
  double kl = 0.0;
  for (std::size_t j = 0; j < q.mean.size(); ++j) {
    const double vq = q.variance[j];
    const double vp = p.variance[j];
    if (!(vq > 0.0) || !(vp > 0.0)) throw DomainError("Gaussian variances must be positive");
    const double dm = p.mean[j] - q.mean[j];
    // r - 1 - ln r >= 0; the log1p form keeps it so when r is close to 1.
    const double d = vq / vp - 1.0;
    kl += 0.5 * (std::max(0.0, d - std::log1p(d)) + dm * dm / vp);
  }
  return kl;
}

void RunningMean::update(const Tensor& x) {
  if (count_ == 0) {
    mean_ = x;
    count_ = 1;
    return;
  }
  if (x.shape() != mean_.shape()) {
    throw ShapeError("running mean of shape " + to_string(mean_.shape()) + " updated with " +
                     to_string(x.shape()));
  }
  // Written as a correction to the current mean so repeated equal inputs
  // leave it exactly unchanged.
  const double next = static_cast<double>(count_ + 1);
  for (std::size_t k = 0; k < x.size(); ++k) mean_[k] += (x[k] - mean_[k]) / next;
  ++count_;
}

}  // namespace sgmcmc

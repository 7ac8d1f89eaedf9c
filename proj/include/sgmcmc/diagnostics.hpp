#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sgmcmc/tensor.hpp"

namespace sgmcmc {

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before logs.
inline constexpr double kProbClamp = 1e-12;

/// Mean negative Bernoulli log-likelihood of `labels` (0/1, [T]) under
/// sigmoid(bias + X beta). `X` is [T,d], `beta` has d elements.
double log_loss_binary(double bias, const Tensor& beta, const Tensor& X, const Tensor& labels);

/// Same, from precomputed probabilities of class 1.
double log_loss_binary(std::span<const double> probs, std::span<const double> labels);

/// Mean negative log-probability of the true class. `probs` is [T,K];
/// `labels` is either [T] integer classes or [T,K] one-hot.
double log_loss_multiclass(const Tensor& probs, const Tensor& labels);

struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> variance;
};

/// Per-coordinate sample mean and unbiased variance of `samples`, whose
/// first axis indexes draws. Needs at least two draws; a coordinate with
/// zero variance raises DegenerateChain.
DiagGaussian moment_match(const Tensor& samples);

/// KL(q || p) between diagonal Gaussians.
double kl_diag_gaussian(const DiagGaussian& q, const DiagGaussian& p);

/// Incremental mean over a stream of equally shaped tensors.
class RunningMean {
 public:
  RunningMean() = default;

  void update(const Tensor& x);
  const Tensor& mean() const noexcept { return mean_; }
  std::size_t count() const noexcept { return count_; }

 private:
  Tensor mean_;
  std::size_t count_ = 0;
};

}  // namespace sgmcmc

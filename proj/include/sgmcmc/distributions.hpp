#pragma once

#include <array>

#include "sgmcmc/tensor.hpp"

/// Direct (non-graph) log-density evaluation. The compute graph's
/// logdensity nodes call the same kernels, so values agree bit-for-bit.
///
/// Output convention shared by every family: a rank-0 `x` yields a scalar;
/// otherwise the result has shape [rows] and holds one log-density per
/// first-axis slice (trailing elements are independent and summed).
namespace sgmcmc::density {

/// Univariate normal applied elementwise. `loc` and `scale` are scalars or
/// shaped like `x`. Throws DomainError unless every scale is > 0.
Tensor normal(const Tensor& x, const Tensor& loc, const Tensor& scale);

/// Laplace(loc, scale) elementwise; scale > 0.
Tensor laplace(const Tensor& x, const Tensor& loc, const Tensor& scale);

/// Gamma(shape, rate) elementwise; shape > 0, rate > 0. Points x < 0 give -inf.
Tensor gamma(const Tensor& x, const Tensor& shape, const Tensor& rate);

/// Diagonal multivariate normal over the last axis: `x` is [k] or [n,k],
/// `mean` and `scale` are [k].
Tensor mvnormal_diag(const Tensor& x, const Tensor& mean, const Tensor& scale);

/// Categorical log-probability of one-hot (or soft) labels: sum_k y_k log p_k.
/// `labels` and `probs` are [K] or [n,K]. Zero-weight labels contribute
/// nothing, so p_k = 0 is allowed where y_k = 0.
Tensor categorical(const Tensor& labels, const Tensor& probs);

/// Two-component mixture of diagonal normals with constant weights
/// (w1, w2), w >= 0, w1 + w2 = 1.
Tensor mixture2(const Tensor& x, std::array<double, 2> weights,
                const Tensor& mean1, const Tensor& scale1, const Tensor& mean2,
                const Tensor& scale2);

// Scalar kernels with partial derivatives, shared with the graph backward
// pass. Each returns the log-density and writes d/d(argument) into `grad`.
struct Partials3 {
  double d_x = 0.0;
  double d_a = 0.0;  // location / shape
  double d_b = 0.0;  // scale / rate
};

double normal_kernel(double x, double loc, double scale, Partials3* grad);
double laplace_kernel(double x, double loc, double scale, Partials3* grad);
double gamma_kernel(double x, double shape, double rate, Partials3* grad);

}  // namespace sgmcmc::density

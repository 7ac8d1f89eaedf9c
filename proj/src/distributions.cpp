#include "sgmcmc/distributions.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <cmath>
#include <limits>
#include <numbers>

#include "sgmcmc/errors.hpp"

namespace sgmcmc::density {
namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_broadcastable(const Tensor& x, const Tensor& p, const char* what) {
  if (!p.is_scalar() && p.shape() != x.shape()) {
    throw ShapeError(std::string(what) + " must be scalar or shaped like x " +
                     to_string(x.shape()) + ", got " + to_string(p.shape()));
  }
}

void check_positive(const Tensor& p, const char* what) {
  for (double v : p.data()) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw DomainError(std::string(what) + " must be positive and finite, got " +
                        std::to_string(v));
    }
  }
}

inline double at(const Tensor& p, std::size_t i) {
  return p.is_scalar() ? p[0] : p[i];
}

Tensor output_like(const Tensor& x) {
  return x.is_scalar() ? Tensor::scalar(0.0) : Tensor(Shape{x.rows()});
}

template <typename Kernel>
Tensor elementwise_family(const Tensor& x, const Tensor& a, const Tensor& b,
                          Kernel kernel) {
  Tensor out = output_like(x);
  const std::size_t stride = x.row_stride();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < stride; ++j) {
      const std::size_t i = r * stride + j;
      acc += kernel(x[i], at(a, i), at(b, i), nullptr);
    }
    out[r] = acc;
  }
  return out;
}

void check_last_axis(const Tensor& x, const Tensor& v, const char* what) {
  if (x.rank() < 1 || x.rank() > 2) {
    throw ShapeError(std::string("x must be [k] or [n,k], got ") +
                     to_string(x.shape()));
  }
  if (v.rank() != 1 || v.shape()[0] != x.shape().back()) {
    throw ShapeError(std::string(what) + " must be [" +
                     std::to_string(x.shape().back()) + "], got " +
                     to_string(v.shape()));
  }
}

}  // namespace

double normal_kernel(double x, double loc, double scale, Partials3* grad) {
  const double z = (x - loc) / scale;
  if (grad) {
    grad->d_x = -z / scale;
    grad->d_a = z / scale;
    grad->d_b = (z * z - 1.0) / scale;
  }
  return -kHalfLog2Pi - std::log(scale) - 0.5 * z * z;
}

double laplace_kernel(double x, double loc, double scale, Partials3* grad) {
  const double diff = x - loc;
  if (grad) {
    // Subgradient at the kink is taken as 0.
    const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    grad->d_x = -sign / scale;
    grad->d_a = sign / scale;
    grad->d_b = (std::abs(diff) / scale - 1.0) / scale;
  }
  return -std::numbers::ln2 - std::log(scale) - std::abs(diff) / scale;
}

double gamma_kernel(double x, double shape, double rate, Partials3* grad) {
  if (grad) *grad = {};
  if (x < 0.0) return kNegInf;
  const double norm = shape * std::log(rate) - std::lgamma(shape);
  if (x == 0.0) {
    if (shape == 1.0) {
      if (grad) {
        grad->d_x = -rate;
        grad->d_b = 1.0 / rate;
      }
      return norm;
    }
    return shape < 1.0 ? std::numeric_limits<double>::infinity() : kNegInf;
  }
  const double log_x = std::log(x);
  if (grad) {
    grad->d_x = (shape - 1.0) / x - rate;
    grad->d_a = std::log(rate) - boost::math::digamma(shape) + log_x;
    grad->d_b = shape / rate - x;
  }
  return norm + (shape - 1.0) * log_x - rate * x;
}

Tensor normal(const Tensor& x, const Tensor& loc, const Tensor& scale) {
  check_broadcastable(x, loc, "normal loc");
  check_broadcastable(x, scale, "normal scale");
  check_positive(scale, "normal scale");
  return elementwise_family(x, loc, scale, normal_kernel);
}

Tensor laplace(const Tensor& x, const Tensor& loc, const Tensor& scale) {
  check_broadcastable(x, loc, "laplace loc");
  check_broadcastable(x, scale, "laplace scale");
  check_positive(scale, "laplace scale");
  return elementwise_family(x, loc, scale, laplace_kernel);
}

Tensor gamma(const Tensor& x, const Tensor& shape, const Tensor& rate) {
  check_broadcastable(x, shape, "gamma shape");
  check_broadcastable(x, rate, "gamma rate");
  check_positive(shape, "gamma shape");
  check_positive(rate, "gamma rate");
  return elementwise_family(x, shape, rate, gamma_kernel);
}

Tensor mvnormal_diag(const Tensor& x, const Tensor& mean, const Tensor& scale) {
  check_last_axis(x, mean, "mvnormal mean");
  check_last_axis(x, scale, "mvnormal scale");
  check_positive(scale, "mvnormal scale");
  const std::size_t k = mean.size();
  const std::size_t rows = x.rank() == 1 ? 1 : x.shape()[0];
  Tensor out = x.rank() == 1 ? Tensor::scalar(0.0) : Tensor(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      acc += normal_kernel(x[r * k + j], mean[j], scale[j], nullptr);
    }
    out[r] = acc;
  }
  return out;
}

Tensor categorical(const Tensor& labels, const Tensor& probs) {
  if (labels.rank() < 1 || labels.rank() > 2 || probs.shape() != labels.shape()) {
    throw ShapeError("categorical expects labels and probs of equal shape [K] "
                     "or [n,K], got " + to_string(labels.shape()) + " and " +
                     to_string(probs.shape()));
  }
  for (double p : probs.data()) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw DomainError("categorical probability outside [0,1]: " +
                        std::to_string(p));
    }
  }
  const std::size_t k = labels.shape().back();
  const std::size_t rows = labels.rank() == 1 ? 1 : labels.shape()[0];
  Tensor out = labels.rank() == 1 ? Tensor::scalar(0.0) : Tensor(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double y = labels[r * k + j];
      if (y != 0.0) acc += y * std::log(probs[r * k + j]);
    }
    out[r] = acc;
  }
  return out;
}

Tensor mixture2(const Tensor& x, std::array<double, 2> weights,
                const Tensor& mean1, const Tensor& scale1, const Tensor& mean2,
                const Tensor& scale2) {
  check_last_axis(x, mean1, "mixture mean1");
  check_last_axis(x, scale1, "mixture scale1");
  check_last_axis(x, mean2, "mixture mean2");
  check_last_axis(x, scale2, "mixture scale2");
  check_positive(scale1, "mixture scale1");
  check_positive(scale2, "mixture scale2");
  if (weights[0] < 0.0 || weights[1] < 0.0 ||
      std::abs(weights[0] + weights[1] - 1.0) > 1e-12) {
    throw DomainError("mixture weights must be non-negative and sum to 1");
  }
  const std::size_t k = mean1.size();
  const std::size_t rows = x.rank() == 1 ? 1 : x.shape()[0];
  Tensor out = x.rank() == 1 ? Tensor::scalar(0.0) : Tensor(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double l1 = 0.0;
    double l2 = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      l1 += normal_kernel(x[r * k + j], mean1[j], scale1[j], nullptr);
      l2 += normal_kernel(x[r * k + j], mean2[j], scale2[j], nullptr);
    }
    const double a = weights[0] > 0.0 ? std::log(weights[0]) + l1 : kNegInf;
    const double b = weights[1] > 0.0 ? std::log(weights[1]) + l2 : kNegInf;
    const double m = std::max(a, b);
    out[r] = m + std::log(std::exp(a - m) + std::exp(b - m));
  }
  return out;
}

}  // namespace sgmcmc::density

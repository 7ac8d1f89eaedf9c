#pragma once

// Shared oracles for the unit and acceptance tests.

#include <cmath>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sgmcmc/data.hpp"
#include "sgmcmc/samplers.hpp"

namespace testing {

using sgmcmc::Dataset;
using sgmcmc::Model;
using sgmcmc::Tensor;
using sgmcmc::TensorMap;

/// Central differences of `f` at `theta`, coordinate by coordinate.
inline TensorMap central_differences(const std::function<double(const TensorMap&)>& f, const TensorMap& theta,
                                     double h = 1e-5) {
  TensorMap out;
  for (const auto& [name, t] : theta) {
    Tensor g(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) {
      TensorMap plus = theta;
      TensorMap minus = theta;
      plus.at(name)[i] += h;
      minus.at(name)[i] -= h;
      g[i] = (f(plus) - f(minus)) / (2.0 * h);
    }
    out.emplace(name, std::move(g));
  }
  return out;
}

inline double log_posterior(const Model& model, const Dataset& data, const TensorMap& theta) {
  return model.log_prior(theta) + model.log_lik(theta, data);
}

/// Largest violation of |g - fd| <= abs_floor + rel * |fd| (0 means all pass).
inline double fd_violation(const TensorMap& grad, const TensorMap& fd, double rel = 1e-5, double abs_floor = 1e-8) {
  double worst = 0.0;
  for (const auto& [name, g] : grad) {
    const Tensor& f = fd.at(name);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double excess = std::abs(g[i] - f[i]) - (abs_floor + rel * std::abs(f[i]));
      worst = std::max(worst, excess);
    }
  }
  return worst;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double variance_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

/// Monte-Carlo standard error of the mean by non-overlapping batch means.
inline double batch_means_se(const std::vector<double>& v, std::size_t batches = 50) {
  const std::size_t len = v.size() / batches;
  std::vector<double> means;
  for (std::size_t b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < len; ++i) s += v[b * len + i];
    means.push_back(s / static_cast<double>(len));
  }
  return std::sqrt(variance_of(means) / static_cast<double>(batches));
}

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("sgmcmc_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace testing

#pragma once

// Shared fixtures for the model tests and the acceptance run.

#include <random>
#include <vector>

#include "hpc_sentinel/features.hpp"
#include "hpc_sentinel/models.hpp"

namespace fixture {

using namespace hpcs;

inline train::Examples random_examples(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  train::Examples ex;
  ex.rows = rows;
  ex.cols = cols;
  for (std::size_t i = 0; i < rows * cols; ++i) ex.x.push_back(g(rng));
  for (std::size_t i = 0; i < rows; ++i) ex.y.push_back(ex.x[i * cols] + 0.5 * g(rng) > 0 ? 1 : 0);
  return ex;
}

inline std::vector<double> flatten(const LinearParams& p) {
  auto v = p.weights;
  v.push_back(p.bias);
  return v;
}

inline LinearParams unflatten(const std::vector<double>& v) {
  return {std::vector<double>(v.begin(), v.end() - 1), v.back()};
}

inline std::vector<double> flatten(CnnParams p) {
  std::vector<double> v;
  train::for_each_param(p, [&](double& x) { v.push_back(x); });
  return v;
}

inline CnnParams unflatten(CnnParams shape, const std::vector<double>& v) {
  std::size_t i = 0;
  train::for_each_param(shape, [&](double& x) { x = v[i++]; });
  return shape;
}

// Two Gaussian classes with a shared, correlated covariance.
struct GaussianProblem {
  std::vector<std::vector<double>> cov;
  std::vector<double> mu0, mu1;
  TraceDataset ds;
};

inline GaussianProblem gaussian_problem(std::size_t n, std::uint64_t seed) {
  const std::size_t d = 5;
  // cov = L L^T with a fixed lower-triangular L.
  const double L[5][5] = {{2.0, 0, 0, 0, 0},
                          {0.6, 1.0, 0, 0, 0},
                          {-0.4, 0.3, 1.5, 0, 0},
                          {0.2, -0.5, 0.1, 0.8, 0},
                          {0.0, 0.4, -0.3, 0.2, 1.2}};
  GaussianProblem gp;
  gp.cov.assign(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < d; ++k) gp.cov[i][j] += L[i][k] * L[j][k];
  gp.mu0 = {10, 20, 30, 40, 50};
  gp.mu1 = {11.5, 19.0, 31.0, 40.5, 49.2};

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  gp.ds.event_set = make_event_set(Profile::spectre);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = i % 2 == 0 ? 1 : 0;
    std::vector<double> z(d), x(d);
    for (auto& v : z) v = g(rng);
    for (std::size_t r = 0; r < d; ++r) {
      x[r] = (y ? gp.mu1 : gp.mu0)[r];
      for (std::size_t k = 0; k <= r; ++k) x[r] += L[r][k] * z[k];
    }
    gp.ds.windows.push_back({0, static_cast<Pid>(i), 0, x, y});
  }
  gp.ds.norm = fit_norm(gp.ds.windows);
  return gp;
}

}  // namespace fixture

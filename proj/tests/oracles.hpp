#pragma once

// Reference implementations used only to cross-check the library. They are
// deliberately naive and share no code with it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <utility>
#include <vector>

namespace oracle {

// Best accuracy of any rule "feature f above (or below) a threshold". Tries every
// feature, both directions, and every cut between sorted values.
inline double best_single_threshold(const std::vector<std::vector<double>>& x,
                                    const std::vector<int>& y) {
  const std::size_t n = x.size();
  if (n == 0) return 0;
  const std::size_t d = x.front().size();
  const std::size_t pos_total = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
  double best = 0;
  for (std::size_t f = 0; f < d; ++f) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a][f] < x[b][f]; });
    // Predict 1 for the top n-i samples; walk i upward.
    std::size_t pos_below = 0;
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == 0 || i == n || x[idx[i - 1]][f] != x[idx[i]][f]) {
        const std::size_t neg_below = i - pos_below;
        const std::size_t pos_above = pos_total - pos_below;
        const double above = static_cast<double>(neg_below + pos_above) / static_cast<double>(n);
        best = std::max({best, above, 1.0 - above});
      }
      if (i < n && y[idx[i]] == 1) ++pos_below;
    }
  }
  return best;
}

// Classifies each sample by the nearer class mean (Euclidean).
inline double nearest_centroid_accuracy(const std::vector<std::vector<double>>& train_x,
                                        const std::vector<int>& train_y,
                                        const std::vector<std::vector<double>>& test_x,
                                        const std::vector<int>& test_y) {
  const std::size_t d = train_x.front().size();
  std::vector<double> c[2] = {std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  double cnt[2] = {0, 0};
  for (std::size_t i = 0; i < train_x.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) c[train_y[i]][j] += train_x[i][j];
    cnt[train_y[i]] += 1;
  }
  for (int k = 0; k < 2; ++k)
    for (auto& v : c[k]) v /= cnt[k];
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_x.size(); ++i) {
    double dist[2] = {0, 0};
    for (int k = 0; k < 2; ++k)
      for (std::size_t j = 0; j < d; ++j) dist[k] += (test_x[i][j] - c[k][j]) * (test_x[i][j] - c[k][j]);
    const int pred = dist[1] < dist[0] ? 1 : 0;
    correct += pred == test_y[i];
  }
  return static_cast<double>(correct) / static_cast<double>(test_x.size());
}

// Central finite difference of f along each coordinate of `theta`.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> theta, double h = 1e-5) {
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double keep = theta[i];
    theta[i] = keep + h;
    const double up = f(theta);
    theta[i] = keep - h;
    const double down = f(theta);
    theta[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// Largest |a-b| / max(|a|, |b|, floor) over components.
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b,
                                 double floor = 1e-8) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

// Solves A x = b by Gauss-Jordan elimination with partial pivoting.
inline std::vector<double> solve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    std::swap(b[col], b[piv]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  for (std::size_t i = 0; i < n; ++i) b[i] /= a[i][i];
  return b;
}

// Normal of the Bayes boundary between two Gaussians with shared covariance.
inline std::vector<double> bayes_direction(const std::vector<std::vector<double>>& cov,
                                           const std::vector<double>& mu0,
                                           const std::vector<double>& mu1) {
  std::vector<double> diff(mu0.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = mu1[i] - mu0[i];
  return solve(cov, diff);
}

inline double angle_degrees(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const double c = std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
  return std::acos(c) * 180.0 / 3.14159265358979323846;
}

// Accuracy / FP / FN percentages over all windows, by direct counting.
struct Rates {
  double accuracy, fp, fn;
};

inline Rates count_rates(const std::vector<int>& truth, const std::vector<int>& pred) {
  double ok = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == pred[i]) ok += 1;
    else if (pred[i] == 1) fp += 1;
    else fn += 1;
  }
  const double n = static_cast<double>(truth.size());
  return {100 * ok / n, 100 * fp / n, 100 * fn / n};
}

// Median of a non-empty sample.
inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace oracle

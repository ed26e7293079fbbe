#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "hpc_sentinel/error.hpp"
#include "hpc_sentinel/events.hpp"
#include "hpc_sentinel/features.hpp"
#include "hpc_sentinel/json_util.hpp"
#include "hpc_sentinel/log.hpp"
#include "hpc_sentinel/numfmt.hpp"

namespace hpcs {

enum class ModelKind { LDA, LR, SVM, CNN };

inline constexpr std::array<ModelKind, 4> kAllModels = {ModelKind::LDA, ModelKind::LR,
                                                        ModelKind::SVM, ModelKind::CNN};

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::LDA: return "LDA";
    case ModelKind::LR: return "LR";
    case ModelKind::SVM: return "SVM";
    case ModelKind::CNN: return "CNN";
  }
  return "?";
}

// Case-insensitive.
inline std::optional<ModelKind> parse_model_kind(std::string_view s) {
  std::string up(s);
  std::transform(up.begin(), up.end(), up.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return detail::parse_enum(std::string_view(up), kAllModels);
}

struct Hyperparams {
  // LR and SVM: full-batch gradient descent.
  double learning_rate = 0.1;
  int epochs = 500;
  double svm_lambda = 1e-3;
  double svm_smoothing = 0.5;  // width of the quadratic zone of the smoothed hinge

  // CNN: Adam on mini-batches of window stacks.
  int cnn_window = 8;
  int cnn_filters = 16;
  int cnn_kernel = 3;
  int cnn_epochs = 50;
  double cnn_learning_rate = 0.01;
  int cnn_batch = 32;
  double cnn_leaky_slope = 0.01;

  // Decision cutoff on the [0,1] score.
  double threshold = 0.5;
};

struct LdaParams {
  std::vector<double> mean0, mean1;  // class means in normalised units
  std::vector<double> covariance;    // pooled, regularised, d*d row-major
  double prior1 = 0.5;
  std::vector<double> weights;  // covariance^-1 (mean1 - mean0)
  double bias = 0;

  bool operator==(const LdaParams&) const = default;
};

// Shared by LR and SVM.
struct LinearParams {
  std::vector<double> weights;
  double bias = 0;

  bool operator==(const LinearParams&) const = default;
};

// Conv1d over time (valid padding) -> leaky ReLU -> global average pool -> dense.
struct CnnParams {
  int window = 8;
  int filters = 16;
  int kernel = 3;
  double leaky_slope = 0.01;
  std::vector<double> conv_weights;  // [filter][tap][feature]
  std::vector<double> conv_bias;     // [filter]
  std::vector<double> dense_weights; // [filter]
  double dense_bias = 0;

  bool operator==(const CnnParams&) const = default;
};

struct TrainingReport {
  std::vector<double> loss_history;  // initial loss, then one entry per epoch
  bool converged = true;
  std::vector<std::string> warnings;
};

struct ClassifierModel {
  ModelKind kind = ModelKind::LDA;
  EventSet event_set;
  NormStats norm;
  double threshold = 0.5;
  std::variant<LdaParams, LinearParams, CnnParams> params;
  TrainingReport report;  // not persisted

  std::size_t features() const noexcept { return event_set.size(); }

  // Number of consecutive windows the model looks at.
  int history_length() const noexcept {
    return kind == ModelKind::CNN ? std::get<CnnParams>(params).window : 1;
  }

  // Equality over everything that is persisted.
  bool same_parameters(const ClassifierModel& o) const {
    return kind == o.kind && event_set == o.event_set && norm == o.norm &&
           threshold == o.threshold && params == o.params;
  }
};

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
inline double softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

// ---------------------------------------------------------------------------
// Training internals. Exposed so the gradient and loss properties can be tested.

namespace train {

// Row-major design matrix in normalised units.
struct Examples {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> x;
  std::vector<int> y;  // 0/1

  std::span<const double> row(std::size_t i) const { return {x.data() + i * cols, cols}; }
};

inline Examples to_examples(std::span<const WindowFeatures> windows, const NormStats& norm) {
  Examples ex;
  ex.rows = windows.size();
  ex.cols = norm.size();
  ex.x.reserve(ex.rows * ex.cols);
  for (const auto& w : windows) {
    if (!w.label) throw DataError("training window without label");
    std::vector<double> v = w.x;
    normalize_in_place(v, norm);
    ex.x.insert(ex.x.end(), v.begin(), v.end());
    ex.y.push_back(*w.label);
  }
  return ex;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Mean logistic loss and its gradient.
inline std::pair<double, LinearParams> logistic_loss_grad(const LinearParams& p,
                                                          const Examples& ex) {
  LinearParams g{std::vector<double>(ex.cols, 0.0), 0.0};
  double loss = 0;
  for (std::size_t i = 0; i < ex.rows; ++i) {
    const double ys = ex.y[i] ? 1.0 : -1.0;
    const double z = dot(p.weights, ex.row(i)) + p.bias;
    loss += softplus(-ys * z);
    const double dz = -ys * sigmoid(-ys * z);
    const auto r = ex.row(i);
    for (std::size_t j = 0; j < ex.cols; ++j) g.weights[j] += dz * r[j];
    g.bias += dz;
  }
  const double n = static_cast<double>(ex.rows);
  for (auto& w : g.weights) w /= n;
  g.bias /= n;
  return {loss / n, g};
}

// Smoothed hinge: 0 above margin 1, quadratic over [1-s, 1], linear below.
inline double smoothed_hinge(double m, double s) {
  if (m >= 1) return 0;
  if (m <= 1 - s) return 1 - m - s / 2;
  return (1 - m) * (1 - m) / (2 * s);
}

inline double smoothed_hinge_slope(double m, double s) {
  if (m >= 1) return 0;
  if (m <= 1 - s) return -1;
  return -(1 - m) / s;
}

// Mean smoothed hinge plus lambda/2 |w|^2, and its gradient.
inline std::pair<double, LinearParams> hinge_loss_grad(const LinearParams& p, const Examples& ex,
                                                       double lambda, double smoothing) {
  LinearParams g{std::vector<double>(ex.cols, 0.0), 0.0};
  double loss = 0;
  for (std::size_t i = 0; i < ex.rows; ++i) {
    const double ys = ex.y[i] ? 1.0 : -1.0;
    const double m = ys * (dot(p.weights, ex.row(i)) + p.bias);
    loss += smoothed_hinge(m, smoothing);
    const double dz = ys * smoothed_hinge_slope(m, smoothing);
    if (dz == 0) continue;
    const auto r = ex.row(i);
    for (std::size_t j = 0; j < ex.cols; ++j) g.weights[j] += dz * r[j];
    g.bias += dz;
  }
  const double n = static_cast<double>(ex.rows);
  loss /= n;
  for (std::size_t j = 0; j < ex.cols; ++j) {
    g.weights[j] = g.weights[j] / n + lambda * p.weights[j];
    loss += 0.5 * lambda * p.weights[j] * p.weights[j];
  }
  g.bias /= n;
  return {loss, g};
}

// Full-batch gradient descent. A step that would raise the loss is retried
// with half the learning rate, so the recorded loss never increases.
template <typename LossGrad>
LinearParams descend(LossGrad&& loss_grad, std::size_t d, double lr, int epochs,
                     TrainingReport& report) {
  LinearParams p{std::vector<double>(d, 0.0), 0.0};
  auto [loss, grad] = loss_grad(p);
  report.loss_history.push_back(loss);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    bool accepted = false;
    for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
      LinearParams next = p;
      for (std::size_t j = 0; j < d; ++j) next.weights[j] -= lr * grad.weights[j];
      next.bias -= lr * grad.bias;
      auto [next_loss, next_grad] = loss_grad(next);
      if (next_loss <= loss) {
        p = std::move(next);
        loss = next_loss;
        grad = std::move(next_grad);
        accepted = true;
      } else {
        lr *= 0.5;
      }
    }
    report.loss_history.push_back(loss);
    if (!accepted) break;
  }
  double gnorm = grad.bias * grad.bias;
  for (double g : grad.weights) gnorm += g * g;
  report.converged = std::sqrt(gnorm) < 1e-4;
  return p;
}

// ---- CNN ------------------------------------------------------------------

// Stacks of `window` consecutive normalised windows; one example per row.
struct StackExamples {
  std::size_t rows = 0;
  std::size_t window = 0;
  std::size_t features = 0;
  std::vector<double> x;  // rows * window * features
  std::vector<int> y;

  std::span<const double> stack(std::size_t i) const {
    return {x.data() + i * window * features, window * features};
  }
};

inline CnnParams init_cnn(std::size_t features, const Hyperparams& hp, std::uint64_t seed) {
  CnnParams p;
  p.window = hp.cnn_window;
  p.filters = hp.cnn_filters;
  p.kernel = hp.cnn_kernel;
  p.leaky_slope = hp.cnn_leaky_slope;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> conv(0.0, std::sqrt(2.0 / (p.kernel * features)));
  std::normal_distribution<double> dense(0.0, std::sqrt(1.0 / p.filters));
  p.conv_weights.resize(static_cast<std::size_t>(p.filters * p.kernel) * features);
  for (auto& w : p.conv_weights) w = conv(rng);
  p.conv_bias.assign(static_cast<std::size_t>(p.filters), 0.0);
  p.dense_weights.resize(static_cast<std::size_t>(p.filters));
  for (auto& w : p.dense_weights) w = dense(rng);
  p.dense_bias = 0;
  return p;
}

// Logit for one stack of `steps` rows. `steps` may differ from p.window but must
// be at least the kernel length.
inline double cnn_logit(const CnnParams& p, std::span<const double> stack, std::size_t features,
                        std::vector<double>* act = nullptr) {
  const std::size_t steps = stack.size() / features;
  const std::size_t k = static_cast<std::size_t>(p.kernel);
  const std::size_t positions = steps - k + 1;
  const std::size_t nf = static_cast<std::size_t>(p.filters);
  if (act) act->assign(positions * nf, 0.0);
  double z = p.dense_bias;
  for (std::size_t f = 0; f < nf; ++f) {
    const double* wf = p.conv_weights.data() + f * k * features;
    double pooled = 0;
    for (std::size_t t = 0; t < positions; ++t) {
      double a = p.conv_bias[f];
      const double* in = stack.data() + t * features;
      for (std::size_t i = 0; i < k * features; ++i) a += wf[i] * in[i];
      if (act) (*act)[t * nf + f] = a;
      pooled += a > 0 ? a : p.leaky_slope * a;
    }
    z += p.dense_weights[f] * pooled / static_cast<double>(positions);
  }
  return z;
}

// Accumulates d(loss)/d(params) * scale for one example into `g`; returns the loss.
inline double cnn_backprop(const CnnParams& p, std::span<const double> stack, std::size_t features,
                           int label, double scale, CnnParams& g, std::vector<double>& act) {
  const double z = cnn_logit(p, stack, features, &act);
  const double ys = label ? 1.0 : -1.0;
  const double dz = -ys * sigmoid(-ys * z) * scale;
  const std::size_t k = static_cast<std::size_t>(p.kernel);
  const std::size_t nf = static_cast<std::size_t>(p.filters);
  const std::size_t positions = act.size() / nf;
  const double inv_pos = 1.0 / static_cast<double>(positions);
  g.dense_bias += dz;
  for (std::size_t f = 0; f < nf; ++f) {
    double pooled = 0;
    for (std::size_t t = 0; t < positions; ++t) {
      const double a = act[t * nf + f];
      pooled += a > 0 ? a : p.leaky_slope * a;
    }
    g.dense_weights[f] += dz * pooled * inv_pos;
    const double dpool = dz * p.dense_weights[f] * inv_pos;
    double* gw = g.conv_weights.data() + f * k * features;
    for (std::size_t t = 0; t < positions; ++t) {
      const double da = dpool * (act[t * nf + f] > 0 ? 1.0 : p.leaky_slope);
      g.conv_bias[f] += da;
      const double* in = stack.data() + t * features;
      for (std::size_t i = 0; i < k * features; ++i) gw[i] += da * in[i];
    }
  }
  return softplus(-ys * z);
}

inline CnnParams zeros_like(const CnnParams& p) {
  CnnParams g = p;
  std::fill(g.conv_weights.begin(), g.conv_weights.end(), 0.0);
  std::fill(g.conv_bias.begin(), g.conv_bias.end(), 0.0);
  std::fill(g.dense_weights.begin(), g.dense_weights.end(), 0.0);
  g.dense_bias = 0;
  return g;
}

// Mean logistic loss over `rows` and its gradient.
inline std::pair<double, CnnParams> cnn_loss_grad(const CnnParams& p, const StackExamples& ex,
                                                  std::span<const std::size_t> rows) {
  CnnParams g = zeros_like(p);
  std::vector<double> act;
  double loss = 0;
  const double scale = 1.0 / static_cast<double>(rows.size());
  for (std::size_t i : rows) loss += cnn_backprop(p, ex.stack(i), ex.features, ex.y[i], scale, g, act);
  return {loss * scale, g};
}

inline double cnn_loss(const CnnParams& p, const StackExamples& ex) {
  double loss = 0;
  for (std::size_t i = 0; i < ex.rows; ++i) {
    const double ys = ex.y[i] ? 1.0 : -1.0;
    loss += softplus(-ys * cnn_logit(p, ex.stack(i), ex.features));
  }
  return loss / static_cast<double>(ex.rows);
}

// Visits every scalar parameter in a fixed order.
template <typename Fn>
void for_each_param(CnnParams& p, Fn&& fn) {
  for (auto& v : p.conv_weights) fn(v);
  for (auto& v : p.conv_bias) fn(v);
  for (auto& v : p.dense_weights) fn(v);
  fn(p.dense_bias);
}

template <typename Fn>
void for_each_param_pair(CnnParams& a, const CnnParams& b, Fn&& fn) {
  for (std::size_t i = 0; i < a.conv_weights.size(); ++i) fn(a.conv_weights[i], b.conv_weights[i]);
  for (std::size_t i = 0; i < a.conv_bias.size(); ++i) fn(a.conv_bias[i], b.conv_bias[i]);
  for (std::size_t i = 0; i < a.dense_weights.size(); ++i)
    fn(a.dense_weights[i], b.dense_weights[i]);
  fn(a.dense_bias, b.dense_bias);
}

// Per-(trace, pid) chronological groups of window indices.
inline std::vector<std::vector<std::size_t>> group_by_process(
    std::span<const WindowFeatures> windows) {
  std::map<std::pair<int, Pid>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < windows.size(); ++i)
    groups[{windows[i].trace, windows[i].pid}].push_back(i);
  std::vector<std::vector<std::size_t>> out;
  out.reserve(groups.size());
  for (auto& [_, idx] : groups) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return windows[a].window_index < windows[b].window_index;
    });
    out.push_back(std::move(idx));
  }
  return out;
}

// Builds the stack ending at each window. Stacks never cross process
// boundaries; a process's first windows are padded by repeating its earliest one.
inline StackExamples to_stacks(std::span<const WindowFeatures> windows, const NormStats& norm,
                               std::size_t window, std::vector<std::size_t>* order = nullptr) {
  StackExamples ex;
  ex.window = window;
  ex.features = norm.size();
  ex.rows = windows.size();
  ex.x.reserve(ex.rows * window * ex.features);
  if (order) order->clear();
  for (const auto& group : group_by_process(windows)) {
    for (std::size_t pos = 0; pos < group.size(); ++pos) {
      for (std::size_t s = 0; s < window; ++s) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(pos) -
                                   static_cast<std::ptrdiff_t>(window - 1) +
                                   static_cast<std::ptrdiff_t>(s);
        std::vector<double> v = windows[group[static_cast<std::size_t>(std::max<std::ptrdiff_t>(src, 0))]].x;
        normalize_in_place(v, norm);
        ex.x.insert(ex.x.end(), v.begin(), v.end());
      }
      ex.y.push_back(windows[group[pos]].label.value_or(0));
      if (order) order->push_back(group[pos]);
    }
  }
  return ex;
}

// Adam on mini-batches. After each epoch the full-data loss is checked; an
// epoch that raised it is rolled back and the learning rate halved.
inline CnnParams fit_cnn(const StackExamples& ex, const Hyperparams& hp, std::uint64_t seed,
                         TrainingReport& report) {
  CnnParams p = init_cnn(ex.features, hp, seed);
  CnnParams m = zeros_like(p), v = zeros_like(p);
  std::mt19937_64 rng(seed ^ 0xC0FFEEull);
  std::vector<std::size_t> order(ex.rows);
  std::iota(order.begin(), order.end(), 0);
  double lr = hp.cnn_learning_rate;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  long step = 0;
  double loss = cnn_loss(p, ex);
  report.loss_history.push_back(loss);
  const std::size_t batch = static_cast<std::size_t>(std::max(1, hp.cnn_batch));

  for (int epoch = 0; epoch < hp.cnn_epochs; ++epoch) {
    const CnnParams p0 = p, m0 = m, v0 = v;
    const long step0 = step;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < ex.rows; start += batch) {
      const std::size_t end = std::min(ex.rows, start + batch);
      auto [_, g] = cnn_loss_grad(p, ex, std::span<const std::size_t>(order).subspan(start, end - start));
      ++step;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
      auto update = [&](double& param, double& mi, double& vi, double gi) {
        mi = b1 * mi + (1 - b1) * gi;
        vi = b2 * vi + (1 - b2) * gi * gi;
        param -= lr * (mi / c1) / (std::sqrt(vi / c2) + eps);
      };
      for (std::size_t i = 0; i < p.conv_weights.size(); ++i)
        update(p.conv_weights[i], m.conv_weights[i], v.conv_weights[i], g.conv_weights[i]);
      for (std::size_t i = 0; i < p.conv_bias.size(); ++i)
        update(p.conv_bias[i], m.conv_bias[i], v.conv_bias[i], g.conv_bias[i]);
      for (std::size_t i = 0; i < p.dense_weights.size(); ++i)
        update(p.dense_weights[i], m.dense_weights[i], v.dense_weights[i], g.dense_weights[i]);
      update(p.dense_bias, m.dense_bias, v.dense_bias, g.dense_bias);
    }
    const double next = cnn_loss(p, ex);
    if (next <= loss) {
      loss = next;
    } else {
      p = p0;
      m = m0;
      v = v0;
      step = step0;
      lr *= 0.5;
    }
    report.loss_history.push_back(loss);
  }
  const auto n = report.loss_history.size();
  report.converged = n < 2 || std::abs(report.loss_history[n - 2] - report.loss_history[n - 1]) <
                                  1e-4 * std::max(1.0, report.loss_history[n - 1]);
  return p;
}

// ---- LDA ------------------------------------------------------------------

inline LdaParams fit_lda(const Examples& ex, TrainingReport& report) {
  const std::size_t d = ex.cols;
  Eigen::VectorXd mu[2] = {Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d)),
                           Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d))};
  double count[2] = {0, 0};
  for (std::size_t i = 0; i < ex.rows; ++i) {
    const auto r = ex.row(i);
    mu[ex.y[i]] += Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(d));
    count[ex.y[i]] += 1;
  }
  if (count[0] < 2 || count[1] < 2) throw DataError("LDA needs at least 2 examples per class");
  mu[0] /= count[0];
  mu[1] /= count[1];

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < ex.rows; ++i) {
    const auto r = ex.row(i);
    const Eigen::VectorXd c =
        Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(d)) - mu[ex.y[i]];
    cov.noalias() += c * c.transpose();
  }
  cov /= (count[0] + count[1] - 2);
  double ridge = 1e-6 * cov.trace() / static_cast<double>(d);
  if (!(ridge > 0)) ridge = 1e-12;
  cov.diagonal().array() += ridge;

  Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
  for (int tries = 0; tries < 12 && (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
                                     ldlt.vectorD().minCoeff() <= 0);
       ++tries) {
    ridge *= 1000;
    report.warnings.push_back("LDA covariance singular; ridge raised to " + format_double(ridge));
    warn(report.warnings.back());
    cov.diagonal().array() += ridge;
    ldlt.compute(cov);
  }

  const Eigen::VectorXd w = ldlt.solve(mu[1] - mu[0]);
  LdaParams p;
  p.mean0.assign(mu[0].data(), mu[0].data() + d);
  p.mean1.assign(mu[1].data(), mu[1].data() + d);
  p.covariance.resize(d * d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      p.covariance[i * d + j] = cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  p.prior1 = count[1] / (count[0] + count[1]);
  p.weights.assign(w.data(), w.data() + d);
  p.bias = -0.5 * w.dot(mu[1] + mu[0]) + std::log(p.prior1 / (1.0 - p.prior1));
  return p;
}

}  // namespace train

// ---------------------------------------------------------------------------
// Public interface

inline ClassifierModel fit(ModelKind kind, const TraceDataset& ds, const Hyperparams& hp = {},
                           std::uint64_t seed = 0) {
  if (ds.count_label(0) < 2 || ds.count_label(1) < 2)
    throw DataError("fit: need at least 2 windows of each class");
  ClassifierModel model;
  model.kind = kind;
  model.event_set = ds.event_set;
  model.norm = ds.norm;
  model.threshold = hp.threshold;
  const std::size_t d = ds.event_set.size();

  switch (kind) {
    case ModelKind::LDA: {
      const auto ex = train::to_examples(ds.windows, ds.norm);
      model.params = train::fit_lda(ex, model.report);
      break;
    }
    case ModelKind::LR: {
      const auto ex = train::to_examples(ds.windows, ds.norm);
      model.params = train::descend([&](const LinearParams& p) { return train::logistic_loss_grad(p, ex); },
                                    d, hp.learning_rate, hp.epochs, model.report);
      break;
    }
    case ModelKind::SVM: {
      const auto ex = train::to_examples(ds.windows, ds.norm);
      model.params = train::descend(
          [&](const LinearParams& p) {
            return train::hinge_loss_grad(p, ex, hp.svm_lambda, hp.svm_smoothing);
          },
          d, hp.learning_rate, hp.epochs, model.report);
      break;
    }
    case ModelKind::CNN: {
      if (hp.cnn_window < hp.cnn_kernel || hp.cnn_kernel < 1)
        throw ConfigError("cnn_window", "window must be >= kernel >= 1");
      const auto ex = train::to_stacks(ds.windows, ds.norm, static_cast<std::size_t>(hp.cnn_window));
      model.params = train::fit_cnn(ex, hp, seed, model.report);
      break;
    }
  }
  if (!model.report.converged && kind != ModelKind::LDA)
    model.report.warnings.push_back(std::string(to_string(kind)) +
                                    ": stopped at max epochs before converging");
  return model;
}

struct Prediction {
  double score = 0;
  int label = 0;
};

// Scores the newest window of `history` (oldest first, raw deltas). Linear models
// use only the newest window; the CNN uses up to its stack length, padding a short
// history by repeating the oldest window.
inline Prediction predict_score(const ClassifierModel& model,
                                std::span<const std::vector<double>> history) {
  if (history.empty()) throw DimensionError("predict_score: empty input");
  const std::size_t d = model.features();
  for (const auto& x : history)
    if (x.size() != d)
      throw DimensionError("predict_score: model expects " + std::to_string(d) +
                           " features, got " + std::to_string(x.size()));

  double score = 0;
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, CnnParams>) {
          const std::size_t steps =
              std::max<std::size_t>(static_cast<std::size_t>(p.window), static_cast<std::size_t>(p.kernel));
          std::vector<double> stack(steps * d);
          const std::size_t have = std::min(history.size(), steps);
          const std::size_t first = history.size() - have;
          for (std::size_t s = 0; s < steps; ++s) {
            const std::size_t pad = steps - have;
            const std::size_t src = first + (s < pad ? 0 : s - pad);
            std::copy(history[src].begin(), history[src].end(), stack.begin() + static_cast<std::ptrdiff_t>(s * d));
            normalize_in_place(std::span<double>(stack.data() + s * d, d), model.norm);
          }
          score = sigmoid(train::cnn_logit(p, stack, d));
        } else {
          std::vector<double> x = history.back();
          normalize_in_place(x, model.norm);
          score = sigmoid(train::dot(p.weights, x) + p.bias);
        }
      },
      model.params);
  return {score, score >= model.threshold ? 1 : 0};
}

inline Prediction predict_score(const ClassifierModel& model, const std::vector<double>& x) {
  return predict_score(model, std::span<const std::vector<double>>(&x, 1));
}

// Scores every window, giving the CNN each window's per-process history.
inline std::vector<double> score_windows(const ClassifierModel& model,
                                         std::span<const WindowFeatures> windows) {
  std::vector<double> scores(windows.size());
  if (model.kind != ModelKind::CNN) {
    for (std::size_t i = 0; i < windows.size(); ++i)
      scores[i] = predict_score(model, windows[i].x).score;
    return scores;
  }
  const std::size_t w = static_cast<std::size_t>(model.history_length());
  std::vector<std::vector<double>> history;
  for (const auto& group : train::group_by_process(windows)) {
    for (std::size_t pos = 0; pos < group.size(); ++pos) {
      history.clear();
      const std::size_t from = pos + 1 >= w ? pos + 1 - w : 0;
      for (std::size_t j = from; j <= pos; ++j) history.push_back(windows[group[j]].x);
      scores[group[pos]] = predict_score(model, history).score;
    }
  }
  return scores;
}

struct Metrics {
  std::size_t n = 0, tp = 0, tn = 0, fp = 0, fn = 0;
  double accuracy = 0;  // percent of all windows
  double fp_pct = 0;    // false positives, percent of all windows
  double fn_pct = 0;    // false negatives, percent of all windows

  bool operator==(const Metrics&) const = default;
};

inline Metrics metrics_from(std::span<const int> labels, std::span<const int> predicted) {
  if (labels.empty()) throw DataError("evaluate: no windows");
  if (labels.size() != predicted.size()) throw DimensionError("evaluate: size mismatch");
  Metrics m;
  m.n = labels.size();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1)
      (predicted[i] == 1 ? m.tp : m.fn)++;
    else
      (predicted[i] == 1 ? m.fp : m.tn)++;
  }
  const double n = static_cast<double>(m.n);
  m.accuracy = 100.0 * static_cast<double>(m.tp + m.tn) / n;
  m.fp_pct = 100.0 * static_cast<double>(m.fp) / n;
  m.fn_pct = 100.0 * static_cast<double>(m.fn) / n;
  return m;
}

inline Metrics evaluate(const ClassifierModel& model, std::span<const WindowFeatures> windows) {
  if (windows.empty()) throw DataError("evaluate: no windows");
  std::vector<int> labels, predicted;
  const auto scores = score_windows(model, windows);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (!windows[i].label) throw DataError("evaluate: window without label");
    labels.push_back(*windows[i].label);
    predicted.push_back(scores[i] >= model.threshold ? 1 : 0);
  }
  return metrics_from(labels, predicted);
}

struct SweepPoint {
  double threshold = 0;
  std::size_t fp = 0, fn = 0;
};

inline std::vector<SweepPoint> threshold_sweep(std::span<const double> scores,
                                               std::span<const int> labels,
                                               std::span<const double> thresholds) {
  std::vector<SweepPoint> out;
  for (double t : thresholds) {
    SweepPoint pt{t, 0, 0};
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const int pred = scores[i] >= t ? 1 : 0;
      if (pred == 1 && labels[i] == 0) ++pt.fp;
      if (pred == 0 && labels[i] == 1) ++pt.fn;
    }
    out.push_back(pt);
  }
  return out;
}

struct CrossValidation {
  std::vector<Metrics> folds;
  double mean_accuracy = 0, stddev_accuracy = 0;
  double mean_fp = 0, mean_fn = 0;
};

inline CrossValidation cross_validate(ModelKind kind, const TraceDataset& ds, int k,
                                      std::uint64_t seed, const Hyperparams& hp = {}) {
  CrossValidation cv;
  for (const auto& fold : kfold_split(ds, k, seed)) {
    const TraceDataset train_set = ds.subset(fold.train);
    const ClassifierModel model = fit(kind, train_set, hp, seed);
    std::vector<WindowFeatures> held;
    held.reserve(fold.validation.size());
    for (std::size_t i : fold.validation) held.push_back(ds.windows[i]);
    cv.folds.push_back(evaluate(model, held));
  }
  const double n = static_cast<double>(cv.folds.size());
  for (const auto& m : cv.folds) {
    cv.mean_accuracy += m.accuracy / n;
    cv.mean_fp += m.fp_pct / n;
    cv.mean_fn += m.fn_pct / n;
  }
  for (const auto& m : cv.folds)
    cv.stddev_accuracy += (m.accuracy - cv.mean_accuracy) * (m.accuracy - cv.mean_accuracy) / n;
  cv.stddev_accuracy = std::sqrt(cv.stddev_accuracy);
  return cv;
}

// ---------------------------------------------------------------------------
// Model files: versioned JSON with every double stored as its shortest
// round-trip decimal string.

inline constexpr int kModelSchemaVersion = 1;

namespace detail {

inline jsonu::ordered_json encode_doubles(std::span<const double> v) {
  auto arr = jsonu::ordered_json::array();
  for (double x : v) arr.push_back(format_double(x));
  return arr;
}

inline double decode_double(const jsonu::json& j, std::string_view ctx) {
  if (!j.is_string()) throw DecodeError(std::string(ctx) + ": expected a decimal string");
  return parse_double(j.get<std::string>());
}

inline std::vector<double> decode_doubles(const jsonu::json& j, std::string_view ctx,
                                          std::size_t expected) {
  if (!j.is_array()) throw DecodeError(std::string(ctx) + ": expected an array");
  if (j.size() != expected)
    throw DecodeError(std::string(ctx) + ": expected " + std::to_string(expected) +
                      " values, got " + std::to_string(j.size()));
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) out.push_back(decode_double(v, ctx));
  return out;
}

}  // namespace detail

inline std::string encode_model(const ClassifierModel& m) {
  jsonu::ordered_json j;
  j["schema_version"] = kModelSchemaVersion;
  j["kind"] = to_string(m.kind);
  j["event_set"]["profile"] = to_string(m.event_set.profile);
  j["event_set"]["events"] = jsonu::ordered_json::array();
  for (const auto& e : m.event_set.events) j["event_set"]["events"].push_back(to_string(e.id));
  j["norm"]["mean"] = detail::encode_doubles(m.norm.mean);
  j["norm"]["stddev"] = detail::encode_doubles(m.norm.stddev);
  j["threshold"] = format_double(m.threshold);
  auto& params = j["params"];
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, LdaParams>) {
          params["mean0"] = detail::encode_doubles(p.mean0);
          params["mean1"] = detail::encode_doubles(p.mean1);
          params["covariance"] = detail::encode_doubles(p.covariance);
          params["prior1"] = format_double(p.prior1);
          params["weights"] = detail::encode_doubles(p.weights);
          params["bias"] = format_double(p.bias);
        } else if constexpr (std::is_same_v<P, LinearParams>) {
          params["weights"] = detail::encode_doubles(p.weights);
          params["bias"] = format_double(p.bias);
        } else {
          params["window"] = p.window;
          params["filters"] = p.filters;
          params["kernel"] = p.kernel;
          params["leaky_slope"] = format_double(p.leaky_slope);
          params["conv_weights"] = detail::encode_doubles(p.conv_weights);
          params["conv_bias"] = detail::encode_doubles(p.conv_bias);
          params["dense_weights"] = detail::encode_doubles(p.dense_weights);
          params["dense_bias"] = format_double(p.dense_bias);
        }
      },
      m.params);
  return j.dump(1) + "\n";
}

inline ClassifierModel decode_model(const std::string& text) {
  const auto j = jsonu::parse(text, "model");
  jsonu::expect_exact_fields(j, {"schema_version", "kind", "event_set", "norm", "threshold", "params"},
                             "model");
  const auto& version = j.at("schema_version");
  if (!version.is_number_integer() || version.get<int>() != kModelSchemaVersion)
    throw DecodeError("model: unsupported schema_version " + version.dump());

  ClassifierModel m;
  auto kind = parse_model_kind(jsonu::get_as<std::string>(j, "kind", "model"));
  if (!kind) throw DecodeError("model: unknown kind");
  m.kind = *kind;

  const auto& es = j.at("event_set");
  jsonu::expect_exact_fields(es, {"profile", "events"}, "model event_set");
  auto profile = parse_profile(jsonu::get_as<std::string>(es, "profile", "model event_set"));
  if (!profile) throw DecodeError("model: unknown profile");
  m.event_set.profile = *profile;
  for (const auto& e : jsonu::get_as<std::vector<std::string>>(es, "events", "model event_set")) {
    auto id = parse_event_id(e);
    if (!id) throw DecodeError("model: unknown event " + e);
    m.event_set.events.push_back(describe(*id));
  }
  const std::size_t d = m.event_set.size();
  if (d == 0) throw DecodeError("model: empty event set");

  const auto& norm = j.at("norm");
  jsonu::expect_exact_fields(norm, {"mean", "stddev"}, "model norm");
  m.norm.mean = detail::decode_doubles(norm.at("mean"), "model norm.mean", d);
  m.norm.stddev = detail::decode_doubles(norm.at("stddev"), "model norm.stddev", d);
  m.threshold = detail::decode_double(j.at("threshold"), "model threshold");

  const auto& p = j.at("params");
  switch (m.kind) {
    case ModelKind::LDA: {
      jsonu::expect_exact_fields(p, {"mean0", "mean1", "covariance", "prior1", "weights", "bias"},
                                 "model params");
      LdaParams lda;
      lda.mean0 = detail::decode_doubles(p.at("mean0"), "params.mean0", d);
      lda.mean1 = detail::decode_doubles(p.at("mean1"), "params.mean1", d);
      lda.covariance = detail::decode_doubles(p.at("covariance"), "params.covariance", d * d);
      lda.prior1 = detail::decode_double(p.at("prior1"), "params.prior1");
      lda.weights = detail::decode_doubles(p.at("weights"), "params.weights", d);
      lda.bias = detail::decode_double(p.at("bias"), "params.bias");
      m.params = std::move(lda);
      break;
    }
    case ModelKind::LR:
    case ModelKind::SVM: {
      jsonu::expect_exact_fields(p, {"weights", "bias"}, "model params");
      LinearParams lin;
      lin.weights = detail::decode_doubles(p.at("weights"), "params.weights", d);
      lin.bias = detail::decode_double(p.at("bias"), "params.bias");
      m.params = std::move(lin);
      break;
    }
    case ModelKind::CNN: {
      jsonu::expect_exact_fields(p,
                                 {"window", "filters", "kernel", "leaky_slope", "conv_weights",
                                  "conv_bias", "dense_weights", "dense_bias"},
                                 "model params");
      CnnParams cnn;
      cnn.window = jsonu::get_as<int>(p, "window", "params");
      cnn.filters = jsonu::get_as<int>(p, "filters", "params");
      cnn.kernel = jsonu::get_as<int>(p, "kernel", "params");
      if (cnn.kernel < 1 || cnn.filters < 1 || cnn.window < cnn.kernel)
        throw DecodeError("model: invalid CNN shape");
      const auto nf = static_cast<std::size_t>(cnn.filters);
      cnn.leaky_slope = detail::decode_double(p.at("leaky_slope"), "params.leaky_slope");
      cnn.conv_weights = detail::decode_doubles(p.at("conv_weights"), "params.conv_weights",
                                                nf * static_cast<std::size_t>(cnn.kernel) * d);
      cnn.conv_bias = detail::decode_doubles(p.at("conv_bias"), "params.conv_bias", nf);
      cnn.dense_weights = detail::decode_doubles(p.at("dense_weights"), "params.dense_weights", nf);
      cnn.dense_bias = detail::decode_double(p.at("dense_bias"), "params.dense_bias");
      m.params = std::move(cnn);
      break;
    }
  }
  return m;
}

inline void save_model(const ClassifierModel& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << encode_model(m);
  if (!os) throw Error("failed writing '" + path + "'");
}

inline ClassifierModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DecodeError("cannot open model '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_model(text);
}

}  // namespace hpcs

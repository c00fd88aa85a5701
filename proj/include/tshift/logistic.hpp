#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "tshift/panel.hpp"

namespace tshift {

/// One training row: sparse features, binary label, sample weight.
struct TrainRow {
  const FeatureVec* x = nullptr;
  std::uint8_t y = 0;
  double w = 1.0;
};

/// Fitted linear model. weights has one entry per vocabulary feature; the
/// intercept is unpenalized.
struct LogisticModel {
  std::vector<double> weights;
  double intercept = 0.0;
  double lambda = 0.0;
  bool converged = false;
  double grad_norm = 0.0;
  int iterations = 0;
};

inline double linear_score(const LogisticModel& m, const FeatureVec& x) {
  double s = m.intercept;
  for (const auto& [idx, value] : x)
    if (idx < m.weights.size()) s += m.weights[idx] * value;
  return s;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + e^m), overflow-safe.
inline double softplus(double m) { return std::max(m, 0.0) + std::log1p(std::exp(-std::abs(m))); }

/// Per-class weights n / (2 n_c), the usual balanced scheme.
inline std::pair<double, double> balanced_class_weights(std::span<const TrainRow> rows) {
  double n0 = 0, n1 = 0;
  for (const auto& r : rows) (r.y ? n1 : n0) += 1;
  const double n = n0 + n1;
  return {n / (2.0 * n0), n / (2.0 * n1)};
}

namespace detail {

struct Objective {
  std::span<const TrainRow> rows;
  std::size_t dim;
  double lambda;       // L2 strength on weights (not intercept)
  double total_weight;

  // theta layout: [w_0..w_{dim-1}, intercept]
  double value_and_grad(std::span<const double> theta, std::span<double> grad) const {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (const auto& r : rows) {
      double m = theta[dim];
      for (const auto& [idx, v] : *r.x) m += theta[idx] * v;
      loss += r.w * (softplus(m) - (r.y ? m : 0.0));
      const double resid = r.w * (sigmoid(m) - (r.y ? 1.0 : 0.0));
      grad[dim] += resid;
      for (const auto& [idx, v] : *r.x) grad[idx] += resid * v;
    }
    loss /= total_weight;
    double penalty = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      grad[j] = grad[j] / total_weight + lambda * theta[j];
      penalty += theta[j] * theta[j];
    }
    grad[dim] /= total_weight;
    return loss + 0.5 * lambda * penalty;
  }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace detail

/// Class-weighted logistic regression with L2 penalty, minimized by L-BFGS
/// with Armijo backtracking. Full-batch and deterministic: same data order in,
/// same parameters out. Stops at gradient norm <= tol or after max_iter
/// iterations, in which case the best iterate is returned with converged
/// false.
inline LogisticModel fit_logistic_l2(std::span<const TrainRow> rows, std::size_t dim,
                                     double lambda, int max_iter = 1000, double tol = 1e-4) {
  double total_w = 0.0;
  for (const auto& r : rows) total_w += r.w;
  detail::Objective obj{rows, dim, lambda, total_w};

  const std::size_t n = dim + 1;
  std::vector<double> theta(n, 0.0), grad(n), new_theta(n), new_grad(n), direction(n);
  double f = obj.value_and_grad(theta, grad);

  constexpr std::size_t kHistory = 10;
  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;

  LogisticModel model;
  int iter = 0;
  for (; iter < max_iter; ++iter) {
    const double gnorm = detail::norm2(grad);
    if (gnorm <= tol) {
      model.converged = true;
      break;
    }

    // Two-loop recursion.
    direction = grad;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      alpha[k] = rho_hist[k] * detail::dot(s_hist[k], direction);
      for (std::size_t i = 0; i < n; ++i) direction[i] -= alpha[k] * y_hist[k][i];
    }
    if (!s_hist.empty()) {
      const double gamma = detail::dot(s_hist.back(), y_hist.back()) /
                           detail::dot(y_hist.back(), y_hist.back());
      for (auto& d : direction) d *= gamma;
    }
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * detail::dot(y_hist[k], direction);
      for (std::size_t i = 0; i < n; ++i) direction[i] += s_hist[k][i] * (alpha[k] - beta);
    }
    for (auto& d : direction) d = -d;

    double dir_deriv = detail::dot(grad, direction);
    if (dir_deriv >= 0) {  // not a descent direction; fall back to steepest
      for (std::size_t i = 0; i < n; ++i) direction[i] = -grad[i];
      dir_deriv = -detail::dot(grad, grad);
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    // Armijo backtracking.
    double step = s_hist.empty() ? 1.0 / std::max(1.0, gnorm) : 1.0;
    double new_f = f;
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls) {
      for (std::size_t i = 0; i < n; ++i) new_theta[i] = theta[i] + step * direction[i];
      new_f = obj.value_and_grad(new_theta, new_grad);
      if (new_f <= f + 1e-4 * step * dir_deriv) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // line search stalled near the optimum

    if (s_hist.size() == kHistory) {
      s_hist.pop_front();
      y_hist.pop_front();
      rho_hist.pop_front();
    }
    std::vector<double> s_vec(n), y_vec(n);
    for (std::size_t i = 0; i < n; ++i) {
      s_vec[i] = new_theta[i] - theta[i];
      y_vec[i] = new_grad[i] - grad[i];
    }
    const double sy = detail::dot(s_vec, y_vec);
    if (sy > 1e-12) {
      rho_hist.push_back(1.0 / sy);
      s_hist.push_back(std::move(s_vec));
      y_hist.push_back(std::move(y_vec));
    }
    theta.swap(new_theta);
    grad.swap(new_grad);
    f = new_f;
  }

  model.weights.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(dim));
  model.intercept = theta[dim];
  model.lambda = lambda;
  model.grad_norm = detail::norm2(grad);
  model.iterations = iter;
  if (model.grad_norm <= tol) model.converged = true;
  return model;
}

/// Weighted objective value at given parameters; exposes the quantity the
/// solver minimizes so callers can check optimizer sanity.
inline double weighted_objective(std::span<const TrainRow> rows, const LogisticModel& m,
                                 double lambda) {
  double total_w = 0.0, loss = 0.0;
  for (const auto& r : rows) {
    const double z = linear_score(m, *r.x);
    loss += r.w * (softplus(z) - (r.y ? z : 0.0));
    total_w += r.w;
  }
  double penalty = 0.0;
  for (double w : m.weights) penalty += w * w;
  return loss / total_w + 0.5 * lambda * penalty;
}

/// L1-penalized logistic regression by FISTA with backtracking; intercept
/// unpenalized, no class weights (used for period classifiers where the two
/// classes have comparable size).
inline LogisticModel fit_logistic_l1(std::span<const TrainRow> rows, std::size_t dim,
                                     double lambda, int max_iter = 1000, double tol = 1e-7) {
  double total_w = 0.0;
  for (const auto& r : rows) total_w += r.w;
  detail::Objective smooth{rows, dim, 0.0, total_w};

  const std::size_t n = dim + 1;
  std::vector<double> theta(n, 0.0), momentum(n, 0.0), grad(n), candidate(n), dummy(n);
  double t_prev = 1.0;
  double lipschitz = 0.25;  // grows by backtracking

  auto prox_step = [&](const std::vector<double>& point, double f_point,
                       std::vector<double>& out) {
    for (;;) {
      const double eta = 1.0 / lipschitz;
      for (std::size_t j = 0; j < dim; ++j) {
        const double v = point[j] - eta * grad[j];
        const double shrink = eta * lambda;
        out[j] = v > shrink ? v - shrink : (v < -shrink ? v + shrink : 0.0);
      }
      out[dim] = point[dim] - eta * grad[dim];
      // Quadratic upper bound check for the smooth part.
      const double f_new = smooth.value_and_grad(out, dummy);
      double quad = f_point;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = out[i] - point[i];
        quad += grad[i] * d + 0.5 * lipschitz * d * d;
      }
      if (f_new <= quad + 1e-12) return;
      lipschitz *= 2.0;
    }
  };

  LogisticModel model;
  int iter = 0;
  for (; iter < max_iter; ++iter) {
    const double f_mom = smooth.value_and_grad(momentum, grad);
    prox_step(momentum, f_mom, candidate);

    double max_change = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      max_change = std::max(max_change, std::abs(candidate[i] - theta[i]));

    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_prev * t_prev));
    for (std::size_t i = 0; i < n; ++i)
      momentum[i] = candidate[i] + ((t_prev - 1.0) / t_next) * (candidate[i] - theta[i]);
    theta = candidate;
    t_prev = t_next;

    if (max_change <= tol) {
      model.converged = true;
      ++iter;
      break;
    }
  }

  model.weights.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(dim));
  model.intercept = theta[dim];
  model.lambda = lambda;
  model.iterations = iter;
  return model;
}

}  // namespace tshift

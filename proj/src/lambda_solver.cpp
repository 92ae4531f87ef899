#include "topkfair/lambda_solver.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "topkfair/errors.hpp"

namespace topkfair {

void SmoothingParams::validate() const {
  if (!(tau1 > 0.0)) throw ConfigError("tau1 must be positive");
  if (!(tau2 > 0.0)) throw ConfigError("tau2 must be positive");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in (0, 1)");
  if (K == 0) throw ConfigError("K must be at least 1");
}

double exact_lambda(std::span<const double> scores, std::size_t K) {
  if (K + 1 > scores.size()) {
    throw ConfigError("K + 1 = " + std::to_string(K + 1) + " exceeds list size " +
                      std::to_string(scores.size()));
  }
  std::vector<double> work(scores.begin(), scores.end());
  auto nth = work.begin() + static_cast<std::ptrdiff_t>(K);
  std::nth_element(work.begin(), nth, work.end(), std::greater<>());
  return *nth;
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double population_or(std::size_t population, std::size_t fallback) {
  return static_cast<double>(population == 0 ? fallback : population);
}

// Order statistic of a (possibly sub-sampled) list with K rescaled to its size.
double scaled_order_statistic(std::span<const double> scores, std::size_t K,
                              std::size_t population) {
  const double n = population_or(population, scores.size());
  const double scaled = static_cast<double>(K) * static_cast<double>(scores.size()) / n;
  const auto k = std::min(static_cast<std::size_t>(std::lround(scaled)), scores.size() - 1);
  return exact_lambda(scores, k);
}

}  // namespace

double smoothed_objective(double lambda, std::span<const double> scores,
                          const SmoothingParams& p, std::size_t population) {
  const double n = population_or(population, scores.size());
  double sum = 0.0;
  for (double h : scores) sum += p.tau1 * softplus((h - lambda) / p.tau1);
  const double avg = scores.empty() ? 0.0 : sum / static_cast<double>(scores.size());
  return (static_cast<double>(p.K) + p.epsilon) / n * lambda + 0.5 * p.tau2 * lambda * lambda +
         avg;
}

double smoothed_grad(double lambda, std::span<const double> scores, const SmoothingParams& p,
                     std::size_t population) {
  const double n = population_or(population, scores.size());
  double sum = 0.0;
  for (double h : scores) sum += logistic((h - lambda) / p.tau1);
  const double avg = scores.empty() ? 0.0 : sum / static_cast<double>(scores.size());
  return (static_cast<double>(p.K) + p.epsilon) / n + p.tau2 * lambda - avg;
}

double smoothed_hess(double lambda, std::span<const double> scores, const SmoothingParams& p) {
  double sum = 0.0;
  for (double h : scores) {
    const double s = logistic((h - lambda) / p.tau1);
    sum += s * (1.0 - s);
  }
  const double avg = scores.empty() ? 0.0 : sum / static_cast<double>(scores.size());
  return p.tau2 + avg / p.tau1;
}

void add_cross_grad(double lambda, const ScoringModel& m, std::size_t query,
                    std::span<const std::uint32_t> items, const SmoothingParams& p,
                    double scale, std::span<double> grad) {
  if (items.empty()) return;
  const double c = -scale / (static_cast<double>(items.size()) * p.tau1);
  for (auto item : items) {
    const double s = logistic((m.score(query, item) - lambda) / p.tau1);
    const double w = s * (1.0 - s);
    if (w != 0.0) m.add_score_gradient(query, item, c * w, grad);
  }
}

Vector cross_grad(double lambda, const ScoringModel& m, std::size_t query,
                  std::span<const std::uint32_t> items, const SmoothingParams& p) {
  Vector g(m.num_params(), 0.0);
  add_cross_grad(lambda, m, query, items, p, 1.0, g);
  return g;
}

double solve_lambda(std::span<const double> scores, const SmoothingParams& p, double tol,
                    std::size_t population) {
  if (!(tol > 0.0)) throw ConfigError("solver tolerance must be positive");
  if (scores.empty()) throw ConfigError("cannot solve for a threshold over an empty list");
  const double n = population_or(population, scores.size());
  const auto [mn, mx] = std::minmax_element(scores.begin(), scores.end());
  double lo = *mn - 1.0;
  double hi = *mx + 1.0;
  if (p.tau2 > 0.0) hi += (static_cast<double>(p.K) + p.epsilon) / (p.tau2 * n);
  auto grad = [&](double l) { return smoothed_grad(l, scores, p, population); };

  // The bracket above is valid for the usual parameter ranges; widen it for
  // the rest (large tau1, tiny tau2 with very negative scores).
  double width = std::max(1.0, hi - lo);
  for (int i = 0; grad(lo) > 0.0; ++i) {
    if (i > 200) throw NumericError("threshold solver could not bracket the root from below");
    lo -= width;
    width *= 2.0;
  }
  width = std::max(1.0, hi - lo);
  for (int i = 0; grad(hi) < 0.0; ++i) {
    if (i > 200) throw NumericError("threshold solver could not bracket the root from above");
    hi += width;
    width *= 2.0;
  }

  double x = std::clamp(scaled_order_statistic(scores, p.K, population), lo, hi);
  for (int iter = 0; iter < 500; ++iter) {
    const double g = grad(x);
    if (std::abs(g) <= tol) return x;
    if (g < 0.0) lo = x; else hi = x;
    const double h = smoothed_hess(x, scores, p);
    double next = x - g / h;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == x || hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(x))) {
      return next;
    }
    x = next;
  }
  throw NumericError("threshold solver did not converge");
}

Vector implicit_lambda_gradient(const ScoringModel& m, std::size_t query,
                                std::span<const std::uint32_t> items, const SmoothingParams& p,
                                double tol) {
  std::vector<double> scores(items.size());
  for (std::size_t j = 0; j < items.size(); ++j) scores[j] = m.score(query, items[j]);
  const double lambda = solve_lambda(scores, p, tol);
  Vector g(m.num_params(), 0.0);
  add_cross_grad(lambda, m, query, items, p, -1.0 / smoothed_hess(lambda, scores, p), g);
  return g;
}

LambdaState initial_lambda_state(std::span<const double> batch_scores, std::size_t population,
                                 const SmoothingParams& p) {
  LambdaState st;
  st.lambda = batch_scores.empty() ? 0.0 : scaled_order_statistic(batch_scores, p.K, population);
  st.s = p.tau2 + 0.25 / p.tau1;
  st.v = 0.0;
  st.initialized = true;
  return st;
}

void state_step(LambdaState& st, std::span<const double> batch_scores, std::size_t population,
                const SmoothingParams& p, double gamma4, double eta0) {
  if (!st.initialized) throw StateError("lambda state used before initialization");
  const double hess = smoothed_hess(st.lambda, batch_scores, p);
  const double grad = smoothed_grad(st.lambda, batch_scores, p, population);
  st.s = (1.0 - gamma4) * st.s + gamma4 * hess;
  st.v = (1.0 - gamma4) * st.v + gamma4 * grad;
  st.lambda -= eta0 * st.v;
}

void state_step(LambdaState& st, const ScoringModel& m, std::size_t query,
                std::span<const std::uint32_t> items, std::size_t population,
                const SmoothingParams& p, double gamma4, double eta0) {
  std::vector<double> scores(items.size());
  for (std::size_t j = 0; j < items.size(); ++j) scores[j] = m.score(query, items[j]);
  state_step(st, scores, population, p, gamma4, eta0);
}

}  // namespace topkfair

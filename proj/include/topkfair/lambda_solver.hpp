#pragma once

#include <cstddef>
#include <span>

#include "topkfair/data.hpp"
#include "topkfair/model.hpp"

namespace topkfair {

/// Parameters of the smoothed threshold problem
///   G(l) = (K + eps)/N l + tau2/2 l^2 + (1/|B|) sum_i tau1 softplus((h_i - l)/tau1).
struct SmoothingParams {
  double tau1 = 1e-2;
  double tau2 = 1e-4;
  double epsilon = 0.5;
  std::size_t K = 50;

  void validate() const;
};

/// The (K+1)-th largest score, duplicates counted with multiplicity.
double exact_lambda(std::span<const double> scores, std::size_t K);

/// Logistic sigma(x) = 1 / (1 + exp(-x)), evaluated without overflow.
double logistic(double x);

/// `population` is the true list size N_q; the softplus average runs over
/// `scores`, which may be a mini-batch of that list. population == 0 means
/// scores.size().
double smoothed_objective(double lambda, std::span<const double> scores,
                          const SmoothingParams& p, std::size_t population = 0);
double smoothed_grad(double lambda, std::span<const double> scores, const SmoothingParams& p,
                     std::size_t population = 0);
double smoothed_hess(double lambda, std::span<const double> scores, const SmoothingParams& p);

/// d^2 G / (d lambda d w) over the batch `items` of query row `query`.
Vector cross_grad(double lambda, const ScoringModel& m, std::size_t query,
                  std::span<const std::uint32_t> items, const SmoothingParams& p);
/// grad += scale * cross_grad(...), without allocating.
void add_cross_grad(double lambda, const ScoringModel& m, std::size_t query,
                    std::span<const std::uint32_t> items, const SmoothingParams& p,
                    double scale, std::span<double> grad);

/// argmin of G via Newton steps safeguarded by bisection.
double solve_lambda(std::span<const double> scores, const SmoothingParams& p, double tol,
                    std::size_t population = 0);

/// d lambda_hat / d w = -cross_grad / hess at the smoothed minimizer.
Vector implicit_lambda_gradient(const ScoringModel& m, std::size_t query,
                                std::span<const std::uint32_t> items, const SmoothingParams& p,
                                double tol);

/// Online per-query threshold tracker.
struct LambdaState {
  double lambda = 0.0;
  /// Moving average of d^2 G / d lambda^2; stays >= tau2.
  double s = 0.0;
  /// Moving average of d G / d lambda.
  double v = 0.0;
  bool initialized = false;
};

/// Warm start: lambda from the batch order statistic (K scaled to the batch
/// size), s = tau2 + 1/(4 tau1), v = 0.
LambdaState initial_lambda_state(std::span<const double> batch_scores, std::size_t population,
                                 const SmoothingParams& p);

/// s <- (1-g4) s + g4 hess;  v <- (1-g4) v + g4 grad;  lambda <- lambda - eta0 v.
/// Derivatives are taken at the incoming lambda over `batch_scores`.
void state_step(LambdaState& st, std::span<const double> batch_scores, std::size_t population,
                const SmoothingParams& p, double gamma4, double eta0);

/// Model-level overload: scores the batch `items` of `query`.
void state_step(LambdaState& st, const ScoringModel& m, std::size_t query,
                std::span<const std::uint32_t> items, std::size_t population,
                const SmoothingParams& p, double gamma4, double eta0);

}  // namespace topkfair

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "topkfair/data.hpp"
#include "topkfair/fairness.hpp"
#include "topkfair/model.hpp"
#include "topkfair/rank_losses.hpp"

namespace topkfair {

/// Central differences (f(w + h e_i) - f(w - h e_i)) / 2h over every
/// coordinate of `params`; `params` is restored afterwards.
Vector numeric_gradient(const std::function<double()>& f, std::span<double> params,
                        double step = 1e-5);

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
double relative_error(std::span<const double> a, std::span<const double> b);
double relative_error(double a, double b);

/// Full-batch G1 with gamma0 = 1 against differences of L(w).
double g1_fd_error(FactorizationScorer& m, const Dataset& d, const RankLoss& loss);

/// Full-batch G2 (gamma1..3 = 1, lambda at its smoothed minimizer solved to
/// `tol`, s at the exact curvature) against differences of U(w) with inner
/// re-solves.
double g2_fd_error(FactorizationScorer& m, const Dataset& d, const FairnessParams& fp,
                   double tol = 1e-10);

struct SuiteResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t cases = 0;
};

/// The three suites behind `grad-check`: rank_losses, fairness,
/// lambda_solver. Small random instances drawn from `seed`.
std::vector<SuiteResult> run_grad_checks(std::uint64_t seed);

}  // namespace topkfair

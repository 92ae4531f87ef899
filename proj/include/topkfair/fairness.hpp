#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "topkfair/data.hpp"
#include "topkfair/lambda_solver.hpp"
#include "topkfair/model.hpp"

namespace topkfair {

enum class FairnessMode { none, full_list, top_k };
enum class G2Mode { simplified, full_implicit };

/// psi(x) = 1 / (1 + exp(-x / temperature)). `constant_one` replaces psi by
/// 1 (and psi' by 0), which turns the top-K surrogate into the full-list
/// disparity.
struct SmoothIndicator {
  double temperature = 0.1;
  bool constant_one = false;

  double value(double x) const;
  double derivative(double x) const;
};

/// Softmax of `scores` with max subtraction.
std::vector<double> exposures(std::span<const double> scores);

/// Positions sorted by score descending, ties by `ids` ascending.
std::vector<std::size_t> ranking_order(std::span<const double> scores,
                                       std::span<const std::uint32_t> ids);

/// 1/2 (mean_A exposure - mean_B exposure)^2; nullopt when a group is empty.
std::optional<double> full_list_disparity(std::span<const double> scores,
                                          std::span<const Group> groups);
std::optional<double> full_list_disparity(const ScoringModel& m, const QueryGroup& q);

/// Signed gap mean_A[1(top-K) exposure] - mean_B[1(top-K) exposure], where
/// exposures are over the whole list and top-K uses ranking_order.
/// nullopt when a group is empty. Requires 1 <= K < scores.size().
std::optional<double> topk_disparity_exact(std::span<const double> scores,
                                           std::span<const Group> groups,
                                           std::span<const std::uint32_t> ids, std::size_t K);
std::optional<double> topk_disparity_exact(const ScoringModel& m, const QueryGroup& q,
                                           std::size_t K);

/// f(g_a, g_b, g) = 1/2 ((g_a - g_b) / (n g))^2 with
/// g_x = mean over group x of psi(h - lambda) exp(h - shift) and
/// g = mean over the list of exp(h - shift).
std::optional<double> topk_disparity_surrogate(std::span<const double> scores,
                                               std::span<const Group> groups, double lambda,
                                               const SmoothIndicator& psi);
std::optional<double> topk_disparity_surrogate(const ScoringModel& m, const QueryGroup& q,
                                               double lambda, const SmoothIndicator& psi);

/// Moving averages of the (shifted) inner quantities of one query.
struct QueryFairnessState {
  double u_a = 0.0;
  double u_b = 0.0;
  double u_g = 0.0;
  /// Reference shift applied to every exp(h); fixed at first touch.
  double shift = 0.0;
  bool initialized = false;
};

struct FairnessParams {
  FairnessMode mode = FairnessMode::top_k;
  G2Mode g2_mode = G2Mode::simplified;
  SmoothIndicator psi;
  SmoothingParams smoothing;
  double gamma1 = 0.2;
  double gamma2 = 0.2;
  double gamma3 = 0.2;

  void validate() const;
};

/// Whether the fairness term is defined for query `q` under `fp`: both groups
/// nonempty and, in top-K mode, more than K items.
bool fairness_applies(const QueryGroup& q, const FairnessParams& fp);

/// G2: for every query of the batch updates (u_a, u_b, u_g) and returns
/// (1/|B_Q|) sum_q [d1 f grad ghat_a + d2 f grad ghat_b + d3 f grad ghat_q].
/// In top-K mode `lambdas[q]` must be initialized for every applicable query;
/// its lambda and s (for the implicit gradient) are read, not updated.
/// `states` and `lambdas` are indexed by query position in `d`.
/// Reports the mean of f over B_Q through `objective_estimate` when non-null.
Vector g2_estimate(const ScoringModel& m, const Dataset& d, const BatchSample& batch,
                   const FairnessParams& fp, std::vector<QueryFairnessState>& states,
                   const std::vector<LambdaState>& lambdas,
                   double* objective_estimate = nullptr);

/// U(w) = (1/N) sum_q U_q with lambda re-solved to `tol` per query (top-K)
/// or the full-list disparity. Queries without a defined term contribute 0.
double fairness_objective(const ScoringModel& m, const Dataset& d, const FairnessParams& fp,
                          double tol = 1e-10);

}  // namespace topkfair

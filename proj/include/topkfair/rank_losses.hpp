#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "topkfair/data.hpp"
#include "topkfair/model.hpp"

namespace topkfair {

enum class RankLossKind { ndcg, listnet };

struct RankLoss {
  RankLossKind kind = RankLossKind::ndcg;
  /// Squared-hinge margin c; only used by the NDCG surrogate.
  double margin = 1.0;

  void validate() const;
};

/// Number of entries with score >= scores[i] (includes i itself).
std::size_t exact_rank(std::span<const double> scores, std::size_t i);

/// (x + c)_+^2 and its derivative.
double squared_hinge(double x, double c);
double squared_hinge_derivative(double x, double c);

/// sum_j (s_j - s_i + c)_+^2 over all entries, self term included.
double surrogate_rank_hinge(std::span<const double> scores, std::size_t i, double c);
/// sum_j exp(s_j - s_i), self term included.
double surrogate_rank_exp(std::span<const double> scores, std::size_t i);

double surrogate_rank_hinge(const ScoringModel& m, std::size_t query,
                            std::span<const std::uint32_t> items, std::size_t i, double c);
Vector surrogate_rank_hinge_gradient(const ScoringModel& m, std::size_t query,
                                     std::span<const std::uint32_t> items, std::size_t i,
                                     double c);
double surrogate_rank_exp(const ScoringModel& m, std::size_t query,
                          std::span<const std::uint32_t> items, std::size_t i);
Vector surrogate_rank_exp_gradient(const ScoringModel& m, std::size_t query,
                                   std::span<const std::uint32_t> items, std::size_t i);

/// Ideal DCG of a label multiset: labels sorted descending, gain 2^y - 1,
/// discount log2(1 + rank).
double ideal_dcg(std::span<const double> labels);
double ideal_dcg(std::span<const double> labels, std::size_t k);

struct LossValue {
  double value = 0.0;
  /// No positive gain in the query; the loss is defined as 0.
  bool degenerate = false;
};

/// -(1/Z) sum_i (2^y_i - 1) / log2(1 + gbar_i) with the squared-hinge rank.
LossValue ndcg_loss(std::span<const double> scores, std::span<const double> labels, double c);
/// d ndcg_loss / d scores.
Vector ndcg_loss_score_gradient(std::span<const double> scores,
                                std::span<const double> labels, double c);

/// sum_i softmax(labels)_i * log ghat_i.
double listnet_loss(std::span<const double> scores, std::span<const double> labels);
Vector listnet_loss_score_gradient(std::span<const double> scores,
                                   std::span<const double> labels);

std::vector<double> query_scores(const ScoringModel& m, const QueryGroup& q);
std::vector<double> query_scores(const ScoringModel& m, std::size_t query,
                                 std::span<const std::uint32_t> items);

LossValue query_loss(const ScoringModel& m, const QueryGroup& q, const RankLoss& loss);
/// Adds scale * d L_q / d w to `grad` via the exact score-space gradient.
void add_query_loss_gradient(const ScoringModel& m, const QueryGroup& q,
                             const RankLoss& loss, double scale, std::span<double> grad);

/// L(w) = (1/|S|) sum_q L_q(w).
double mean_rank_loss(const ScoringModel& m, const Dataset& d, const RankLoss& loss);
Vector mean_rank_loss_gradient(const ScoringModel& m, const Dataset& d, const RankLoss& loss);

/// Moving averages u_{q,i} of the inner rank estimate, one slot per pair of
/// the dataset it was built for.
class PairEstimatorTable {
 public:
  explicit PairEstimatorTable(std::size_t total_pairs = 0)
      : values_(total_pairs, 0.0), touched_(total_pairs, false) {}

  std::size_t size() const { return values_.size(); }
  bool touched(std::size_t pair) const { return touched_[pair]; }
  double value(std::size_t pair) const { return values_[pair]; }
  /// u <- gamma * estimate + (1 - gamma) * u; first touch stores the estimate.
  double update(std::size_t pair, double estimate, double gamma);

 private:
  std::vector<double> values_;
  std::vector<bool> touched_;
};

/// Outer derivative f'_{q,i}(g) of the compositional decomposition, with g
/// floored at the self-term value (c^2 / N_q for NDCG, 1 / N_q for ListNet).
double outer_derivative(const RankLoss& loss, double g, double label, double ideal,
                        double listnet_weight, std::size_t list_size);

/// G1: updates u_{q,i} for every pair of the batch, then returns
/// (1/|B|) sum f'(u_{q,i}) grad ghat_{q,i}. Also reports the mean of
/// f(u_{q,i}) over the batch through `loss_estimate` when non-null.
Vector g1_estimate(const ScoringModel& m, const Dataset& d, const BatchSample& batch,
                   const RankLoss& loss, PairEstimatorTable& table, double gamma0,
                   double* loss_estimate = nullptr);

}  // namespace topkfair

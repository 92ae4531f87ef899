#include "topkfair/rank_losses.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include "topkfair/errors.hpp"

namespace topkfair {

void RankLoss::validate() const {
  if (kind == RankLossKind::ndcg && !(margin > 0.0)) {
    throw ConfigError("hinge margin must be positive");
  }
}

std::size_t exact_rank(std::span<const double> scores, std::size_t i) {
  std::size_t r = 0;
  for (double s : scores) r += (s - scores[i] >= 0.0) ? 1 : 0;
  return r;
}

double squared_hinge(double x, double c) {
  const double t = x + c;
  // NaN passes through so the optimizer can report it.
  return t > 0.0 || std::isnan(t) ? t * t : 0.0;
}

double squared_hinge_derivative(double x, double c) {
  const double t = x + c;
  return t > 0.0 || std::isnan(t) ? 2.0 * t : 0.0;
}

double surrogate_rank_hinge(std::span<const double> scores, std::size_t i, double c) {
  double sum = 0.0;
  for (double s : scores) sum += squared_hinge(s - scores[i], c);
  return sum;
}

double surrogate_rank_exp(std::span<const double> scores, std::size_t i) {
  double sum = 0.0;
  for (double s : scores) sum += std::exp(s - scores[i]);
  return sum;
}

std::vector<double> query_scores(const ScoringModel& m, std::size_t query,
                                 std::span<const std::uint32_t> items) {
  std::vector<double> out(items.size());
  for (std::size_t j = 0; j < items.size(); ++j) out[j] = m.score(query, items[j]);
  return out;
}

std::vector<double> query_scores(const ScoringModel& m, const QueryGroup& q) {
  std::vector<double> out(q.size());
  for (std::size_t j = 0; j < q.size(); ++j) out[j] = m.score(q.index, q.items[j].feature);
  return out;
}

namespace {

// Gradient of sum_j l(h_j - h_i) given the pairwise derivative l'.
Vector pairwise_rank_gradient(const ScoringModel& m, std::size_t query,
                              std::span<const std::uint32_t> items, std::size_t i,
                              const std::function<double(double)>& dl) {
  const auto scores = query_scores(m, query, items);
  Vector g(m.num_params(), 0.0);
  double self = 0.0;
  for (std::size_t j = 0; j < items.size(); ++j) {
    if (j == i) continue;
    const double d = dl(scores[j] - scores[i]);
    if (d == 0.0) continue;
    m.add_score_gradient(query, items[j], d, g);
    self += d;
  }
  m.add_score_gradient(query, items[i], -self, g);
  return g;
}

double log2_1p(double x) { return std::log1p(x) / std::numbers::ln2; }

}  // namespace

double surrogate_rank_hinge(const ScoringModel& m, std::size_t query,
                            std::span<const std::uint32_t> items, std::size_t i, double c) {
  return surrogate_rank_hinge(query_scores(m, query, items), i, c);
}

Vector surrogate_rank_hinge_gradient(const ScoringModel& m, std::size_t query,
                                     std::span<const std::uint32_t> items, std::size_t i,
                                     double c) {
  return pairwise_rank_gradient(m, query, items, i,
                                [c](double x) { return squared_hinge_derivative(x, c); });
}

double surrogate_rank_exp(const ScoringModel& m, std::size_t query,
                          std::span<const std::uint32_t> items, std::size_t i) {
  return surrogate_rank_exp(query_scores(m, query, items), i);
}

Vector surrogate_rank_exp_gradient(const ScoringModel& m, std::size_t query,
                                   std::span<const std::uint32_t> items, std::size_t i) {
  return pairwise_rank_gradient(m, query, items, i, [](double x) { return std::exp(x); });
}

double ideal_dcg(std::span<const double> labels, std::size_t k) {
  std::vector<double> sorted(labels.begin(), labels.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double dcg = 0.0;
  const std::size_t n = std::min(k, sorted.size());
  for (std::size_t r = 0; r < n; ++r) {
    dcg += (std::exp2(sorted[r]) - 1.0) / std::log2(2.0 + static_cast<double>(r));
  }
  return dcg;
}

double ideal_dcg(std::span<const double> labels) { return ideal_dcg(labels, labels.size()); }

LossValue ndcg_loss(std::span<const double> scores, std::span<const double> labels, double c) {
  const double z = ideal_dcg(labels);
  if (!(z > 0.0)) return {0.0, true};
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double gain = std::exp2(labels[i]) - 1.0;
    if (gain == 0.0) continue;
    sum += gain / log2_1p(surrogate_rank_hinge(scores, i, c));
  }
  return {-sum / z, false};
}

Vector ndcg_loss_score_gradient(std::span<const double> scores,
                                std::span<const double> labels, double c) {
  const std::size_t n = scores.size();
  Vector g(n, 0.0);
  const double z = ideal_dcg(labels);
  if (!(z > 0.0)) return g;
  for (std::size_t i = 0; i < n; ++i) {
    const double gain = std::exp2(labels[i]) - 1.0;
    if (gain == 0.0) continue;
    const double rank = surrogate_rank_hinge(scores, i, c);
    const double lg = log2_1p(rank);
    // d/d rank of -(gain/z) / log2(1 + rank)
    const double a = gain / (z * lg * lg * (1.0 + rank) * std::numbers::ln2);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = a * squared_hinge_derivative(scores[j] - scores[i], c);
      g[j] += d;
      g[i] -= d;
    }
  }
  return g;
}

namespace {

std::vector<double> softmax(std::span<const double> x) {
  std::vector<double> out(x.size());
  if (x.empty()) return out;
  const double mx = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sum += (out[i] = std::exp(x[i] - mx));
  for (auto& v : out) v /= sum;
  return out;
}

}  // namespace

double listnet_loss(std::span<const double> scores, std::span<const double> labels) {
  const auto p = softmax(labels);
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) sum += p[i] * std::log(surrogate_rank_exp(scores, i));
  return sum;
}

Vector listnet_loss_score_gradient(std::span<const double> scores,
                                   std::span<const double> labels) {
  // sum_i p_i (logsumexp(h) - h_i) differentiates to softmax(h) - p.
  const auto p = softmax(labels);
  auto g = softmax(scores);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] -= p[i];
  return g;
}

LossValue query_loss(const ScoringModel& m, const QueryGroup& q, const RankLoss& loss) {
  const auto scores = query_scores(m, q);
  const auto labels = q.labels();
  if (loss.kind == RankLossKind::ndcg) return ndcg_loss(scores, labels, loss.margin);
  return {listnet_loss(scores, labels), false};
}

void add_query_loss_gradient(const ScoringModel& m, const QueryGroup& q, const RankLoss& loss,
                             double scale, std::span<double> grad) {
  const auto scores = query_scores(m, q);
  const auto labels = q.labels();
  const auto dh = loss.kind == RankLossKind::ndcg
                      ? ndcg_loss_score_gradient(scores, labels, loss.margin)
                      : listnet_loss_score_gradient(scores, labels);
  for (std::size_t j = 0; j < q.size(); ++j) {
    if (dh[j] != 0.0) m.add_score_gradient(q.index, q.items[j].feature, scale * dh[j], grad);
  }
}

double mean_rank_loss(const ScoringModel& m, const Dataset& d, const RankLoss& loss) {
  if (d.total_pairs() == 0) return 0.0;
  double sum = 0.0;
  for (const auto& q : d.queries()) sum += query_loss(m, q, loss).value;
  return sum / static_cast<double>(d.total_pairs());
}

Vector mean_rank_loss_gradient(const ScoringModel& m, const Dataset& d, const RankLoss& loss) {
  Vector g(m.num_params(), 0.0);
  if (d.total_pairs() == 0) return g;
  const double scale = 1.0 / static_cast<double>(d.total_pairs());
  for (const auto& q : d.queries()) add_query_loss_gradient(m, q, loss, scale, g);
  return g;
}

double PairEstimatorTable::update(std::size_t pair, double estimate, double gamma) {
  if (pair >= values_.size()) throw StateError("pair index outside estimator table");
  if (!touched_[pair]) {
    touched_[pair] = true;
    values_[pair] = estimate;
  } else {
    values_[pair] = gamma * estimate + (1.0 - gamma) * values_[pair];
  }
  return values_[pair];
}

double outer_derivative(const RankLoss& loss, double g, double label, double ideal,
                        double listnet_weight, std::size_t list_size) {
  const double n = static_cast<double>(list_size);
  if (loss.kind == RankLossKind::ndcg) {
    if (!(ideal > 0.0)) return 0.0;
    const double gain = std::exp2(label) - 1.0;
    if (gain == 0.0) return 0.0;
    const double x = n * std::max(g, loss.margin * loss.margin / n);
    const double lg = log2_1p(x);
    // f(g) = -(gain/Z) / log2(N g + 1)
    return gain * n / (ideal * (x + 1.0) * std::numbers::ln2 * lg * lg);
  }
  // f(g) = p_i log(N g)
  return listnet_weight / std::max(g, 1.0 / n);
}

namespace {

double outer_value(const RankLoss& loss, double g, double label, double ideal,
                   double listnet_weight, std::size_t list_size) {
  const double n = static_cast<double>(list_size);
  if (loss.kind == RankLossKind::ndcg) {
    if (!(ideal > 0.0)) return 0.0;
    const double gain = std::exp2(label) - 1.0;
    return -gain / (ideal * log2_1p(n * std::max(g, loss.margin * loss.margin / n)));
  }
  return listnet_weight * std::log(n * std::max(g, 1.0 / n));
}

}  // namespace

Vector g1_estimate(const ScoringModel& m, const Dataset& d, const BatchSample& batch,
                   const RankLoss& loss, PairEstimatorTable& table, double gamma0,
                   double* loss_estimate) {
  if (batch.pairs.empty()) throw StateError("G1 needs a non-empty pair batch");
  if (table.size() != d.total_pairs()) {
    throw StateError("pair estimator table was built for a different dataset");
  }
  Vector grad(m.num_params(), 0.0);
  const double inv_batch = 1.0 / static_cast<double>(batch.pairs.size());
  const bool hinge = loss.kind == RankLossKind::ndcg;
  double loss_sum = 0.0;

  std::size_t p = 0;
  while (p < batch.pairs.size()) {
    const std::size_t qpos = batch.pairs[p].query;
    std::size_t end = p;
    while (end < batch.pairs.size() && batch.pairs[end].query == qpos) ++end;

    const auto& qg = d.queries()[qpos];
    const auto sub_it = batch.per_query.find(qpos);
    if (sub_it == batch.per_query.end() || sub_it->second.items.empty()) {
      throw StateError("batch has no B_q for query '" + qg.query_id + "'");
    }
    const auto& sub = sub_it->second.items;
    const double inv_sub = 1.0 / static_cast<double>(sub.size());
    std::vector<double> sub_scores(sub.size());
    for (std::size_t j = 0; j < sub.size(); ++j) {
      sub_scores[j] = m.score(qg.index, qg.items[sub[j]].feature);
    }
    const auto labels = qg.labels();
    const double ideal = hinge ? ideal_dcg(labels) : 0.0;
    double label_norm = 0.0;
    if (!hinge) {
      const double mx = *std::max_element(labels.begin(), labels.end());
      for (double y : labels) label_norm += std::exp(y - mx);
      label_norm = std::log(label_norm) + mx;
    }

    for (std::size_t k = p; k < end; ++k) {
      const std::size_t i = batch.pairs[k].item;
      const auto& item = qg.items[i];
      const double hi = m.score(qg.index, item.feature);
      double estimate = 0.0;
      for (double hj : sub_scores) {
        estimate += hinge ? squared_hinge(hj - hi, loss.margin) : std::exp(hj - hi);
      }
      estimate *= inv_sub;
      const double u = table.update(d.pair_offset(qpos) + i, estimate, gamma0);
      const double weight = hinge ? 0.0 : std::exp(item.relevance - label_norm);
      loss_sum += outer_value(loss, u, item.relevance, ideal, weight, qg.size());
      const double fprime = outer_derivative(loss, u, item.relevance, ideal, weight, qg.size());
      if (fprime == 0.0) continue;
      const double w = fprime * inv_batch * inv_sub;
      double self = 0.0;
      for (std::size_t j = 0; j < sub.size(); ++j) {
        const double x = sub_scores[j] - hi;
        const double dl = hinge ? squared_hinge_derivative(x, loss.margin) : std::exp(x);
        if (dl == 0.0) continue;
        m.add_score_gradient(qg.index, qg.items[sub[j]].feature, w * dl, grad);
        self += w * dl;
      }
      if (self != 0.0) m.add_score_gradient(qg.index, item.feature, -self, grad);
    }
    p = end;
  }
  if (loss_estimate != nullptr) *loss_estimate = loss_sum * inv_batch;
  return grad;
}

}  // namespace topkfair

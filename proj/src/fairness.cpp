#include "topkfair/fairness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "topkfair/errors.hpp"
#include "topkfair/rank_losses.hpp"

namespace topkfair {

double SmoothIndicator::value(double x) const {
  if (constant_one) return 1.0;
  return logistic(x / temperature);
}

double SmoothIndicator::derivative(double x) const {
  if (constant_one) return 0.0;
  const double p = logistic(x / temperature);
  return p * (1.0 - p) / temperature;
}

std::vector<double> exposures(std::span<const double> scores) {
  std::vector<double> out(scores.size());
  if (scores.empty()) return out;
  const double mx = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - mx);
    z += out[i];
  }
  for (auto& e : out) e /= z;
  return out;
}

std::vector<std::size_t> ranking_order(std::span<const double> scores,
                                       std::span<const std::uint32_t> ids) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  return order;
}

namespace {

struct GroupSizes {
  std::size_t a = 0, b = 0;
};

GroupSizes count_groups(std::span<const Group> groups) {
  GroupSizes n;
  for (auto g : groups) (g == Group::A ? n.a : n.b) += 1;
  return n;
}

std::vector<std::uint32_t> features_at(const QueryGroup& q, std::span<const std::size_t> pos) {
  std::vector<std::uint32_t> out(pos.size());
  for (std::size_t j = 0; j < pos.size(); ++j) out[j] = q.items[pos[j]].feature;
  return out;
}

}  // namespace

std::optional<double> full_list_disparity(std::span<const double> scores,
                                          std::span<const Group> groups) {
  const auto n = count_groups(groups);
  if (n.a == 0 || n.b == 0) return std::nullopt;
  const auto expo = exposures(scores);
  double sum_a = 0.0, sum_b = 0.0;
  for (std::size_t i = 0; i < expo.size(); ++i) (groups[i] == Group::A ? sum_a : sum_b) += expo[i];
  const double gap = sum_a / static_cast<double>(n.a) - sum_b / static_cast<double>(n.b);
  return 0.5 * gap * gap;
}

std::optional<double> full_list_disparity(const ScoringModel& m, const QueryGroup& q) {
  const auto scores = query_scores(m, q);
  const auto groups = q.groups();
  return full_list_disparity(scores, groups);
}

std::optional<double> topk_disparity_exact(std::span<const double> scores,
                                           std::span<const Group> groups,
                                           std::span<const std::uint32_t> ids, std::size_t K) {
  if (K == 0 || K >= scores.size()) {
    throw ConfigError("top-K disparity needs 1 <= K < list size (K = " + std::to_string(K) +
                      ", size " + std::to_string(scores.size()) + ")");
  }
  const auto n = count_groups(groups);
  if (n.a == 0 || n.b == 0) return std::nullopt;
  const auto expo = exposures(scores);
  const auto order = ranking_order(scores, ids);
  double sum_a = 0.0, sum_b = 0.0;
  for (std::size_t r = 0; r < K; ++r) {
    const auto i = order[r];
    (groups[i] == Group::A ? sum_a : sum_b) += expo[i];
  }
  return sum_a / static_cast<double>(n.a) - sum_b / static_cast<double>(n.b);
}

std::optional<double> topk_disparity_exact(const ScoringModel& m, const QueryGroup& q,
                                           std::size_t K) {
  const auto scores = query_scores(m, q);
  const auto groups = q.groups();
  const auto ids = q.features();
  return topk_disparity_exact(scores, groups, ids, K);
}

std::optional<double> topk_disparity_surrogate(std::span<const double> scores,
                                               std::span<const Group> groups, double lambda,
                                               const SmoothIndicator& psi) {
  const auto n = count_groups(groups);
  if (n.a == 0 || n.b == 0) return std::nullopt;
  const double shift = *std::max_element(scores.begin(), scores.end());
  double ga = 0.0, gb = 0.0, g = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double e = std::exp(scores[i] - shift);
    g += e;
    (groups[i] == Group::A ? ga : gb) += psi.value(scores[i] - lambda) * e;
  }
  const double len = static_cast<double>(scores.size());
  ga /= static_cast<double>(n.a);
  gb /= static_cast<double>(n.b);
  g /= len;
  const double d = (ga - gb) / (len * g);
  return 0.5 * d * d;
}

std::optional<double> topk_disparity_surrogate(const ScoringModel& m, const QueryGroup& q,
                                               double lambda, const SmoothIndicator& psi) {
  const auto scores = query_scores(m, q);
  const auto groups = q.groups();
  return topk_disparity_surrogate(scores, groups, lambda, psi);
}

void FairnessParams::validate() const {
  if (!psi.constant_one && !(psi.temperature > 0.0)) {
    throw ConfigError("indicator temperature must be positive");
  }
  for (double g : {gamma1, gamma2, gamma3}) {
    if (!(g >= 0.0 && g <= 1.0)) throw ConfigError("fairness averaging weights must lie in [0, 1]");
  }
  if (mode == FairnessMode::top_k) smoothing.validate();
}

bool fairness_applies(const QueryGroup& q, const FairnessParams& fp) {
  if (fp.mode == FairnessMode::none) return false;
  if (q.count(Group::A) == 0 || q.count(Group::B) == 0) return false;
  return fp.mode != FairnessMode::top_k || q.size() > fp.smoothing.K;
}

Vector g2_estimate(const ScoringModel& m, const Dataset& d, const BatchSample& batch,
                   const FairnessParams& fp, std::vector<QueryFairnessState>& states,
                   const std::vector<LambdaState>& lambdas, double* objective_estimate) {
  if (batch.per_query.empty()) throw StateError("G2 requested for an empty batch");
  if (states.size() != d.num_queries()) throw StateError("fairness state table size mismatch");
  const bool topk = fp.mode == FairnessMode::top_k;
  if (topk && lambdas.size() != d.num_queries()) {
    throw StateError("threshold state table size mismatch");
  }
  const bool implicit = topk && fp.g2_mode == G2Mode::full_implicit;
  const SmoothIndicator psi = topk ? fp.psi : SmoothIndicator{.temperature = 1.0, .constant_one = true};

  Vector grad(m.num_params(), 0.0);
  const double inv_q = 1.0 / static_cast<double>(batch.per_query.size());
  double objective = 0.0;

  for (const auto& [qi, qb] : batch.per_query) {
    const auto& q = d.queries()[qi];
    if (qb.fairness_skipped || !fairness_applies(q, fp)) continue;
    if (qb.items.empty() || qb.group_a.empty() || qb.group_b.empty()) continue;
    double lambda = 0.0, s = 1.0;
    if (topk) {
      const auto& ls = lambdas[qi];
      if (!ls.initialized) {
        throw StateError("no threshold state for query '" + q.query_id + "'");
      }
      lambda = ls.lambda;
      s = ls.s;
    }

    const auto items = features_at(q, qb.items);
    const auto fa = features_at(q, qb.group_a);
    const auto fb = features_at(q, qb.group_b);
    const auto hq = query_scores(m, q.index, items);
    const auto ha = query_scores(m, q.index, fa);
    const auto hb = query_scores(m, q.index, fb);

    auto& st = states[qi];
    if (!st.initialized) {
      st.shift = *std::max_element(hq.begin(), hq.end());
      st.shift = std::max(st.shift, *std::max_element(ha.begin(), ha.end()));
      st.shift = std::max(st.shift, *std::max_element(hb.begin(), hb.end()));
    }
    auto group_mean = [&](const std::vector<double>& h) {
      double sum = 0.0;
      for (double x : h) sum += psi.value(x - lambda) * std::exp(x - st.shift);
      return sum / static_cast<double>(h.size());
    };
    double gq = 0.0;
    for (double x : hq) gq += std::exp(x - st.shift);
    gq /= static_cast<double>(hq.size());
    const double ga = group_mean(ha);
    const double gb = group_mean(hb);

    if (!st.initialized) {
      st.u_a = ga;
      st.u_b = gb;
      st.u_g = gq;
      st.initialized = true;
    } else {
      st.u_a = fp.gamma1 * ga + (1.0 - fp.gamma1) * st.u_a;
      st.u_b = fp.gamma2 * gb + (1.0 - fp.gamma2) * st.u_b;
      st.u_g = fp.gamma3 * gq + (1.0 - fp.gamma3) * st.u_g;
    }

    const double n = static_cast<double>(q.size());
    const double D = (st.u_a - st.u_b) / (n * st.u_g);
    const double d1 = D / (n * st.u_g);
    const double d3 = -D * D / st.u_g;
    objective += 0.5 * D * D;

    double lambda_coef = 0.0;
    auto add_group = [&](const std::vector<std::uint32_t>& f, const std::vector<double>& h,
                         double df) {
      const double w = inv_q * df / static_cast<double>(f.size());
      for (std::size_t j = 0; j < f.size(); ++j) {
        const double e = std::exp(h[j] - st.shift);
        double coef = psi.value(h[j] - lambda) * e;
        if (implicit) {
          const double dp = psi.derivative(h[j] - lambda) * e;
          coef += dp;
          lambda_coef += w * dp;
        }
        if (coef != 0.0) m.add_score_gradient(q.index, f[j], w * coef, grad);
      }
    };
    add_group(fa, ha, d1);
    add_group(fb, hb, -d1);
    const double wq = inv_q * d3 / static_cast<double>(items.size());
    for (std::size_t j = 0; j < items.size(); ++j) {
      m.add_score_gradient(q.index, items[j], wq * std::exp(hq[j] - st.shift), grad);
    }
    // -lambda_coef * grad lambda, with grad lambda = -cross_grad / s.
    if (implicit && lambda_coef != 0.0) {
      add_cross_grad(lambda, m, q.index, items, fp.smoothing, lambda_coef / s, grad);
    }
  }
  if (objective_estimate) *objective_estimate = objective * inv_q;
  return grad;
}

double fairness_objective(const ScoringModel& m, const Dataset& d, const FairnessParams& fp,
                          double tol) {
  if (d.empty()) return 0.0;
  double total = 0.0;
  for (const auto& q : d.queries()) {
    if (!fairness_applies(q, fp)) continue;
    const auto scores = query_scores(m, q);
    const auto groups = q.groups();
    if (fp.mode == FairnessMode::full_list) {
      total += full_list_disparity(scores, groups).value_or(0.0);
    } else {
      const double lambda = solve_lambda(scores, fp.smoothing, tol);
      total += topk_disparity_surrogate(scores, groups, lambda, fp.psi).value_or(0.0);
    }
  }
  return total / static_cast<double>(d.num_queries());
}

}  // namespace topkfair

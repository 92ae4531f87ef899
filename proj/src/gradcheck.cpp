#include "topkfair/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "topkfair/lambda_solver.hpp"

namespace topkfair {

Vector numeric_gradient(const std::function<double()>& f, std::span<double> params,
                        double step) {
  Vector g(params.size(), 0.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double w = params[i];
    params[i] = w + step;
    const double up = f();
    params[i] = w - step;
    const double down = f();
    params[i] = w;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

double relative_error(double a, double b) {
  const double denom = std::max(std::abs(a), std::abs(b));
  return denom == 0.0 ? 0.0 : std::abs(a - b) / denom;
}

double g1_fd_error(FactorizationScorer& m, const Dataset& d, const RankLoss& loss) {
  PairEstimatorTable table(d.total_pairs());
  const auto g1 = g1_estimate(m, d, full_batch(d), loss, table, 1.0);
  const auto fd = numeric_gradient([&] { return mean_rank_loss(m, d, loss); },
                                   m.params().values());
  return relative_error(g1, fd);
}

double g2_fd_error(FactorizationScorer& m, const Dataset& d, const FairnessParams& fp,
                   double tol) {
  FairnessParams exact = fp;
  exact.gamma1 = exact.gamma2 = exact.gamma3 = 1.0;
  std::vector<QueryFairnessState> states(d.num_queries());
  std::vector<LambdaState> lambdas(d.num_queries());
  if (fp.mode == FairnessMode::top_k) {
    for (std::size_t q = 0; q < d.num_queries(); ++q) {
      const auto& qg = d.queries()[q];
      if (!fairness_applies(qg, fp)) continue;
      const auto scores = query_scores(m, qg);
      auto& ls = lambdas[q];
      ls.lambda = solve_lambda(scores, fp.smoothing, tol);
      ls.s = smoothed_hess(ls.lambda, scores, fp.smoothing);
      ls.initialized = true;
    }
  }
  const auto g2 = g2_estimate(m, d, full_batch(d), exact, states, lambdas);
  const auto fd = numeric_gradient([&] { return fairness_objective(m, d, fp, tol); },
                                   m.params().values());
  return relative_error(g2, fd);
}

namespace {

FactorizationScorer spread_model(FactorizationDims dims, std::uint64_t seed) {
  auto m = FactorizationScorer::init(dims, 10.0, 1.0, seed);
  std::mt19937_64 rng(seed ^ 0xabcdefULL);
  std::normal_distribution<double> normal(0.0, 0.5);
  for (auto& w : m.params().values()) w = normal(rng);
  return m;
}

Dataset small_dataset(std::size_t queries, std::size_t items, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_queries = queries;
  spec.items_per_query = items;
  spec.catalog_size = 3 * items;
  spec.minority_fraction = 0.4;
  spec.seed = seed;
  return generate_synthetic(spec);
}

SuiteResult rank_loss_suite(std::uint64_t seed) {
  SuiteResult r{"rank_losses", 0.0, 0};
  const auto d = small_dataset(4, 10, seed);
  for (auto kind : {RankLossKind::ndcg, RankLossKind::listnet}) {
    auto m = spread_model({d.num_query_rows(), d.catalog().size(), 4}, seed + 1);
    r.max_rel_error = std::max(r.max_rel_error, g1_fd_error(m, d, RankLoss{kind, 1.0}));
    ++r.cases;
  }
  // Per-item surrogate ranks against their own differences.
  auto m = spread_model({d.num_query_rows(), d.catalog().size(), 4}, seed + 2);
  const auto& q = d.queries().front();
  const auto items = q.features();
  for (std::size_t i = 0; i < items.size(); i += 3) {
    const auto gh = surrogate_rank_hinge_gradient(m, q.index, items, i, 1.0);
    const auto fh = numeric_gradient(
        [&] { return surrogate_rank_hinge(m, q.index, items, i, 1.0); }, m.params().values());
    const auto ge = surrogate_rank_exp_gradient(m, q.index, items, i);
    const auto fe = numeric_gradient([&] { return surrogate_rank_exp(m, q.index, items, i); },
                                     m.params().values());
    r.max_rel_error = std::max({r.max_rel_error, relative_error(gh, fh), relative_error(ge, fe)});
    r.cases += 2;
  }
  return r;
}

SuiteResult fairness_suite(std::uint64_t seed) {
  SuiteResult r{"fairness", 0.0, 0};
  const auto d = small_dataset(6, 5, seed);
  FairnessParams fp;
  fp.g2_mode = G2Mode::full_implicit;
  fp.smoothing.K = 2;
  for (auto mode : {FairnessMode::top_k, FairnessMode::full_list}) {
    fp.mode = mode;
    auto m = spread_model({d.num_query_rows(), d.catalog().size(), 4}, seed + 3);
    r.max_rel_error = std::max(r.max_rel_error, g2_fd_error(m, d, fp));
    ++r.cases;
  }
  return r;
}

SuiteResult lambda_suite(std::uint64_t seed) {
  SuiteResult r{"lambda_solver", 0.0, 0};
  const std::size_t n = 20;
  auto m = spread_model({1, n, 4}, seed + 4);
  std::vector<std::uint32_t> items(n);
  std::iota(items.begin(), items.end(), 0u);
  SmoothingParams p;
  p.K = 5;
  auto scores = [&] { return query_scores(m, 0, items); };
  const auto h = scores();
  const double lam = solve_lambda(h, p, 1e-12);
  const double step = 1e-6;

  // Away from the root, where the derivative itself vanishes.
  for (double l : {lam - 0.2, lam - 0.05, lam + 0.05, lam + 0.2}) {
    const double fd_grad = (smoothed_objective(l + step, h, p) - smoothed_objective(l - step, h, p)) /
                           (2.0 * step);
    const double fd_hess =
        (smoothed_grad(l + step, h, p) - smoothed_grad(l - step, h, p)) / (2.0 * step);
    r.max_rel_error = std::max({r.max_rel_error, relative_error(smoothed_grad(l, h, p), fd_grad),
                                relative_error(smoothed_hess(l, h, p), fd_hess)});
    r.cases += 2;
  }
  const auto cross = cross_grad(lam, m, 0, items, p);
  const auto fd_cross = numeric_gradient([&] { return smoothed_grad(lam, scores(), p); },
                                         m.params().values());
  const auto implicit = implicit_lambda_gradient(m, 0, items, p, 1e-12);
  const auto fd_implicit = numeric_gradient([&] { return solve_lambda(scores(), p, 1e-12); },
                                            m.params().values());
  r.max_rel_error = std::max({r.max_rel_error, relative_error(cross, fd_cross),
                              relative_error(implicit, fd_implicit)});
  r.cases += 2;
  return r;
}

}  // namespace

std::vector<SuiteResult> run_grad_checks(std::uint64_t seed) {
  return {rank_loss_suite(seed), fairness_suite(seed), lambda_suite(seed)};
}

}  // namespace topkfair

// One PASS/FAIL line per acceptance criterion; exit status 1 if any required
// criterion fails. The gamma ablation only warns.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "fixtures.hpp"
#include "topkfair/eval.hpp"
#include "topkfair/fairness.hpp"
#include "topkfair/gradcheck.hpp"
#include "topkfair/lambda_solver.hpp"
#include "topkfair/optimizer.hpp"
#include "topkfair/rank_losses.hpp"

using namespace topkfair;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

bool g_failed = false;

void report(int id, const std::string& name, const Outcome& o, bool warn_only = false) {
  const char* tag = o.pass ? "PASS" : (warn_only ? "WARN" : "FAIL");
  std::cout << tag << " " << id << " " << name << ": " << o.detail << std::endl;
  if (!o.pass && !warn_only) g_failed = true;
}

Outcome guarded(const std::function<Outcome()>& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

std::string fmt(double x) {
  std::ostringstream s;
  s.precision(4);
  s << x;
  return s.str();
}

std::vector<std::uint32_t> iota_ids(std::size_t n) {
  std::vector<std::uint32_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0u);
  return ids;
}

std::vector<Group> random_groups(std::size_t n, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.4);
  std::vector<Group> g(n);
  for (auto& x : g) x = coin(rng) ? Group::A : Group::B;
  g[0] = Group::A;
  g[1] = Group::B;
  return g;
}

// Ranking losses -------------------------------------------------------------

Outcome rank_loss_gradients() {
  const auto t0 = Clock::now();
  const auto d = fixtures::small_synthetic(20, 50, 101);
  double worst = 0.0;
  for (auto kind : {RankLossKind::ndcg, RankLossKind::listnet}) {
    auto m = fixtures::random_model(d, 8, 102);
    worst = std::max(worst, g1_fd_error(m, d, RankLoss{kind, 1.0}));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 60.0,
          "max rel error " + fmt(worst) + " (<= 1e-4), " + fmt(secs) + " s (< 60)"};
}

// Fairness gradient ----------------------------------------------------------

Outcome fairness_gradient() {
  double worst = 0.0;
  for (std::uint64_t seed : {201, 202, 203}) {
    const auto d = fixtures::small_synthetic(8, 5, seed);
    FairnessParams fp;
    fp.mode = FairnessMode::top_k;
    fp.g2_mode = G2Mode::full_implicit;
    fp.smoothing.K = 2;
    auto m = fixtures::random_model(d, 4, seed + 10);
    worst = std::max(worst, g2_fd_error(m, d, fp, 1e-10));
  }
  return {worst <= 1e-3, "max rel error " + fmt(worst) + " (<= 1e-3)"};
}

// Threshold solver -----------------------------------------------------------

Outcome threshold_solver() {
  std::mt19937_64 rng(301);
  std::uniform_int_distribution<std::size_t> size(2, 1000);
  double worst_solver = 0.0, worst_online = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = size(rng);
    const auto s = fixtures::tie_free_scores(n, rng);
    const std::size_t K = std::uniform_int_distribution<std::size_t>(1, n - 1)(rng);
    const SmoothingParams p{.tau1 = 1e-3, .tau2 = 1e-6, .epsilon = 0.5, .K = K};
    const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
    const double lam = solve_lambda(s, p, 1e-12);
    worst_solver = std::max(worst_solver, std::abs(lam - exact_lambda(s, K)) / (*hi - *lo));

    // Full-batch online iteration with gamma4 = 1 and Newton-scaled steps.
    auto st = initial_lambda_state(s, 0, p);
    for (int it = 0; it < 10000; ++it) {
      state_step(st, s, 0, p, 1.0, 1.0 / smoothed_hess(st.lambda, s, p));
      if (std::abs(st.v) <= 1e-13) break;
    }
    worst_online = std::max(worst_online, std::abs(st.lambda - lam));
  }
  return {worst_solver <= 1e-2 && worst_online <= 1e-6,
          "solver gap / range " + fmt(worst_solver) + " (<= 1e-2), online iteration gap " +
              fmt(worst_online) + " (<= 1e-6)"};
}

// Surrogate against exact top-K gap -----------------------------------------

Outcome surrogate_consistency() {
  std::mt19937_64 rng(401);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 10 + t % 40;
    const auto s = fixtures::tie_free_scores(n, rng, 0.1);
    const auto g = random_groups(n, rng);
    const std::size_t K = 1 + t % (n - 1);
    const SmoothingParams p{.tau1 = 1e-2, .tau2 = 1e-6, .epsilon = 0.1, .K = K};
    const double lam = solve_lambda(s, p, 1e-12);
    const double u = *topk_disparity_surrogate(s, g, lam, SmoothIndicator{.temperature = 1e-3});
    const double exact = *topk_disparity_exact(s, g, iota_ids(n), K);
    worst = std::max(worst, std::abs(std::sqrt(2.0 * u) - std::abs(exact)));
  }
  return {worst <= 1e-3, "max |sqrt(2U) - |gap|| " + fmt(worst) + " (<= 1e-3)"};
}

// Tradeoff sweep -------------------------------------------------------------

struct SweepSetup {
  Dataset full;
  SplitResult parts;
  TrainConfig cfg;
  EvalProtocol proto;
};

SweepSetup sweep_setup() {
  SyntheticSpec spec;
  spec.num_queries = 200;
  spec.items_per_query = 305;
  spec.bias = 2.0;
  spec.seed = 1;
  SweepSetup s{generate_synthetic(spec), {}, {}, {}};
  s.parts = split(s.full, {0.8, 0.1, 0.1}, 1);
  s.cfg.K = 50;
  s.cfg.seed = 1;
  s.cfg.pretrain_epochs = 10;
  s.cfg.epochs = 5;
  s.cfg.pretrain_eta1 = 3.0;
  s.cfg.eta1 = 1.0;
  s.cfg.gamma5 = 0.1;
  s.cfg.log_every = 0;
  s.proto.K_list = {50};
  s.proto.seed = 1;
  return s;
}

const std::vector<double> kGrid = {0.0, 1e1, 1e2, 1e3, 1e4};

Outcome tradeoff(const SweepSetup& s) {
  const auto t0 = Clock::now();
  const auto report = tradeoff_sweep(s.parts.train, &s.parts.valid, s.parts.test, s.cfg, kGrid,
                                     s.proto, 1);
  const double secs = seconds_since(t0);
  std::vector<double> cs, maes;
  std::string rows;
  for (const auto& r : report.rows) {
    if (r.failed) return {false, "run C=" + fmt(r.C) + " failed: " + r.error};
    cs.push_back(r.C);
    maes.push_back(r.mae);
    rows += " [C=" + fmt(r.C) + " ndcg=" + fmt(r.ndcg_mean) + " mae=" + fmt(r.mae) + "]";
  }
  const auto& first = report.rows.front();
  const auto& last = report.rows.back();
  const double mae_ratio = last.mae / first.mae;
  const double ndcg_ratio = last.ndcg_mean / first.ndcg_mean;
  const double rho = spearman(cs, maes);
  return {mae_ratio <= 0.5 && rho <= -0.8 && ndcg_ratio >= 0.7 && secs < 1800.0,
          "MAE ratio " + fmt(mae_ratio) + " (<= 0.5), Spearman " + fmt(rho) +
              " (<= -0.8), NDCG ratio " + fmt(ndcg_ratio) + " (>= 0.7), " + fmt(secs) +
              " s (< 1800);" + rows};
}

// Mode reduction -------------------------------------------------------------

Outcome mode_reduction() {
  const auto d = fixtures::small_synthetic(12, 20, 601);
  TrainConfig cfg;
  cfg.K = 3;
  cfg.dim = 3;
  cfg.eta1 = 0.5;
  cfg.epochs = 2;
  cfg.seed = 602;
  cfg.batch = {16, 6, 3, 3};
  cfg.log_every = 0;
  cfg.C = 0.0;
  cfg.fairness_mode = FairnessMode::top_k;
  const auto a = train(initial_model(d, cfg), d, cfg);
  cfg.fairness_mode = FairnessMode::none;
  const auto b = train(initial_model(d, cfg), d, cfg);
  const bool identical = a.final_model.params() == b.final_model.params() &&
                         a.trace.z_norms == b.trace.z_norms;

  std::mt19937_64 rng(603);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + t % 30;
    const auto s = fixtures::tie_free_scores(n, rng);
    const auto g = random_groups(n, rng);
    const double lam = std::normal_distribution<double>(0.0, 1.0)(rng);
    const double u = *topk_disparity_surrogate(s, g, lam, SmoothIndicator{.constant_one = true});
    worst = std::max(worst, std::abs(u - *full_list_disparity(s, g)));
  }
  return {identical && worst <= 1e-12,
          std::string("none vs C=0 trajectories ") + (identical ? "identical" : "differ") +
              ", constant-indicator surrogate vs full-list max diff " + fmt(worst) +
              " (<= 1e-12)"};
}

// Fairness-weighted run traces ------------------------------------------------

struct RunPoint {
  double ndcg = 0.0;
  double mae = 0.0;
  std::vector<double> z_norms;
  std::size_t finetune_steps = 0;
};

RunPoint fairness_run(const SweepSetup& s, double gamma) {
  TrainConfig cfg = s.cfg;
  cfg.C = 1e3;
  cfg.gamma1 = cfg.gamma2 = cfg.gamma3 = gamma;
  auto res = train(initial_model(s.parts.train, cfg), s.parts.train, cfg);
  const auto row = evaluate(res.final_model, s.parts.test, s.proto)[0];
  return {row.ndcg_mean, row.mae, std::move(res.trace.z_norms),
          cfg.epochs * steps_per_epoch(s.parts.train, cfg)};
}

Outcome gamma_ablation(const std::map<double, RunPoint>& runs) {
  std::string pts;
  for (const auto& [g, r] : runs) {
    pts += " [gamma=" + fmt(g) + " ndcg=" + fmt(r.ndcg) + " mae=" + fmt(r.mae) + "]";
  }
  const auto& lo = runs.at(0.2);
  const auto& hi = runs.at(1.0);
  const bool better_somewhere = lo.ndcg >= hi.ndcg || lo.mae <= hi.mae;
  const bool dominated = hi.ndcg > lo.ndcg && hi.mae < lo.mae;
  return {better_somewhere && !dominated,
          std::string("gamma=0.2 ") + (better_somewhere && !dominated ? "not dominated by"
                                                                      : "dominated by") +
              " gamma=1.0;" + pts};
}

Outcome convergence_proxy(const RunPoint& r) {
  // The fairness-weighted objective is optimized over the final
  // finetune_steps steps; the warm-start steps optimize the ranking loss alone.
  const auto& z = r.z_norms;
  const std::size_t start = z.size() - r.finetune_steps;
  const std::size_t k = std::max<std::size_t>(1, r.finetune_steps / 10);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    first += z[start + i];
    last += z[z.size() - 1 - i];
  }
  first /= static_cast<double>(k);
  last /= static_cast<double>(k);
  return {last <= first, "mean ||z|| first 10% " + fmt(first) + ", last 10% " + fmt(last) +
                             " over " + std::to_string(r.finetune_steps) + " steps"};
}

// Metric sanity --------------------------------------------------------------

Outcome metric_sanity() {
  std::mt19937_64 rng(901);
  std::normal_distribution<double> normal(0.0, 3.0);
  double norm_err = 0.0, shift_err = 0.0;
  std::size_t prefix_mismatch = 0, range_violations = 0;
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + t % 60;
    const auto s = fixtures::tie_free_scores(n, rng);
    const auto g = random_groups(n, rng);
    const auto ids = iota_ids(n);
    const auto e = exposures(s);
    norm_err = std::max(norm_err, std::abs(std::accumulate(e.begin(), e.end(), 0.0) - 1.0));

    const double c = normal(rng);
    auto shifted = s;
    for (auto& x : shifted) x += c;
    const auto es = exposures(shifted);
    for (std::size_t i = 0; i < n; ++i) shift_err = std::max(shift_err, std::abs(e[i] - es[i]));
    shift_err = std::max(shift_err,
                         std::abs(*full_list_disparity(s, g) - *full_list_disparity(shifted, g)));
    const std::size_t K = 1 + t % (n - 1);
    shift_err = std::max(shift_err, std::abs(*topk_disparity_exact(s, g, ids, K) -
                                             *topk_disparity_exact(shifted, g, ids, K)));
    const SmoothIndicator psi{.temperature = 0.1};
    shift_err = std::max(shift_err, std::abs(*topk_disparity_surrogate(s, g, 0.3, psi) -
                                             *topk_disparity_surrogate(shifted, g, 0.3 + c, psi)));

    std::vector<double> y(n);
    for (auto& v : y) v = std::uniform_int_distribution<int>(0, 3)(rng);
    y[0] = 1.0;
    const double v = *ndcg_at_k(s, y, ids, K);
    if (v < 0.0 || v > 1.0 + 1e-12) ++range_violations;
    auto order = ranking_order(s, ids);
    auto best = y;
    std::sort(best.rbegin(), best.rend());
    bool optimal = true;
    for (std::size_t r = 0; r < K; ++r) optimal = optimal && y[order[r]] == best[r];
    if ((std::abs(v - 1.0) <= 1e-12) != optimal) ++prefix_mismatch;
  }

  const auto d = fixtures::small_synthetic(1, 10, 902);
  std::mt19937_64 srng(903);
  std::vector<int> hits(10, 0);
  const int draws = 10000;
  for (int t = 0; t < draws; ++t) {
    hits[sample_batch(d, {1, 1, 1, 1}, srng).per_query.begin()->second.items.front()]++;
  }
  const auto [lo, hi] = std::minmax_element(hits.begin(), hits.end());
  const double fmin = static_cast<double>(*lo) / draws, fmax = static_cast<double>(*hi) / draws;

  const bool ok = norm_err <= 1e-12 && shift_err <= 1e-12 && range_violations == 0 &&
                  prefix_mismatch == 0 && fmin >= 0.07 && fmax <= 0.13;
  return {ok, "exposure sum error " + fmt(norm_err) + ", shift error " + fmt(shift_err) +
                  ", NDCG range violations " + std::to_string(range_violations) +
                  ", optimal-prefix mismatches " + std::to_string(prefix_mismatch) +
                  ", sampling frequencies [" + fmt(fmin) + ", " + fmt(fmax) + "]"};
}

}  // namespace

int main() {
  report(1, "ranking-loss gradient fidelity", guarded(rank_loss_gradients));
  report(2, "fairness gradient fidelity", guarded(fairness_gradient));
  report(3, "threshold solver", guarded(threshold_solver));
  report(4, "surrogate vs exact top-K disparity", guarded(surrogate_consistency));

  const auto setup = sweep_setup();
  report(5, "fairness/utility tradeoff sweep", guarded([&] { return tradeoff(setup); }));
  report(6, "mode reduction", guarded(mode_reduction));

  std::map<double, RunPoint> runs;
  std::string run_error;
  try {
    for (double g : {0.2, 0.6, 1.0}) runs[g] = fairness_run(setup, g);
  } catch (const std::exception& e) {
    run_error = e.what();
  }
  if (run_error.empty()) {
    report(7, "gamma ablation", gamma_ablation(runs), true);
    report(8, "convergence proxy", guarded([&] { return convergence_proxy(runs.at(0.2)); }));
  } else {
    report(7, "gamma ablation", {false, "exception: " + run_error}, true);
    report(8, "convergence proxy", {false, "exception: " + run_error});
  }
  report(9, "metric sanity", guarded(metric_sanity));
  return g_failed ? 1 : 0;
}

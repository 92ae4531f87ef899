#include "topkfair/optimizer.hpp"

#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <thread>

#include "topkfair/errors.hpp"

namespace topkfair {

namespace {

bool unit_interval(double x) { return x >= 0.0 && x <= 1.0; }

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void check_finite(std::span<const double> v, const char* term) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(std::string("non-finite value in ") + term + " at coordinate " +
                         std::to_string(i));
    }
  }
}

std::string fmt(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

}  // namespace

void TrainConfig::validate() const {
  if (K == 0) throw ConfigError("K must be at least 1");
  if (!(C >= 0.0) || !std::isfinite(C)) throw ConfigError("C must be a finite nonnegative number");
  if (fairness_mode == FairnessMode::none && C > 0.0) {
    throw ConfigError("fairness mode 'none' conflicts with C > 0");
  }
  loss.validate();
  for (double g : {gamma0, gamma1, gamma2, gamma3, gamma4}) {
    if (!unit_interval(g)) throw ConfigError("averaging weights gamma0..gamma4 must lie in [0, 1]");
  }
  if (!(gamma5 > 0.0 && gamma5 <= 1.0)) throw ConfigError("gamma5 must lie in (0, 1]");
  if (!(eta0 >= 0.0) || !(eta1 >= 0.0) || !(pretrain_eta1 >= 0.0)) {
    throw ConfigError("step sizes must be nonnegative");
  }
  if (!(tau_psi > 0.0)) throw ConfigError("tau_psi must be positive");
  smoothing().validate();
  if (batch.pairs == 0 || batch.query_items == 0 || batch.group_a == 0 || batch.group_b == 0) {
    throw ConfigError("batch sizes must be at least 1");
  }
  if (dim == 0) throw ConfigError("dim must be at least 1");
  if (!(score_bound > 0.0) || !(score_scale > 0.0)) {
    throw ConfigError("score_bound and score_scale must be positive");
  }
}

SmoothingParams TrainConfig::smoothing() const {
  return {.tau1 = tau1, .tau2 = tau2, .epsilon = epsilon, .K = K};
}

FairnessParams TrainConfig::fairness() const {
  FairnessParams fp;
  fp.mode = fairness_mode;
  fp.g2_mode = g2_mode;
  fp.psi = {.temperature = tau_psi, .constant_one = false};
  fp.smoothing = smoothing();
  fp.gamma1 = gamma1;
  fp.gamma2 = gamma2;
  fp.gamma3 = gamma3;
  return fp;
}

TrainingState TrainingState::create(const ScoringModel& m, const Dataset& d, std::uint64_t seed) {
  TrainingState st;
  st.pairs = PairEstimatorTable(d.total_pairs());
  st.fairness.assign(d.num_queries(), {});
  st.lambdas.assign(d.num_queries(), {});
  st.z.assign(m.num_params(), 0.0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    0x5eedu};
  st.rng.seed(seq);
  return st;
}

StepMetrics train_step(ScoringModel& m, const Dataset& d, const TrainConfig& cfg,
                       TrainingState& st, double lr_multiplier) {
  const auto batch = sample_batch(d, cfg.batch, st.rng);
  StepMetrics out;

  const Vector g1 = g1_estimate(m, d, batch, cfg.loss, st.pairs, cfg.gamma0, &out.loss_estimate);
  check_finite(g1, "G1 (ranking loss gradient)");
  out.g1_norm = norm2(g1);

  Vector g2;
  if (cfg.uses_fairness()) {
    const auto fp = cfg.fairness();
    const bool topk = fp.mode == FairnessMode::top_k;
    if (topk) {
      for (const auto& [qi, qb] : batch.per_query) {
        const auto& q = d.queries()[qi];
        if (!fairness_applies(q, fp) || st.lambdas[qi].initialized) continue;
        std::vector<double> scores(qb.items.size());
        for (std::size_t j = 0; j < qb.items.size(); ++j) {
          scores[j] = m.score(q.index, q.items[qb.items[j]].feature);
        }
        st.lambdas[qi] = initial_lambda_state(scores, q.size(), fp.smoothing);
      }
    }
    g2 = g2_estimate(m, d, batch, fp, st.fairness, st.lambdas, &out.fairness_estimate);
    check_finite(g2, "G2 (fairness gradient)");
    out.g2_norm = norm2(g2);
    if (topk) {
      for (const auto& [qi, qb] : batch.per_query) {
        const auto& q = d.queries()[qi];
        if (!fairness_applies(q, fp)) continue;
        std::vector<std::uint32_t> items(qb.items.size());
        for (std::size_t j = 0; j < items.size(); ++j) items[j] = q.items[qb.items[j]].feature;
        auto& ls = st.lambdas[qi];
        state_step(ls, m, q.index, items, q.size(), fp.smoothing, cfg.gamma4, cfg.eta0);
        if (!std::isfinite(ls.lambda) || !std::isfinite(ls.s) || !std::isfinite(ls.v)) {
          throw NumericError("non-finite threshold state for query '" + q.query_id + "'");
        }
      }
    }
  }

  const double g5 = cfg.gamma5;
  for (std::size_t i = 0; i < st.z.size(); ++i) {
    const double g = g2.empty() ? g1[i] : g1[i] + cfg.C * g2[i];
    st.z[i] = (1.0 - g5) * st.z[i] + g5 * g;
  }
  check_finite(st.z, "momentum buffer z");
  out.z_norm = norm2(st.z);

  const double eta = cfg.eta1 * lr_multiplier;
  if (eta != 0.0) {
    auto w = m.params().values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= eta * st.z[i];
  }
  ++st.step;
  return out;
}

void write_trace_csv(const TrainTrace& t, std::ostream& out) {
  out << "step,epoch,z_norm,loss_estimate,fairness_estimate,valid_ndcg,valid_mae,valid_mse\n";
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  for (const auto& r : t.records) {
    out << r.step << ',' << r.epoch << ',' << fmt(r.z_norm) << ',' << fmt(r.loss_estimate) << ','
        << fmt(r.fairness_estimate) << ',' << opt(r.valid_ndcg) << ',' << opt(r.valid_mae) << ','
        << opt(r.valid_mse) << '\n';
  }
}

std::size_t steps_per_epoch(const Dataset& d, const TrainConfig& cfg) {
  if (cfg.batch.pairs == 0) throw ConfigError("pair batch size must be at least 1");
  return (d.total_pairs() + cfg.batch.pairs - 1) / cfg.batch.pairs;
}

FactorizationScorer initial_model(const Dataset& d, const TrainConfig& cfg) {
  FactorizationDims dims{.queries = d.num_query_rows(), .items = d.catalog().size(),
                         .dim = cfg.dim};
  return FactorizationScorer::init(dims, cfg.score_bound, cfg.score_scale, cfg.seed);
}

TrainResult train(const FactorizationScorer& init, const Dataset& train_set,
                  const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  const auto start = std::chrono::steady_clock::now();

  TrainResult res{init, init, 0, {}};
  FactorizationScorer& model = res.final_model;
  auto st = TrainingState::create(model, train_set, cfg.seed);
  const std::size_t per_epoch = steps_per_epoch(train_set, cfg);
  const std::size_t pre = cfg.pretrain_epochs * per_epoch;
  const std::size_t total = pre + cfg.epochs * per_epoch;
  TrainConfig color_blind = cfg;
  color_blind.C = 0.0;
  if (cfg.pretrain_eta1 > 0.0) color_blind.eta1 = cfg.pretrain_eta1;

  EvalProtocol proto = opts.valid_protocol;
  if (proto.K_list.empty()) proto.K_list = {cfg.K};
  double best = -std::numeric_limits<double>::infinity();

  for (std::size_t t = 0; t < total; ++t) {
    const std::size_t epoch = t / per_epoch;
    const bool pretraining = t < pre;
    double lr = 1.0;
    const std::size_t tuning_epoch = (t - std::min(t, pre)) / per_epoch;
    if (!pretraining && cfg.lr_schedule == LrSchedule::step_decay && cfg.epochs > 1 &&
        2 * tuning_epoch >= cfg.epochs) {
      lr = 0.25;
    }
    const auto sm = train_step(model, train_set, pretraining ? color_blind : cfg, st, lr);
    res.trace.z_norms.push_back(sm.z_norm);

    const bool last = t + 1 == total;
    const bool cadence = cfg.log_every == 0 ? t == 0 : (t + 1) % cfg.log_every == 0;
    if (!cadence && !last) continue;
    TraceRecord rec{.step = t + 1, .epoch = epoch, .z_norm = sm.z_norm,
                    .loss_estimate = sm.loss_estimate, .fairness_estimate = sm.fairness_estimate};
    if (opts.valid != nullptr && !opts.valid->empty()) {
      const auto rows = evaluate(model, *opts.valid, proto);
      const auto& row = rows.front();
      if (row.ndcg_queries > 0) rec.valid_ndcg = row.ndcg_mean;
      if (row.fairness_queries > 0) {
        rec.valid_mae = row.mae;
        rec.valid_mse = row.mse;
      }
      const double score = rec.valid_ndcg.value_or(-1.0);
      if (score > best) {
        best = score;
        res.best_model = model;
        res.best_step = t + 1;
      }
    }
    res.trace.records.push_back(rec);
    if (opts.log != nullptr) {
      *opts.log << "step " << rec.step << " epoch " << rec.epoch << " |z| " << rec.z_norm
                << " loss " << rec.loss_estimate << " fair " << rec.fairness_estimate;
      if (rec.valid_ndcg) *opts.log << " valid_ndcg " << *rec.valid_ndcg;
      if (rec.valid_mae) *opts.log << " valid_mae " << *rec.valid_mae;
      *opts.log << '\n';
    }
  }
  if (opts.valid == nullptr || opts.valid->empty()) {
    res.best_model = model;
    res.best_step = total;
  }
  res.trace.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

TradeoffReport tradeoff_sweep(const Dataset& train_set, const Dataset* valid,
                              const Dataset& test, const TrainConfig& base,
                              const std::vector<double>& C_grid, const EvalProtocol& proto,
                              unsigned jobs) {
  if (C_grid.empty()) throw ConfigError("C grid is empty");
  for (std::size_t i = 1; i < C_grid.size(); ++i) {
    if (!(C_grid[i] >= C_grid[i - 1])) throw ConfigError("C grid must be sorted ascending");
  }
  std::vector<std::vector<TradeoffRow>> per_run(C_grid.size());

  auto run_one = [&](std::size_t r) {
    TrainConfig cfg = base;
    cfg.C = C_grid[r];
    std::vector<TradeoffRow> rows;
    try {
      TrainOptions opts;
      opts.valid = valid;
      const auto res = train(initial_model(train_set, cfg), train_set, cfg, opts);
      for (const auto& e : evaluate(res.final_model, test, proto)) {
        rows.push_back({.C = cfg.C, .K = e.K, .ndcg_mean = e.ndcg_mean, .ndcg_std = e.ndcg_std,
                        .mae = e.mae, .mse = e.mse, .skipped = e.skipped});
      }
    } catch (const Error& e) {
      rows.clear();
      for (auto K : proto.K_list) {
        rows.push_back({.C = cfg.C, .K = K, .failed = true, .error = e.what()});
      }
    }
    per_run[r] = std::move(rows);
  };

  if (jobs <= 1) {
    for (std::size_t r = 0; r < C_grid.size(); ++r) run_one(r);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < std::min<std::size_t>(jobs, C_grid.size()); ++j) {
      pool.emplace_back([&] {
        for (std::size_t r = next++; r < C_grid.size(); r = next++) run_one(r);
      });
    }
    for (auto& th : pool) th.join();
  }

  TradeoffReport report;
  for (auto& rows : per_run) {
    for (auto& row : rows) report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace topkfair

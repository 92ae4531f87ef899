#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "topkfair/data.hpp"
#include "topkfair/eval.hpp"
#include "topkfair/fairness.hpp"
#include "topkfair/lambda_solver.hpp"
#include "topkfair/model.hpp"
#include "topkfair/rank_losses.hpp"

namespace topkfair {

enum class LrSchedule { constant, step_decay };

struct TrainConfig {
  std::size_t K = 50;
  double C = 0.0;
  RankLoss loss;
  FairnessMode fairness_mode = FairnessMode::top_k;
  G2Mode g2_mode = G2Mode::simplified;
  double gamma0 = 0.3;
  double gamma1 = 0.2;
  double gamma2 = 0.2;
  double gamma3 = 0.2;
  double gamma4 = 0.5;
  double gamma5 = 0.9;
  double eta0 = 1e-3;
  double eta1 = 4e-4;
  double tau1 = 1e-2;
  double tau2 = 1e-4;
  double epsilon = 0.5;
  double tau_psi = 0.1;
  BatchSizes batch;
  std::size_t epochs = 10;
  /// Color-blind (C = 0) epochs run before `epochs`, as a warm start.
  std::size_t pretrain_epochs = 0;
  /// Parameter step size of the warm-start epochs; 0 means eta1.
  double pretrain_eta1 = 0.0;
  std::uint64_t seed = 0;
  LrSchedule lr_schedule = LrSchedule::constant;

  std::size_t dim = 8;
  double score_bound = 10.0;
  double score_scale = 1.0;
  /// Trace cadence in steps; 0 logs only the first and last step.
  std::size_t log_every = 100;

  /// Throws ConfigError on out-of-range values or conflicting settings
  /// (e.g. fairness_mode none with C > 0).
  void validate() const;

  FairnessParams fairness() const;
  SmoothingParams smoothing() const;
  /// Whether G2 is ever computed: C > 0 and a fairness mode is set.
  bool uses_fairness() const { return C > 0.0 && fairness_mode != FairnessMode::none; }
};

/// Every piece of mutable state the training loop carries between steps.
struct TrainingState {
  PairEstimatorTable pairs;
  std::vector<QueryFairnessState> fairness;
  std::vector<LambdaState> lambdas;
  Vector z;
  std::size_t step = 0;
  std::mt19937_64 rng;

  static TrainingState create(const ScoringModel& m, const Dataset& d, std::uint64_t seed);
};

struct StepMetrics {
  double loss_estimate = 0.0;
  double fairness_estimate = 0.0;
  double z_norm = 0.0;
  double g1_norm = 0.0;
  double g2_norm = 0.0;
};

/// One iteration: sample, G1 (updating u_{q,i}), threshold warm start, G2
/// (updating u_a, u_b, u_g), threshold state step, momentum, parameter step.
/// `lr_multiplier` scales eta1. Throws NumericError naming the first
/// non-finite term.
StepMetrics train_step(ScoringModel& m, const Dataset& d, const TrainConfig& cfg,
                       TrainingState& st, double lr_multiplier = 1.0);

struct TraceRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double z_norm = 0.0;
  double loss_estimate = 0.0;
  double fairness_estimate = 0.0;
  std::optional<double> valid_ndcg;
  std::optional<double> valid_mae;
  std::optional<double> valid_mse;
};

struct TrainTrace {
  std::vector<TraceRecord> records;
  /// ||z|| after every step.
  std::vector<double> z_norms;
  /// Wall-clock seconds of the whole run; not part of the CSV.
  double seconds = 0.0;
};

void write_trace_csv(const TrainTrace& t, std::ostream& out);

struct TrainOptions {
  /// Validation split for the trace and best-checkpoint selection.
  const Dataset* valid = nullptr;
  EvalProtocol valid_protocol{.relevant_per_query = 5, .irrelevant_per_query = 300,
                              .K_list = {}, .seed = 0};
  /// Periodic progress lines; null for silence.
  std::ostream* log = nullptr;
};

struct TrainResult {
  FactorizationScorer final_model;
  /// Highest validation NDCG@K among logged steps; the final model when no
  /// validation split is given.
  FactorizationScorer best_model;
  std::size_t best_step = 0;
  TrainTrace trace;
};

std::size_t steps_per_epoch(const Dataset& d, const TrainConfig& cfg);

/// (pretrain_epochs + epochs) * steps_per_epoch iterations of train_step
/// from `init`; the first pretrain_epochs run with C = 0. The learning-rate
/// schedule counts only the fine-tuning epochs.
TrainResult train(const FactorizationScorer& init, const Dataset& train_set,
                  const TrainConfig& cfg, const TrainOptions& opts = {});

/// Fresh model for `d` under `cfg` (dimensions, bound, scale, seed).
FactorizationScorer initial_model(const Dataset& d, const TrainConfig& cfg);

/// One training run per C with identical seeds and budgets, each final model
/// evaluated on `test`. Runs in parallel over `jobs` workers when > 1; a
/// failed run yields rows marked failed.
TradeoffReport tradeoff_sweep(const Dataset& train_set, const Dataset* valid,
                              const Dataset& test, const TrainConfig& base,
                              const std::vector<double>& C_grid, const EvalProtocol& proto,
                              unsigned jobs = 1);

// Flat key=value configuration ------------------------------------------------

struct ConfigParam {
  std::string key;
  std::string help;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

/// The table driving config files, CLI flags and their help text.
const std::vector<ConfigParam>& config_params();

/// Parses `key = value` lines; '#' starts a comment. Unknown keys and
/// malformed lines throw ParseError with the line number.
std::map<std::string, std::string> read_config_entries(std::istream& in);
std::map<std::string, std::string> load_config_entries(const std::filesystem::path& path);

/// Applies entries through the table; bad values throw ConfigError naming
/// the key.
void apply_config(TrainConfig& cfg, const std::map<std::string, std::string>& entries);

/// Every table key with its current value, one per line.
void write_config(const TrainConfig& cfg, std::ostream& out);

}  // namespace topkfair

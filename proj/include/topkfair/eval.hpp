#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "topkfair/data.hpp"
#include "topkfair/model.hpp"

namespace topkfair {

struct EvalProtocol {
  std::size_t relevant_per_query = 5;
  std::size_t irrelevant_per_query = 300;
  std::vector<std::size_t> K_list = {50, 100, 200};
  std::uint64_t seed = 0;
};

/// A sampled evaluation list of one query; `ids` are catalog indices.
struct EvalList {
  std::vector<std::uint32_t> ids;
  std::vector<double> labels;
  std::vector<Group> groups;
};

/// min(available, requested) relevant (y > 0) items plus irrelevant ones:
/// the query's zero-label items first, then catalog items never observed for
/// the query, with label 0 and their catalog group.
EvalList sample_eval_list(const Dataset& d, std::size_t q, const EvalProtocol& proto);

/// Truncated NDCG under ranking_order; nullopt when no label is positive.
std::optional<double> ndcg_at_k(std::span<const double> scores, std::span<const double> labels,
                                std::span<const std::uint32_t> ids, std::size_t K);

struct EvalRow {
  std::size_t K = 0;
  double ndcg_mean = 0.0;
  /// Across-query standard deviation of per-query NDCG@K.
  double ndcg_std = 0.0;
  double mae = 0.0;
  double mse = 0.0;
  std::size_t ndcg_queries = 0;
  std::size_t fairness_queries = 0;
  /// Queries without a defined disparity (empty group or list size <= K).
  std::size_t skipped = 0;
};

/// One row per protocol K. Queries are evaluated in parallel over `threads`
/// workers (0 = hardware concurrency); results do not depend on it.
std::vector<EvalRow> evaluate(const ScoringModel& m, const Dataset& d, const EvalProtocol& proto,
                              unsigned threads = 1);

struct TradeoffRow {
  double C = 0.0;
  std::size_t K = 0;
  double ndcg_mean = 0.0;
  double ndcg_std = 0.0;
  double mae = 0.0;
  double mse = 0.0;
  std::size_t skipped = 0;
  bool failed = false;
  std::string error;
};

struct TradeoffReport {
  std::vector<TradeoffRow> rows;
};

void write_report_csv(const TradeoffReport& r, std::ostream& out);
void write_report_json(const TradeoffReport& r, std::ostream& out);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

struct StripExport {
  std::filesystem::path csv;
  std::filesystem::path queries_csv;
  std::filesystem::path ppm;
};

/// Group letters by rank position for the `num_queries` queries with the
/// largest |top-K exact disparity| (undefined disparities sort last).
/// Writes the cells CSV, a query_id,disparity sidecar and a P6 image with
/// A red, B green, padding white.
void export_ranking_strips(const ScoringModel& m, const Dataset& d, std::size_t num_queries,
                           std::size_t K, const StripExport& out);

}  // namespace topkfair

#include "topkfair/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

#include <json.hpp>

#include "topkfair/errors.hpp"
#include "topkfair/fairness.hpp"
#include "topkfair/rank_losses.hpp"

namespace topkfair {

namespace {

std::string fmt(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

template <class T>
std::vector<T> pick(const std::vector<T>& from, std::size_t k, std::mt19937_64& rng) {
  std::vector<T> out;
  for (auto i : sample_indices(from.size(), std::min(k, from.size()), rng)) {
    out.push_back(from[i]);
  }
  return out;
}

}  // namespace

EvalList sample_eval_list(const Dataset& d, std::size_t q, const EvalProtocol& proto) {
  const auto& qg = d.queries().at(q);
  std::seed_seq seq{static_cast<std::uint32_t>(proto.seed),
                    static_cast<std::uint32_t>(proto.seed >> 32), qg.index};
  std::mt19937_64 rng(seq);

  std::vector<std::size_t> relevant, zero;
  for (std::size_t i = 0; i < qg.size(); ++i) {
    (qg.items[i].relevance > 0.0 ? relevant : zero).push_back(i);
  }
  EvalList out;
  auto add_item = [&](std::size_t pos) {
    const auto& it = qg.items[pos];
    out.ids.push_back(it.feature);
    out.labels.push_back(it.relevance);
    out.groups.push_back(it.group);
  };
  for (auto pos : pick(relevant, proto.relevant_per_query, rng)) add_item(pos);
  for (auto pos : pick(zero, proto.irrelevant_per_query, rng)) add_item(pos);

  if (zero.size() < proto.irrelevant_per_query) {
    std::vector<std::uint32_t> known = qg.known.empty() ? qg.features() : qg.known;
    std::sort(known.begin(), known.end());
    std::vector<std::uint32_t> unseen;
    for (std::uint32_t c = 0; c < d.catalog().size(); ++c) {
      if (!std::binary_search(known.begin(), known.end(), c)) unseen.push_back(c);
    }
    for (auto c : pick(unseen, proto.irrelevant_per_query - zero.size(), rng)) {
      out.ids.push_back(c);
      out.labels.push_back(0.0);
      out.groups.push_back(d.catalog()[c].group);
    }
  }
  return out;
}

std::optional<double> ndcg_at_k(std::span<const double> scores, std::span<const double> labels,
                                std::span<const std::uint32_t> ids, std::size_t K) {
  if (K == 0) throw ConfigError("NDCG@K needs K >= 1");
  const double ideal = ideal_dcg(labels, K);
  if (!(ideal > 0.0)) return std::nullopt;
  const auto order = ranking_order(scores, ids);
  double dcg = 0.0;
  for (std::size_t r = 0; r < std::min(K, order.size()); ++r) {
    dcg += (std::exp2(labels[order[r]]) - 1.0) / std::log2(static_cast<double>(r) + 2.0);
  }
  return dcg / ideal;
}

std::vector<EvalRow> evaluate(const ScoringModel& m, const Dataset& d, const EvalProtocol& proto,
                              unsigned threads) {
  if (d.empty()) throw DataError("cannot evaluate an empty dataset");
  if (proto.K_list.empty()) throw ConfigError("evaluation needs at least one K");
  const std::size_t nk = proto.K_list.size();
  // Per query and K: NDCG and gap, NaN when undefined.
  std::vector<double> ndcg(d.num_queries() * nk), gap(d.num_queries() * nk);

  auto run = [&](std::size_t q) {
    const auto list = sample_eval_list(d, q, proto);
    const auto scores = query_scores(m, d.queries()[q].index, list.ids);
    for (std::size_t k = 0; k < nk; ++k) {
      const auto K = proto.K_list[k];
      ndcg[q * nk + k] = ndcg_at_k(scores, list.labels, list.ids, K).value_or(std::nan(""));
      std::optional<double> g;
      if (K < scores.size()) g = topk_disparity_exact(scores, list.groups, list.ids, K);
      gap[q * nk + k] = g.value_or(std::nan(""));
    }
  };

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  if (threads == 1) {
    for (std::size_t q = 0; q < d.num_queries(); ++q) run(q);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t q = t; q < d.num_queries(); q += threads) run(q);
      });
    }
    for (auto& th : pool) th.join();
  }

  std::vector<EvalRow> rows;
  for (std::size_t k = 0; k < nk; ++k) {
    EvalRow row;
    row.K = proto.K_list[k];
    double sum = 0.0, sq = 0.0, abs_sum = 0.0, gap_sq = 0.0;
    for (std::size_t q = 0; q < d.num_queries(); ++q) {
      const double n = ndcg[q * nk + k];
      if (!std::isnan(n)) {
        sum += n;
        sq += n * n;
        ++row.ndcg_queries;
      }
      const double g = gap[q * nk + k];
      if (std::isnan(g)) {
        ++row.skipped;
      } else {
        abs_sum += std::abs(g);
        gap_sq += g * g;
        ++row.fairness_queries;
      }
    }
    if (row.ndcg_queries > 0) {
      const double c = static_cast<double>(row.ndcg_queries);
      row.ndcg_mean = sum / c;
      row.ndcg_std = std::sqrt(std::max(0.0, sq / c - row.ndcg_mean * row.ndcg_mean));
    }
    if (row.fairness_queries > 0) {
      const double c = static_cast<double>(row.fairness_queries);
      row.mae = abs_sum / c;
      row.mse = gap_sq / c;
    }
    rows.push_back(row);
  }
  return rows;
}

void write_report_csv(const TradeoffReport& r, std::ostream& out) {
  out << "C,K,ndcg_mean,ndcg_std,mae,mse,skipped,status\n";
  for (const auto& row : r.rows) {
    out << fmt(row.C) << ',' << row.K << ',';
    if (row.failed) {
      out << ",,,,," << "failed\n";
      continue;
    }
    out << fmt(row.ndcg_mean) << ',' << fmt(row.ndcg_std) << ',' << fmt(row.mae) << ','
        << fmt(row.mse) << ',' << row.skipped << ",ok\n";
  }
}

void write_report_json(const TradeoffReport& r, std::ostream& out) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json j{{"C", row.C}, {"K", row.K}, {"status", row.failed ? "failed" : "ok"}};
    if (row.failed) {
      j["error"] = row.error;
    } else {
      j["ndcg_mean"] = row.ndcg_mean;
      j["ndcg_std"] = row.ndcg_std;
      j["mae"] = row.mae;
      j["mse"] = row.mse;
      j["skipped"] = row.skipped;
    }
    rows.push_back(std::move(j));
  }
  out << nlohmann::json{{"rows", rows}}.dump(2) << '\n';
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ConfigError("spearman needs two equally long samples of size >= 2");
  }
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

void export_ranking_strips(const ScoringModel& m, const Dataset& d, std::size_t num_queries,
                           std::size_t K, const StripExport& out) {
  if (num_queries > d.num_queries()) {
    throw ConfigError("requested " + std::to_string(num_queries) + " strips from " +
                      std::to_string(d.num_queries()) + " queries");
  }
  struct Strip {
    std::size_t query;
    std::optional<double> gap;
    std::vector<Group> cells;
  };
  std::vector<Strip> strips;
  for (std::size_t q = 0; q < d.num_queries(); ++q) {
    const auto& qg = d.queries()[q];
    const auto scores = query_scores(m, qg);
    const auto ids = qg.features();
    Strip s{q, std::nullopt, {}};
    if (K >= 1 && K < qg.size()) s.gap = topk_disparity_exact(scores, qg.groups(), ids, K);
    for (auto i : ranking_order(scores, ids)) s.cells.push_back(qg.items[i].group);
    strips.push_back(std::move(s));
  }
  std::stable_sort(strips.begin(), strips.end(), [](const Strip& a, const Strip& b) {
    if (a.gap.has_value() != b.gap.has_value()) return a.gap.has_value();
    return a.gap && std::abs(*a.gap) > std::abs(*b.gap);
  });
  strips.resize(num_queries);

  std::size_t width = 0;
  for (const auto& s : strips) width = std::max(width, s.cells.size());

  std::ofstream csv(out.csv);
  if (!csv) throw IoError("cannot write '" + out.csv.string() + "'");
  for (const auto& s : strips) {
    for (std::size_t c = 0; c < width; ++c) {
      if (c > 0) csv << ',';
      if (c < s.cells.size()) csv << group_letter(s.cells[c]);
    }
    csv << '\n';
  }
  std::ofstream qcsv(out.queries_csv);
  if (!qcsv) throw IoError("cannot write '" + out.queries_csv.string() + "'");
  qcsv << "query_id,disparity\n";
  for (const auto& s : strips) {
    qcsv << d.queries()[s.query].query_id << ',' << (s.gap ? fmt(*s.gap) : std::string()) << '\n';
  }
  std::ofstream ppm(out.ppm, std::ios::binary);
  if (!ppm) throw IoError("cannot write '" + out.ppm.string() + "'");
  ppm << "P6\n" << width << ' ' << strips.size() << "\n255\n";
  for (const auto& s : strips) {
    for (std::size_t c = 0; c < width; ++c) {
      unsigned char px[3] = {255, 255, 255};
      if (c < s.cells.size()) {
        const bool a = s.cells[c] == Group::A;
        px[0] = a ? 255 : 0;
        px[1] = a ? 0 : 255;
        px[2] = 0;
      }
      ppm.write(reinterpret_cast<const char*>(px), 3);
    }
  }
  if (!csv || !qcsv || !ppm) throw IoError("write failed while exporting ranking strips");
}

}  // namespace topkfair

#include "topkfair/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string_view>
#include <unordered_map>
#include <unordered_set>

#include "topkfair/errors.hpp"

namespace topkfair {

std::size_t QueryGroup::count(Group g) const {
  return static_cast<std::size_t>(std::count_if(
      items.begin(), items.end(), [g](const Item& it) { return it.group == g; }));
}

std::vector<std::uint32_t> QueryGroup::features() const {
  std::vector<std::uint32_t> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.feature);
  return out;
}

std::vector<double> QueryGroup::labels() const {
  std::vector<double> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.relevance);
  return out;
}

std::vector<Group> QueryGroup::groups() const {
  std::vector<Group> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.group);
  return out;
}

Dataset::Dataset(std::vector<CatalogItem> catalog, std::size_t num_query_rows,
                 std::vector<QueryGroup> queries)
    : catalog_(std::move(catalog)),
      num_query_rows_(num_query_rows),
      queries_(std::move(queries)) {
  offsets_.reserve(queries_.size() + 1);
  for (const auto& q : queries_) {
    if (q.index >= num_query_rows_) {
      throw DataError("query '" + q.query_id + "' has row " +
                      std::to_string(q.index) + " beyond the query table");
    }
    for (const auto& it : q.items) {
      if (it.feature >= catalog_.size()) {
        throw DataError("query '" + q.query_id + "' references item " +
                        std::to_string(it.feature) + " outside the catalog");
      }
    }
    offsets_.push_back(total_pairs_);
    total_pairs_ += q.items.size();
  }
  offsets_.push_back(total_pairs_);
}

void Dataset::validate() const {
  for (const auto& q : queries_) {
    if (q.items.size() < 2) {
      throw DataError("query '" + q.query_id + "' has fewer than 2 items");
    }
    std::unordered_set<std::uint32_t> seen;
    for (const auto& it : q.items) {
      if (!seen.insert(it.feature).second) {
        throw DataError("query '" + q.query_id + "' lists item '" +
                        catalog_[it.feature].name + "' twice");
      }
      if (!(it.relevance >= 0.0)) {
        throw DataError("negative relevance in query '" + q.query_id + "'");
      }
    }
  }
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() &&
         std::isfinite(out);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

Dataset read_csv(std::istream& in) {
  std::vector<CatalogItem> catalog;
  std::unordered_map<std::string, std::uint32_t> item_index;
  std::vector<QueryGroup> queries;
  std::unordered_map<std::string, std::size_t> query_index;
  std::vector<std::unordered_set<std::uint32_t>> seen;

  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    const auto stripped = trim(line);
    if (stripped.empty()) continue;
    const auto fields = split_fields(stripped);
    if (fields.size() != 4) {
      throw ParseError(line_no, "expected 4 fields, got " +
                                    std::to_string(fields.size()));
    }
    double relevance = 0.0;
    double group_value = 0.0;
    const bool rel_ok = parse_double(fields[2], relevance);
    const bool group_ok = parse_double(fields[3], group_value);
    if (first) {
      first = false;
      if (!rel_ok && !group_ok) continue;  // header
    }
    if (!rel_ok) {
      throw ParseError(line_no, "non-numeric relevance '" +
                                    std::string(fields[2]) + "'");
    }
    if (relevance < 0.0) {
      throw ParseError(line_no, "negative relevance");
    }
    if (!group_ok || (group_value != 0.0 && group_value != 1.0)) {
      throw ParseError(line_no, "group must be 0 or 1, got '" +
                                    std::string(fields[3]) + "'");
    }
    if (fields[0].empty() || fields[1].empty()) {
      throw ParseError(line_no, "empty query or item id");
    }
    const Group group = group_value == 0.0 ? Group::A : Group::B;

    std::string qid(fields[0]);
    auto [qit, q_new] = query_index.try_emplace(qid, queries.size());
    if (q_new) {
      QueryGroup qg;
      qg.query_id = qid;
      qg.index = static_cast<std::uint32_t>(queries.size());
      queries.push_back(std::move(qg));
      seen.emplace_back();
    }
    std::string iid(fields[1]);
    auto [iit, i_new] =
        item_index.try_emplace(iid, static_cast<std::uint32_t>(catalog.size()));
    if (i_new) catalog.push_back({iid, group});
    const auto feature = iit->second;
    if (!seen[qit->second].insert(feature).second) {
      throw DataError("line " + std::to_string(line_no) +
                      ": duplicate (query, item) pair (" + qid + ", " + iid + ")");
    }
    queries[qit->second].items.push_back({feature, relevance, group});
  }
  if (queries.empty()) throw DataError("empty dataset");
  const auto rows = queries.size();
  Dataset d(std::move(catalog), rows, std::move(queries));
  d.validate();
  return d;
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return read_csv(in);
}

void write_csv(const Dataset& d, std::ostream& out) {
  out << "query_id,item_id,relevance,group\n";
  for (const auto& q : d.queries()) {
    for (const auto& it : q.items) {
      out << q.query_id << ',' << d.catalog()[it.feature].name << ','
          << format_double(it.relevance) << ',' << (it.group == Group::A ? 0 : 1)
          << '\n';
    }
  }
}

void save_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  write_csv(d, out);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k,
                                        std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  if (k >= n) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    return out;
  }
  // Floyd's algorithm: k draws, no rejection loop.
  std::unordered_set<std::size_t> chosen;
  chosen.reserve(k * 2);
  out.reserve(k);
  for (std::size_t j = n - k; j < n; ++j) {
    std::uniform_int_distribution<std::size_t> dist(0, j);
    const auto t = dist(rng);
    const auto pick = chosen.count(t) ? j : t;
    chosen.insert(pick);
    out.push_back(pick);
  }
  std::sort(out.begin(), out.end());
  return out;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_queries == 0) throw ConfigError("num_queries must be positive");
  if (spec.items_per_query < 4) throw ConfigError("items_per_query must be >= 4");
  if (!(spec.minority_fraction > 0.0 && spec.minority_fraction < 1.0)) {
    throw ConfigError("minority_fraction must lie in (0, 1)");
  }
  if (!(spec.bias >= 0.0)) throw ConfigError("bias must be >= 0");
  if (!(spec.noise >= 0.0)) throw ConfigError("noise must be >= 0");
  const std::size_t catalog_size =
      spec.catalog_size == 0 ? 3 * spec.items_per_query : spec.catalog_size;
  if (catalog_size < spec.items_per_query) {
    throw ConfigError("catalog_size must be >= items_per_query");
  }
  const auto per_query_a = static_cast<std::size_t>(
      std::lround(spec.minority_fraction * static_cast<double>(spec.items_per_query)));
  const auto catalog_a = static_cast<std::size_t>(
      std::lround(spec.minority_fraction * static_cast<double>(catalog_size)));
  if (per_query_a < 1 || per_query_a >= spec.items_per_query) {
    throw ConfigError("minority_fraction leaves a group empty in every query");
  }
  if (catalog_a < per_query_a ||
      catalog_size - catalog_a < spec.items_per_query - per_query_a) {
    throw ConfigError("catalog too small for the requested group mix");
  }

  constexpr std::size_t kFactors = 4;
  constexpr double kItemWeight = 0.8;
  constexpr double kInteractionWeight = 0.6;

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::size_t> order(catalog_size);
  for (std::size_t i = 0; i < catalog_size; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Group> item_group(catalog_size, Group::B);
  for (std::size_t i = 0; i < catalog_a; ++i) item_group[order[i]] = Group::A;

  std::vector<double> item_quality(catalog_size);
  std::vector<double> item_factors(catalog_size * kFactors);
  for (std::size_t i = 0; i < catalog_size; ++i) {
    item_quality[i] = normal(rng);
    for (std::size_t f = 0; f < kFactors; ++f) item_factors[i * kFactors + f] = normal(rng);
  }

  std::vector<CatalogItem> catalog(catalog_size);
  std::vector<std::uint32_t> pool_a, pool_b;
  for (std::size_t i = 0; i < catalog_size; ++i) {
    catalog[i] = {"i" + std::to_string(i), item_group[i]};
    (item_group[i] == Group::A ? pool_a : pool_b).push_back(static_cast<std::uint32_t>(i));
  }

  std::vector<QueryGroup> queries(spec.num_queries);
  std::array<double, kFactors> query_factors{};
  for (std::size_t q = 0; q < spec.num_queries; ++q) {
    for (auto& f : query_factors) f = normal(rng);
    auto& qg = queries[q];
    qg.query_id = "q" + std::to_string(q);
    qg.index = static_cast<std::uint32_t>(q);
    std::vector<std::uint32_t> chosen;
    for (auto i : sample_indices(pool_a.size(), per_query_a, rng)) chosen.push_back(pool_a[i]);
    for (auto i : sample_indices(pool_b.size(), spec.items_per_query - per_query_a, rng))
      chosen.push_back(pool_b[i]);
    std::sort(chosen.begin(), chosen.end());
    qg.items.reserve(chosen.size());
    for (auto feature : chosen) {
      double interaction = 0.0;
      for (std::size_t f = 0; f < kFactors; ++f)
        interaction += query_factors[f] * item_factors[feature * kFactors + f];
      interaction /= std::sqrt(static_cast<double>(kFactors));
      double quality = kItemWeight * item_quality[feature] + kInteractionWeight * interaction;
      if (item_group[feature] == Group::A) quality -= spec.bias;
      const double noisy = quality + spec.noise * normal(rng);
      const double relevance = std::clamp(std::round(noisy), 0.0, 4.0);
      qg.items.push_back({feature, relevance, item_group[feature]});
    }
  }
  return Dataset(std::move(catalog), spec.num_queries, std::move(queries));
}

SplitResult split(const Dataset& d, std::array<double, 3> fractions,
                  std::uint64_t seed) {
  for (double f : fractions) {
    if (!(f > 0.0)) throw ConfigError("split fractions must be positive");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  std::mt19937_64 rng(seed);
  SplitResult result;
  std::array<std::vector<QueryGroup>, 3> parts;
  for (const auto& q : d.queries()) {
    const std::size_t n = q.items.size();
    std::vector<std::uint32_t> known = q.known.empty() ? q.features() : q.known;
    auto make = [&](std::vector<std::size_t> positions) {
      std::sort(positions.begin(), positions.end());
      QueryGroup part;
      part.query_id = q.query_id;
      part.index = q.index;
      part.known = known;
      for (auto p : positions) part.items.push_back(q.items[p]);
      return part;
    };
    std::vector<std::size_t> positions(n);
    for (std::size_t i = 0; i < n; ++i) positions[i] = i;
    if (n < 3) {
      ++result.warnings;
      parts[0].push_back(make(positions));
      continue;
    }
    std::shuffle(positions.begin(), positions.end(), rng);
    const auto dn = static_cast<double>(n);
    auto n_train = static_cast<std::size_t>(std::lround(fractions[0] * dn));
    auto n_valid = static_cast<std::size_t>(std::lround(fractions[1] * dn));
    n_train = std::min(n_train, n);
    n_valid = std::min(n_valid, n - n_train);
    const auto first = positions.begin();
    const std::array<std::vector<std::size_t>, 3> cut = {
        std::vector<std::size_t>(first, first + static_cast<std::ptrdiff_t>(n_train)),
        std::vector<std::size_t>(first + static_cast<std::ptrdiff_t>(n_train),
                                 first + static_cast<std::ptrdiff_t>(n_train + n_valid)),
        std::vector<std::size_t>(first + static_cast<std::ptrdiff_t>(n_train + n_valid),
                                 positions.end())};
    for (std::size_t s = 0; s < 3; ++s) {
      if (!cut[s].empty()) parts[s].push_back(make(cut[s]));
    }
  }
  result.train = Dataset(d.catalog(), d.num_query_rows(), std::move(parts[0]));
  result.valid = Dataset(d.catalog(), d.num_query_rows(), std::move(parts[1]));
  result.test = Dataset(d.catalog(), d.num_query_rows(), std::move(parts[2]));
  return result;
}

BatchSample sample_batch(const Dataset& d, const BatchSizes& sizes,
                         std::mt19937_64& rng) {
  BatchSample batch;
  if (d.total_pairs() == 0) return batch;
  const auto picks = sample_indices(d.total_pairs(), std::max<std::size_t>(sizes.pairs, 1), rng);
  batch.pairs.reserve(picks.size());
  std::size_t q = 0;
  for (auto flat : picks) {
    while (d.pair_offset(q + 1) <= flat) ++q;
    batch.pairs.push_back({q, flat - d.pair_offset(q)});
    batch.per_query.try_emplace(q);
  }
  for (auto& [qpos, sub] : batch.per_query) {
    const auto& qg = d.queries()[qpos];
    sub.items = sample_indices(qg.size(), std::max<std::size_t>(sizes.query_items, 1), rng);
    std::vector<std::size_t> pos_a, pos_b;
    for (std::size_t i = 0; i < qg.size(); ++i) {
      (qg.items[i].group == Group::A ? pos_a : pos_b).push_back(i);
    }
    for (auto i : sample_indices(pos_a.size(), std::max<std::size_t>(sizes.group_a, 1), rng))
      sub.group_a.push_back(pos_a[i]);
    for (auto i : sample_indices(pos_b.size(), std::max<std::size_t>(sizes.group_b, 1), rng))
      sub.group_b.push_back(pos_b[i]);
    sub.fairness_skipped = sub.group_a.empty() || sub.group_b.empty();
  }
  return batch;
}

BatchSample full_batch(const Dataset& d) {
  BatchSample batch;
  for (std::size_t q = 0; q < d.num_queries(); ++q) {
    const auto& qg = d.queries()[q];
    QueryBatch sub;
    for (std::size_t i = 0; i < qg.size(); ++i) {
      batch.pairs.push_back({q, i});
      sub.items.push_back(i);
      (qg.items[i].group == Group::A ? sub.group_a : sub.group_b).push_back(i);
    }
    sub.fairness_skipped = sub.group_a.empty() || sub.group_b.empty();
    batch.per_query.emplace(q, std::move(sub));
  }
  return batch;
}

}  // namespace topkfair

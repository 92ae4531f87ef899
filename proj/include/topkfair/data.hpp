#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace topkfair {

/// Protected (minority) group A and majority group B. CSV encodes A as 0.
enum class Group : std::uint8_t { A = 0, B = 1 };

inline char group_letter(Group g) { return g == Group::A ? 'A' : 'B'; }

struct CatalogItem {
  std::string name;
  Group group = Group::B;
};

/// One (query, item) observation. `feature` indexes the dataset catalog and
/// doubles as the item row of the scoring model.
struct Item {
  std::uint32_t feature = 0;
  double relevance = 0.0;
  Group group = Group::B;
};

struct QueryGroup {
  std::string query_id;
  /// Row of the query in the scoring model; stable across splits.
  std::uint32_t index = 0;
  std::vector<Item> items;
  /// Catalog features observed for this query before any split. Empty means
  /// "exactly the features in `items`".
  std::vector<std::uint32_t> known;

  std::size_t size() const { return items.size(); }
  std::size_t count(Group g) const;
  std::vector<std::uint32_t> features() const;
  std::vector<double> labels() const;
  std::vector<Group> groups() const;
};

/// Query-grouped relevance data over a shared item catalog.
///
/// Every split of a dataset shares the catalog and the query index space, so
/// a single model trained on one split can score the others.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<CatalogItem> catalog, std::size_t num_query_rows,
          std::vector<QueryGroup> queries);

  const std::vector<QueryGroup>& queries() const { return queries_; }
  const std::vector<CatalogItem>& catalog() const { return catalog_; }
  std::size_t num_queries() const { return queries_.size(); }
  /// Number of model query rows; at least one more than the largest index.
  std::size_t num_query_rows() const { return num_query_rows_; }
  std::size_t total_pairs() const { return total_pairs_; }
  /// Offset of query `q`'s first item in the flat pair numbering.
  std::size_t pair_offset(std::size_t q) const { return offsets_[q]; }
  bool empty() const { return queries_.empty(); }

  /// Checks the loaded-data invariants: N_q >= 2 and unique items per query.
  void validate() const;

 private:
  std::vector<CatalogItem> catalog_;
  std::size_t num_query_rows_ = 0;
  std::vector<QueryGroup> queries_;
  std::vector<std::size_t> offsets_;
  std::size_t total_pairs_ = 0;
};

/// Reads `query_id,item_id,relevance,group` rows. A header row is detected
/// by non-numeric relevance and group fields on the first line.
Dataset load_csv(const std::filesystem::path& path);
Dataset read_csv(std::istream& in);

/// Writes the same four-column format (with header) that `load_csv` reads.
void write_csv(const Dataset& d, std::ostream& out);
void save_csv(const Dataset& d, const std::filesystem::path& path);

struct SyntheticSpec {
  std::size_t num_queries = 200;
  std::size_t items_per_query = 100;
  /// Shared catalog size; 0 selects 3 * items_per_query.
  std::size_t catalog_size = 0;
  double minority_fraction = 0.3;
  double bias = 2.0;
  double noise = 0.5;
  std::uint64_t seed = 0;
};

/// Latent-quality generator; group A quality is shifted down by `bias`.
Dataset generate_synthetic(const SyntheticSpec& spec);

struct SplitResult {
  Dataset train, valid, test;
  /// Queries too small to split, kept whole in train.
  std::size_t warnings = 0;
};

/// Per-query item split; each query keeps its model row in every part.
SplitResult split(const Dataset& d, std::array<double, 3> fractions,
                  std::uint64_t seed);

struct BatchSizes {
  std::size_t pairs = 256;
  std::size_t query_items = 32;
  std::size_t group_a = 16;
  std::size_t group_b = 16;
};

/// Sub-batches for one sampled query; all entries are positions into the
/// query's item list.
struct QueryBatch {
  std::vector<std::size_t> items;
  std::vector<std::size_t> group_a;
  std::vector<std::size_t> group_b;
  bool fairness_skipped = false;
};

struct PairRef {
  std::size_t query = 0;  // position in Dataset::queries()
  std::size_t item = 0;   // position in the query's item list
};

struct BatchSample {
  std::vector<PairRef> pairs;
  std::map<std::size_t, QueryBatch> per_query;
};

/// Draws B from all pairs and, for every query in B, B_q / B_a^q / B_b^q,
/// all uniformly without replacement and capped at the source sizes.
BatchSample sample_batch(const Dataset& d, const BatchSizes& sizes,
                         std::mt19937_64& rng);

/// The batch with every pair and every full sub-list.
BatchSample full_batch(const Dataset& d);

/// k distinct indices from [0, n), uniformly, in ascending order.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k,
                                        std::mt19937_64& rng);

}  // namespace topkfair

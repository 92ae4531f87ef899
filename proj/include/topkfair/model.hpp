#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace topkfair {

using Vector = std::vector<double>;

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
  bool operator==(const Segment&) const = default;
};

/// Flat parameter vector with a named, contiguous segment layout.
class ParamVector {
 public:
  ParamVector() = default;
  /// Lays segments out back to back in the given order; values start at 0.
  explicit ParamVector(const std::vector<std::pair<std::string, std::size_t>>& layout);

  std::size_t size() const { return values_.size(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  const std::vector<Segment>& layout() const { return layout_; }
  const Segment& segment(const std::string& name) const;
  std::span<double> segment_values(const std::string& name);
  std::span<const double> segment_values(const std::string& name) const;

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  bool operator==(const ParamVector&) const = default;

 private:
  std::vector<double> values_;
  std::vector<Segment> layout_;
};

/// Score function h_q(x; w) with analytic parameter gradient and
/// |h| <= score_bound() for every input.
class ScoringModel {
 public:
  virtual ~ScoringModel() = default;

  virtual double score(std::size_t query, std::size_t item) const = 0;
  /// grad += scale * d score(query, item) / d w.
  virtual void add_score_gradient(std::size_t query, std::size_t item, double scale,
                                  std::span<double> grad) const = 0;
  virtual double score_bound() const = 0;
  virtual ParamVector& params() = 0;
  virtual const ParamVector& params() const = 0;
  virtual std::unique_ptr<ScoringModel> clone() const = 0;

  std::size_t num_params() const { return params().size(); }
  Vector score_gradient(std::size_t query, std::size_t item) const;
};

struct FactorizationDims {
  std::size_t queries = 0;
  std::size_t items = 0;
  std::size_t dim = 8;
};

/// h = B_h * tanh((u_q . v_i + b_i) / s).
///
/// Segments: "query_embedding" (N x d, row major), "item_embedding" (M x d),
/// "item_bias" (M).
class FactorizationScorer final : public ScoringModel {
 public:
  static constexpr double kInitStd = 0.1;

  FactorizationScorer(FactorizationDims dims, double score_bound, double scale);
  /// Embeddings ~ N(0, 0.1^2) from `seed`; biases exactly zero.
  static FactorizationScorer init(FactorizationDims dims, double score_bound,
                                  double scale, std::uint64_t seed);

  double score(std::size_t query, std::size_t item) const override;
  void add_score_gradient(std::size_t query, std::size_t item, double scale,
                          std::span<double> grad) const override;
  double score_bound() const override { return bound_; }
  ParamVector& params() override { return params_; }
  const ParamVector& params() const override { return params_; }
  std::unique_ptr<ScoringModel> clone() const override;

  const FactorizationDims& dims() const { return dims_; }
  double scale() const { return scale_; }
  /// The pre-tanh activation u_q . v_i + b_i.
  double logit(std::size_t query, std::size_t item) const;

  std::size_t query_offset(std::size_t query) const { return query * dims_.dim; }
  std::size_t item_offset(std::size_t item) const {
    return dims_.queries * dims_.dim + item * dims_.dim;
  }
  std::size_t bias_offset(std::size_t item) const {
    return (dims_.queries + dims_.items) * dims_.dim + item;
  }

 private:
  void check_ids(std::size_t query, std::size_t item) const;

  FactorizationDims dims_;
  double bound_;
  double scale_;
  ParamVector params_;
};

/// Checkpoint I/O; the byte layout is described in docs/FORMATS.md.
void save_checkpoint(const FactorizationScorer& model, const std::filesystem::path& path);
FactorizationScorer load_checkpoint(const std::filesystem::path& path);

}  // namespace topkfair

#include "topkfair/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "topkfair/errors.hpp"

namespace topkfair {

ParamVector::ParamVector(const std::vector<std::pair<std::string, std::size_t>>& layout) {
  std::size_t offset = 0;
  for (const auto& [name, length] : layout) {
    layout_.push_back({name, offset, length});
    offset += length;
  }
  values_.assign(offset, 0.0);
}

const Segment& ParamVector::segment(const std::string& name) const {
  for (const auto& s : layout_) {
    if (s.name == name) return s;
  }
  throw LookupError("no parameter segment named '" + name + "'");
}

std::span<double> ParamVector::segment_values(const std::string& name) {
  const auto& s = segment(name);
  return std::span<double>(values_).subspan(s.offset, s.length);
}

std::span<const double> ParamVector::segment_values(const std::string& name) const {
  const auto& s = segment(name);
  return std::span<const double>(values_).subspan(s.offset, s.length);
}

Vector ScoringModel::score_gradient(std::size_t query, std::size_t item) const {
  Vector g(num_params(), 0.0);
  add_score_gradient(query, item, 1.0, g);
  return g;
}

FactorizationScorer::FactorizationScorer(FactorizationDims dims, double score_bound,
                                         double scale)
    : dims_(dims), bound_(score_bound), scale_(scale) {
  if (dims.queries == 0 || dims.items == 0 || dims.dim == 0) {
    throw ConfigError("factorization dimensions must be positive");
  }
  if (!(score_bound > 0.0)) throw ConfigError("score bound must be positive");
  if (!(scale > 0.0)) throw ConfigError("score scale must be positive");
  params_ = ParamVector({{"query_embedding", dims.queries * dims.dim},
                         {"item_embedding", dims.items * dims.dim},
                         {"item_bias", dims.items}});
}

FactorizationScorer FactorizationScorer::init(FactorizationDims dims, double score_bound,
                                              double scale, std::uint64_t seed) {
  FactorizationScorer m(dims, score_bound, scale);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kInitStd);
  for (auto name : {"query_embedding", "item_embedding"}) {
    for (auto& v : m.params_.segment_values(name)) v = normal(rng);
  }
  return m;
}

void FactorizationScorer::check_ids(std::size_t query, std::size_t item) const {
  if (query >= dims_.queries) {
    throw LookupError("query row " + std::to_string(query) + " out of range");
  }
  if (item >= dims_.items) {
    throw LookupError("item " + std::to_string(item) + " out of range");
  }
}

double FactorizationScorer::logit(std::size_t query, std::size_t item) const {
  check_ids(query, item);
  const double* u = params_.values().data() + query_offset(query);
  const double* v = params_.values().data() + item_offset(item);
  double z = params_[bias_offset(item)];
  for (std::size_t k = 0; k < dims_.dim; ++k) z += u[k] * v[k];
  return z;
}

double FactorizationScorer::score(std::size_t query, std::size_t item) const {
  return bound_ * std::tanh(logit(query, item) / scale_);
}

void FactorizationScorer::add_score_gradient(std::size_t query, std::size_t item,
                                             double scale, std::span<double> grad) const {
  if (grad.size() != params_.size()) {
    throw StateError("gradient buffer size does not match parameter count");
  }
  const double t = std::tanh(logit(query, item) / scale_);
  const double dz = scale * bound_ * (1.0 - t * t) / scale_;
  const std::size_t qo = query_offset(query);
  const std::size_t io = item_offset(item);
  for (std::size_t k = 0; k < dims_.dim; ++k) {
    grad[qo + k] += dz * params_[io + k];
    grad[io + k] += dz * params_[qo + k];
  }
  grad[bias_offset(item)] += dz;
}

std::unique_ptr<ScoringModel> FactorizationScorer::clone() const {
  return std::make_unique<FactorizationScorer>(*this);
}

namespace {

constexpr std::array<char, 8> kMagic = {'T', 'K', 'F', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b.data(), 8);
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  in.read(reinterpret_cast<char*>(b.data()), 8);
  if (!in) throw IoError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return v;
}

double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace

void save_checkpoint(const FactorizationScorer& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(kMagic.data(), kMagic.size());
  put_u64(out, model.dims().queries);
  put_u64(out, model.dims().items);
  put_u64(out, model.dims().dim);
  put_f64(out, model.score_bound());
  put_f64(out, model.scale());
  const auto& layout = model.params().layout();
  put_u64(out, layout.size());
  for (const auto& s : layout) {
    put_u64(out, s.name.size());
    out.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
    put_u64(out, s.offset);
    put_u64(out, s.length);
  }
  const auto values = model.params().values();
  put_u64(out, values.size());
  for (double v : values) put_f64(out, v);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

FactorizationScorer load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError("'" + path.string() + "' is not a checkpoint");
  FactorizationDims dims;
  dims.queries = get_u64(in);
  dims.items = get_u64(in);
  dims.dim = get_u64(in);
  const double bound = get_f64(in);
  const double scale = get_f64(in);
  FactorizationScorer model(dims, bound, scale);
  const auto nseg = get_u64(in);
  const auto& expected = model.params().layout();
  if (nseg != expected.size()) throw IoError("checkpoint layout mismatch");
  for (const auto& seg : expected) {
    const auto len = get_u64(in);
    if (len > 256) throw IoError("corrupt segment name");
    std::string name(len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(len));
    const auto offset = get_u64(in);
    const auto length = get_u64(in);
    if (!in || name != seg.name || offset != seg.offset || length != seg.length) {
      throw IoError("checkpoint layout mismatch at segment '" + seg.name + "'");
    }
  }
  const auto count = get_u64(in);
  if (count != model.params().size()) throw IoError("checkpoint value count mismatch");
  for (auto& v : model.params().values()) v = get_f64(in);
  return model;
}

}  // namespace topkfair

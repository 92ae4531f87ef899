#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "topkfair/errors.hpp"
#include "topkfair/gradcheck.hpp"
#include "topkfair/model.hpp"

using namespace topkfair;

TEST_CASE("param vector layout covers the vector without overlap") {
  ParamVector p({{"a", 3}, {"b", 0}, {"c", 4}});
  CHECK(p.size() == 7);
  std::size_t next = 0;
  for (const auto& s : p.layout()) {
    CHECK(s.offset == next);
    next += s.length;
  }
  CHECK(next == p.size());
  p.segment_values("c")[0] = 2.5;
  CHECK(p[3] == 2.5);
  CHECK_THROWS_AS(p.segment("zzz"), LookupError);
}

TEST_CASE("init draws small embeddings and zero biases") {
  const auto m = FactorizationScorer::init({100, 100, 8}, 10.0, 1.0, 3);
  CHECK(m.num_params() == 1700);
  for (double b : m.params().segment_values("item_bias")) CHECK(b == 0.0);
  double sum = 0.0, sq = 0.0;
  const auto emb = m.params().segment_values("item_embedding");
  for (double w : emb) {
    sum += w;
    sq += w * w;
  }
  const double n = static_cast<double>(emb.size());
  CHECK(std::abs(sum / n) < 0.02);
  CHECK(std::sqrt(sq / n) == doctest::Approx(0.1).epsilon(0.1));

  const auto again = FactorizationScorer::init({100, 100, 8}, 10.0, 1.0, 3);
  CHECK(again.params() == m.params());
  const auto other = FactorizationScorer::init({100, 100, 8}, 10.0, 1.0, 4);
  CHECK_FALSE(other.params() == m.params());

  CHECK_THROWS_AS(FactorizationScorer::init({0, 10, 8}, 10.0, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(FactorizationScorer::init({10, 10, 0}, 10.0, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(FactorizationScorer::init({10, 10, 2}, 0.0, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(FactorizationScorer::init({10, 10, 2}, 1.0, -1.0, 1), ConfigError);
}

TEST_CASE("score closed forms") {
  FactorizationScorer m({2, 3, 2}, 4.0, 2.0);
  CHECK(m.score(1, 2) == 0.0);
  // u.v + b = s * atanh(0.5) gives half the bound.
  m.params()[m.bias_offset(2)] = 2.0 * std::atanh(0.5);
  CHECK(m.score(1, 2) == doctest::Approx(2.0).epsilon(1e-14));
  m.params()[m.query_offset(0)] = 1.5;
  m.params()[m.item_offset(1)] = 2.0;
  m.params()[m.bias_offset(1)] = -1.0;
  CHECK(m.logit(0, 1) == doctest::Approx(2.0));
  CHECK(m.score(0, 1) == doctest::Approx(4.0 * std::tanh(1.0)));
  CHECK_THROWS_AS(m.score(2, 0), LookupError);
  CHECK_THROWS_AS(m.score(0, 3), LookupError);
  CHECK_THROWS_AS(m.score_gradient(0, 3), LookupError);
}

TEST_CASE("scores stay within the bound") {
  FactorizationScorer m({1, 1, 3}, 2.5, 0.3);
  std::mt19937_64 rng(99);
  std::normal_distribution<double> wide(0.0, 20.0);
  for (int t = 0; t < 100000; ++t) {
    for (auto& w : m.params().values()) w = wide(rng);
    CHECK_LE(std::abs(m.score(0, 0)), 2.5);
  }
}

TEST_CASE("score gradient at zero parameters") {
  FactorizationScorer m({3, 4, 2}, 10.0, 2.0);
  const auto g = m.score_gradient(1, 2);
  REQUIRE(g.size() == m.num_params());
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (i == m.bias_offset(2)) {
      CHECK(g[i] == doctest::Approx(5.0));
    } else {
      CHECK(g[i] == 0.0);
    }
  }
}

TEST_CASE("score gradient matches differences and touches three segments only") {
  auto m = FactorizationScorer::init({5, 7, 3}, 3.0, 1.5, 1);
  std::mt19937_64 rng(21);
  std::normal_distribution<double> normal(0.0, 0.7);
  std::uniform_int_distribution<std::size_t> pick_q(0, 4), pick_i(0, 6);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    for (auto& w : m.params().values()) w = normal(rng);
    const auto q = pick_q(rng), it = pick_i(rng);
    const auto g = m.score_gradient(q, it);
    const auto fd = numeric_gradient([&] { return m.score(q, it); }, m.params().values());
    worst = std::max(worst, relative_error(g, fd));
    for (std::size_t i = 0; i < g.size(); ++i) {
      const bool touched = (i >= m.query_offset(q) && i < m.query_offset(q) + 3) ||
                           (i >= m.item_offset(it) && i < m.item_offset(it) + 3) ||
                           i == m.bias_offset(it);
      if (!touched) REQUIRE(g[i] == 0.0);
    }
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("gradient accumulation scales into a caller buffer") {
  auto m = FactorizationScorer::init({2, 2, 2}, 1.0, 1.0, 5);
  std::vector<double> buf(m.num_params(), 1.0);
  m.add_score_gradient(0, 1, -2.0, buf);
  const auto g = m.score_gradient(0, 1);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(buf[i] == doctest::Approx(1.0 - 2.0 * g[i]));
  std::vector<double> short_buf(3);
  CHECK_THROWS_AS(m.add_score_gradient(0, 1, 1.0, short_buf), StateError);
}

TEST_CASE("checkpoint round trip and corruption") {
  const auto dir = std::filesystem::temp_directory_path() / "topkfair_model_test";
  std::filesystem::create_directories(dir);
  auto m = FactorizationScorer::init({3, 5, 4}, 7.0, 0.5, 8);
  m.params()[m.bias_offset(4)] = -0.25;
  save_checkpoint(m, dir / "m.ckpt");
  const auto back = load_checkpoint(dir / "m.ckpt");
  CHECK(back.params() == m.params());
  CHECK(back.dims().queries == 3);
  CHECK(back.dims().items == 5);
  CHECK(back.dims().dim == 4);
  CHECK(back.score_bound() == 7.0);
  CHECK(back.scale() == 0.5);

  {
    std::ofstream junk(dir / "junk.ckpt", std::ios::binary);
    junk << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), IoError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
  const auto size = std::filesystem::file_size(dir / "m.ckpt");
  std::filesystem::resize_file(dir / "m.ckpt", size - 8);
  CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("clone is an independent copy") {
  auto m = FactorizationScorer::init({2, 2, 2}, 1.0, 1.0, 5);
  auto c = m.clone();
  c->params()[0] += 1.0;
  CHECK(c->params()[0] != m.params()[0]);
  CHECK(c->score_bound() == m.score_bound());
}

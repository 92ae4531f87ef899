#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "topkfair/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "topkfair");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = topkfair::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Workspace {
  fs::path dir;
  explicit Workspace(const std::string& name)
      : dir(fs::temp_directory_path() / ("topkfair_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string operator/(const std::string& f) const { return (dir / f).string(); }
};

const std::vector<std::string> kSmallTrain = {"--K", "3", "--dim", "3", "--epochs", "1",
                                              "--batch_pairs", "16", "--batch_items", "6",
                                              "--batch_a", "3", "--batch_b", "3",
                                              "--eta1", "0.5", "--log_every", "5"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("help and usage errors") {
  const auto help = cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("gen-data") != std::string::npos);
  const auto train_help = cli({"train", "--help"});
  CHECK(train_help.code == 0);
  CHECK(train_help.out.find("--tau_psi") != std::string::npos);
  CHECK(cli({"train", "--no-such-flag"}).code != 0);
  CHECK(cli({"gen-data"}).code != 0);
}

TEST_CASE("end-to-end workflow") {
  Workspace w("flow");
  auto gen = cli({"gen-data", "--queries", "12", "--items", "20", "--seed", "3", "--out",
                  w / "d.csv"});
  REQUIRE(gen.code == 0);
  CHECK(fs::exists(w / "d.csv"));

  auto tr = cli(with({"train", "--data", w / "d.csv", "--out-dir", w / "run", "--seed", "5",
                      "--C", "10"},
                     kSmallTrain));
  REQUIRE_MESSAGE(tr.code == 0, tr.err);
  for (auto f : {"model.ckpt", "best.ckpt", "trace.csv", "config.txt", "metadata.json"}) {
    CHECK(fs::exists(w.dir / "run" / f));
  }
  CHECK(slurp(w.dir / "run" / "config.txt").find("C = 10\n") != std::string::npos);
  const auto meta = nlohmann::json::parse(slurp(w.dir / "run" / "metadata.json"));
  CHECK(meta["seed"] == 5);
  CHECK(meta.contains("seconds"));

  auto ev = cli({"eval", "--data", w / "d.csv", "--model", w / "run/model.ckpt", "--seed", "5",
                 "--K-list", "3,5", "--relevant", "2", "--irrelevant", "10", "--out",
                 w / "e.csv", "--json", w / "e.json"});
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  CHECK(ev.out.rfind("K,ndcg_mean,", 0) == 0);
  CHECK(slurp(w.dir / "e.csv") == ev.out);
  CHECK(nlohmann::json::parse(slurp(w.dir / "e.json")).size() == 2);

  auto ex = cli({"export-strips", "--data", w / "d.csv", "--model", w / "run/model.ckpt",
                 "--seed", "5", "--part", "all", "--queries", "4", "--K", "3", "--out",
                 w / "strips"});
  REQUIRE_MESSAGE(ex.code == 0, ex.err);
  CHECK(fs::exists(w / "strips.csv"));
  CHECK(fs::exists(w / "strips_queries.csv"));
  CHECK(slurp(w.dir / "strips.ppm").rfind("P6\n20 4\n255\n", 0) == 0);

  auto sw = cli(with({"sweep", "--data", w / "d.csv", "--seed", "5", "--C-grid", "0,10",
                      "--K-list", "3", "--relevant", "2", "--irrelevant", "10", "--jobs", "2",
                      "--out", w / "s.csv", "--json", w / "s.json"},
                     kSmallTrain));
  REQUIRE_MESSAGE(sw.code == 0, sw.err);
  CHECK(slurp(w.dir / "s.csv").rfind("C,K,ndcg_mean,ndcg_std,mae,mse,skipped,status\n0,3,", 0) ==
        0);
  CHECK(nlohmann::json::parse(slurp(w.dir / "s.json"))["rows"].size() == 2);
}

TEST_CASE("training is reproducible apart from wall-clock metadata") {
  Workspace w("repro");
  REQUIRE(cli({"gen-data", "--queries", "8", "--items", "15", "--seed", "1", "--out",
               w / "d.csv"})
              .code == 0);
  for (auto run : {"a", "b"}) {
    REQUIRE(cli(with({"train", "--data", w / "d.csv", "--out-dir", w / run, "--seed", "2",
                      "--C", "5"},
                     kSmallTrain))
                .code == 0);
  }
  for (auto f : {"model.ckpt", "best.ckpt", "trace.csv", "config.txt"}) {
    CHECK(slurp(w.dir / "a" / f) == slurp(w.dir / "b" / f));
  }
}

TEST_CASE("config errors exit with status 1") {
  Workspace w("errors");
  REQUIRE(cli({"gen-data", "--queries", "6", "--items", "10", "--seed", "1", "--out",
               w / "d.csv"})
              .code == 0);
  const auto none = cli(with({"train", "--data", w / "d.csv", "--out-dir", w / "r", "--mode",
                              "none", "--C", "100"},
                             kSmallTrain));
  CHECK(none.code == 1);
  CHECK(none.err.find("none") != std::string::npos);
  CHECK_FALSE(fs::exists(w.dir / "r" / "model.ckpt"));

  {
    std::ofstream f(w.dir / "bad.conf");
    f << "C = 1\nwhat = 2\n";
  }
  const auto bad = cli({"train", "--data", w / "d.csv", "--out-dir", w / "r", "--config",
                        w / "bad.conf"});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("line 2") != std::string::npos);

  CHECK(cli({"sweep", "--data", w / "d.csv", "--C", "3", "--out", w / "s.csv"}).code == 1);
  CHECK(cli({"sweep", "--data", w / "d.csv", "--C-grid", "10,0", "--out", w / "s.csv"}).code ==
        1);
  CHECK(cli({"eval", "--data", w / "missing.csv", "--model", w / "m.ckpt"}).code == 2);
}

TEST_CASE("config file values yield to flags") {
  Workspace w("precedence");
  REQUIRE(cli({"gen-data", "--queries", "6", "--items", "10", "--seed", "1", "--out",
               w / "d.csv"})
              .code == 0);
  {
    std::ofstream f(w.dir / "c.conf");
    f << "C = 1\nK = 2\n";
  }
  REQUIRE(cli(with({"train", "--data", w / "d.csv", "--out-dir", w / "r", "--config",
                    w / "c.conf", "--epochs", "1"},
                   {"--C", "7", "--dim", "2"}))
              .code == 0);
  const auto cfg = slurp(w.dir / "r" / "config.txt");
  CHECK(cfg.find("C = 7\n") != std::string::npos);
  CHECK(cfg.find("K = 2\n") != std::string::npos);
}

TEST_CASE("strict reproducibility demands explicit seeds") {
  Workspace w("strict");
  CHECK(cli({"--strict-repro", "gen-data", "--out", w / "d.csv"}).code == 1);
  CHECK(cli({"--strict-repro", "grad-check"}).code == 1);
  CHECK(cli({"--strict-repro", "gen-data", "--queries", "4", "--items", "5", "--seed", "1",
             "--out", w / "d.csv"})
            .code == 0);
}

TEST_CASE("grad-check reports each suite") {
  const auto r = cli({"grad-check", "--seed", "3"});
  CHECK(r.code == 0);
  for (auto s : {"rank_losses", "fairness", "lambda_solver"}) {
    CHECK(r.out.find(s) != std::string::npos);
  }
}

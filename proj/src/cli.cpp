#include "topkfair/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "topkfair/data.hpp"
#include "topkfair/errors.hpp"
#include "topkfair/eval.hpp"
#include "topkfair/gradcheck.hpp"
#include "topkfair/model.hpp"
#include "topkfair/optimizer.hpp"

namespace topkfair {

namespace {

namespace fs = std::filesystem;

constexpr double kGradCheckTolerance = 1e-3;

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(part);
  return out;
}

std::vector<double> parse_reals(const std::string& what, const std::string& s) {
  std::vector<double> out;
  for (const auto& p : split_commas(s)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(p, &used));
      if (used != p.size()) throw std::invalid_argument(p);
    } catch (const std::exception&) {
      throw ConfigError(what + ": '" + p + "' is not a number");
    }
  }
  if (out.empty()) throw ConfigError(what + " is empty");
  return out;
}

std::vector<std::size_t> parse_counts(const std::string& what, const std::string& s) {
  std::vector<std::size_t> out;
  for (double x : parse_reals(what, s)) {
    if (!(x >= 1.0) || x != std::floor(x)) throw ConfigError(what + " entries must be integers >= 1");
    out.push_back(static_cast<std::size_t>(x));
  }
  return out;
}

std::array<double, 3> parse_fractions(const std::string& s) {
  const auto v = parse_reals("--split", s);
  if (v.size() != 3) throw ConfigError("--split needs three fractions: train,valid,test");
  return {v[0], v[1], v[2]};
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

template <class F>
void write_file(const fs::path& path, F&& body, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  body(out);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

/// Training flags generated from the config table.
struct TrainFlags {
  std::string config;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "key = value file; flags take precedence over it");
    const TrainConfig defaults;
    for (const auto& p : config_params()) {
      options[p.key] =
          app->add_option("--" + p.key, values[p.key], p.help)->default_str(p.get(defaults));
    }
  }

  bool given(const std::string& key) const { return options.at(key)->count() > 0; }

  TrainConfig resolve() const {
    TrainConfig cfg;
    if (!config.empty()) {
      try {
        apply_config(cfg, load_config_entries(config));
      } catch (const ParseError& e) {
        throw ConfigError(config + ": " + e.what());
      }
    }
    std::map<std::string, std::string> flags;
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) flags[key] = values.at(key);
    }
    apply_config(cfg, flags);
    cfg.validate();
    return cfg;
  }
};

struct DataFlags {
  std::string data;
  std::string split = "0.8,0.1,0.1";
  std::string part = "test";

  void attach(CLI::App* app, bool with_part) {
    app->add_option("--data", data, "dataset CSV (query_id,item_id,relevance,group)")->required();
    app->add_option("--split", split, "train,valid,test item fractions per query")
        ->capture_default_str();
    if (with_part) {
      app->add_option("--part", part, "split part to use: train|valid|test|all")
          ->capture_default_str();
    }
  }

  Dataset select(const Dataset& d, std::uint64_t seed) const {
    if (part == "all") return d;
    auto parts = topkfair::split(d, parse_fractions(split), seed);
    if (part == "train") return std::move(parts.train);
    if (part == "valid") return std::move(parts.valid);
    if (part == "test") return std::move(parts.test);
    throw ConfigError("--part must be train, valid, test or all");
  }
};

void check_model_fits(const FactorizationScorer& m, const Dataset& d) {
  if (m.dims().items != d.catalog().size() || m.dims().queries < d.num_query_rows()) {
    throw ConfigError("model dimensions do not match the dataset");
  }
}

void write_eval_csv(const std::vector<EvalRow>& rows, std::ostream& out) {
  out << "K,ndcg_mean,ndcg_std,mae,mse,ndcg_queries,fairness_queries,skipped\n";
  for (const auto& r : rows) {
    out << r.K << ',' << r.ndcg_mean << ',' << r.ndcg_std << ',' << r.mae << ',' << r.mse << ','
        << r.ndcg_queries << ',' << r.fairness_queries << ',' << r.skipped << '\n';
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fairness-regularized top-K learning to rank"};
  app.name("topkfair");
  app.require_subcommand(1);
  bool strict = false;
  app.add_flag("--strict-repro", strict, "require an explicit --seed for randomized commands");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic biased dataset");
  SyntheticSpec spec;
  std::string gen_out;
  gen->add_option("--queries", spec.num_queries, "number of queries")->capture_default_str();
  gen->add_option("--items", spec.items_per_query, "items per query")->capture_default_str();
  gen->add_option("--catalog", spec.catalog_size, "catalog size (0: 3 x items)")
      ->capture_default_str();
  gen->add_option("--minority", spec.minority_fraction, "group-A fraction")->capture_default_str();
  gen->add_option("--bias", spec.bias, "quality shift of group A")->capture_default_str();
  gen->add_option("--noise", spec.noise, "label noise std")->capture_default_str();
  auto* gen_seed = gen->add_option("--seed", spec.seed, "generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "output CSV")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a model on the train part of a split");
  TrainFlags tr_flags;
  DataFlags tr_data;
  std::string tr_dir = ".";
  tr_data.attach(tr, false);
  tr_flags.attach(tr);
  tr->add_option("--out-dir", tr_dir, "directory for checkpoints, trace and metadata")
      ->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on one split part");
  DataFlags ev_data;
  std::string ev_model, ev_out, ev_json, ev_k = "50,100,200";
  EvalProtocol ev_proto;
  unsigned ev_threads = 1;
  ev_data.attach(ev, true);
  ev->add_option("--model", ev_model, "checkpoint file")->required();
  auto* ev_seed = ev->add_option("--seed", ev_proto.seed, "split and sampling seed")
                      ->capture_default_str();
  ev->add_option("--K-list", ev_k, "comma-separated cutoffs")->capture_default_str();
  ev->add_option("--relevant", ev_proto.relevant_per_query, "relevant items per query")
      ->capture_default_str();
  ev->add_option("--irrelevant", ev_proto.irrelevant_per_query, "irrelevant items per query")
      ->capture_default_str();
  ev->add_option("--threads", ev_threads, "evaluation threads (0: all cores)")
      ->capture_default_str();
  ev->add_option("--out", ev_out, "metrics CSV");
  ev->add_option("--json", ev_json, "metrics JSON");

  // sweep
  auto* sw = app.add_subcommand("sweep", "train one model per C and report the tradeoff");
  TrainFlags sw_flags;
  DataFlags sw_data;
  std::string sw_grid = "0,10,100,1000,10000", sw_k = "50,100,200", sw_out, sw_json;
  EvalProtocol sw_proto;
  unsigned sw_jobs = 1;
  sw_data.attach(sw, false);
  sw_flags.attach(sw);
  sw->add_option("--C-grid", sw_grid, "ascending comma-separated C values")->capture_default_str();
  sw->add_option("--K-list", sw_k, "evaluation cutoffs")->capture_default_str();
  sw->add_option("--relevant", sw_proto.relevant_per_query, "relevant items per query")
      ->capture_default_str();
  sw->add_option("--irrelevant", sw_proto.irrelevant_per_query, "irrelevant items per query")
      ->capture_default_str();
  sw->add_option("--jobs", sw_jobs, "parallel training runs")->capture_default_str();
  sw->add_option("--out", sw_out, "report CSV")->required();
  sw->add_option("--json", sw_json, "report JSON");

  // export-strips
  auto* ex = app.add_subcommand("export-strips", "export group-by-rank strips of the most unfair queries");
  DataFlags ex_data;
  std::string ex_model, ex_out;
  std::size_t ex_queries = 10, ex_k = 50;
  std::uint64_t ex_seed_value = 0;
  ex_data.attach(ex, true);
  ex->add_option("--model", ex_model, "checkpoint file")->required();
  auto* ex_seed = ex->add_option("--seed", ex_seed_value, "split seed")->capture_default_str();
  ex->add_option("--queries", ex_queries, "number of strips")->capture_default_str();
  ex->add_option("--K", ex_k, "cutoff for the disparity ordering")->capture_default_str();
  ex->add_option("--out", ex_out, "output prefix (.csv, _queries.csv, .ppm)")->required();

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "finite-difference checks of every analytic gradient");
  std::uint64_t gc_seed_value = 0;
  auto* gc_seed = gc->add_option("--seed", gc_seed_value, "instance seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 1;
  }

  auto require_seed = [&](CLI::Option* seed_opt) {
    if (strict && seed_opt->count() == 0) {
      throw ConfigError("--strict-repro requires an explicit --seed");
    }
  };

  try {
    if (gen->parsed()) {
      require_seed(gen_seed);
      const auto d = generate_synthetic(spec);
      save_csv(d, gen_out);
      out << "wrote " << d.num_queries() << " queries, " << d.total_pairs() << " pairs to "
          << gen_out << '\n';
    } else if (tr->parsed()) {
      require_seed(tr_flags.options.at("seed"));
      const auto cfg = tr_flags.resolve();
      const auto fractions = parse_fractions(tr_data.split);
      const auto started = utc_now();
      const auto full = load_csv(tr_data.data);
      auto parts = split(full, fractions, cfg.seed);
      TrainOptions opts;
      opts.valid = &parts.valid;
      opts.log = &err;
      const auto res = train(initial_model(full, cfg), parts.train, cfg, opts);

      const fs::path dir(tr_dir);
      fs::create_directories(dir);
      save_checkpoint(res.final_model, dir / "model.ckpt");
      save_checkpoint(res.best_model, dir / "best.ckpt");
      write_file(dir / "trace.csv", [&](std::ostream& o) { write_trace_csv(res.trace, o); });
      write_file(dir / "config.txt", [&](std::ostream& o) { write_config(cfg, o); });
      nlohmann::json meta{{"started", started},
                          {"finished", utc_now()},
                          {"seconds", res.trace.seconds},
                          {"data", tr_data.data},
                          {"split", fractions},
                          {"split_warnings", parts.warnings},
                          {"seed", cfg.seed},
                          {"steps", res.trace.z_norms.size()},
                          {"best_step", res.best_step}};
      write_file(dir / "metadata.json", [&](std::ostream& o) { o << meta.dump(2) << '\n'; });
      out << "trained " << res.trace.z_norms.size() << " steps; best validation step "
          << res.best_step << "; outputs in " << dir.string() << '\n';
    } else if (ev->parsed()) {
      require_seed(ev_seed);
      ev_proto.K_list = parse_counts("--K-list", ev_k);
      const auto full = load_csv(ev_data.data);
      const auto part = ev_data.select(full, ev_proto.seed);
      const auto model = load_checkpoint(ev_model);
      check_model_fits(model, full);
      const auto rows = evaluate(model, part, ev_proto, ev_threads);
      write_eval_csv(rows, out);
      if (!ev_out.empty()) {
        write_file(ev_out, [&](std::ostream& o) { write_eval_csv(rows, o); });
      }
      if (!ev_json.empty()) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : rows) {
          j.push_back({{"K", r.K}, {"ndcg_mean", r.ndcg_mean}, {"ndcg_std", r.ndcg_std},
                       {"mae", r.mae}, {"mse", r.mse}, {"ndcg_queries", r.ndcg_queries},
                       {"fairness_queries", r.fairness_queries}, {"skipped", r.skipped}});
        }
        write_file(ev_json, [&](std::ostream& o) { o << j.dump(2) << '\n'; });
      }
    } else if (sw->parsed()) {
      require_seed(sw_flags.options.at("seed"));
      const auto cfg = sw_flags.resolve();
      if (sw_flags.given("C")) throw ConfigError("sweep takes C values from --C-grid, not --C");
      const auto grid = parse_reals("--C-grid", sw_grid);
      sw_proto.K_list = parse_counts("--K-list", sw_k);
      sw_proto.seed = cfg.seed;
      const auto full = load_csv(sw_data.data);
      const auto parts = split(full, parse_fractions(sw_data.split), cfg.seed);
      const auto report =
          tradeoff_sweep(parts.train, &parts.valid, parts.test, cfg, grid, sw_proto, sw_jobs);
      write_file(sw_out, [&](std::ostream& o) { write_report_csv(report, o); });
      if (!sw_json.empty()) {
        write_file(sw_json, [&](std::ostream& o) { write_report_json(report, o); });
      }
      write_report_csv(report, out);
      for (const auto& r : report.rows) {
        if (r.failed) err << "run C=" << r.C << " failed: " << r.error << '\n';
      }
    } else if (ex->parsed()) {
      require_seed(ex_seed);
      const auto full = load_csv(ex_data.data);
      const auto part = ex_data.select(full, ex_seed_value);
      const auto model = load_checkpoint(ex_model);
      check_model_fits(model, full);
      StripExport files{ex_out + ".csv", ex_out + "_queries.csv", ex_out + ".ppm"};
      export_ranking_strips(model, part, ex_queries, ex_k, files);
      out << "wrote " << files.csv.string() << ", " << files.queries_csv.string() << ", "
          << files.ppm.string() << '\n';
    } else if (gc->parsed()) {
      require_seed(gc_seed);
      bool ok = true;
      for (const auto& s : run_grad_checks(gc_seed_value)) {
        out << s.name << " max_rel_error=" << s.max_rel_error << " cases=" << s.cases << '\n';
        ok = ok && s.max_rel_error <= kGradCheckTolerance;
      }
      if (!ok) {
        err << "gradient check exceeded " << kGradCheckTolerance << '\n';
        return 2;
      }
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace topkfair

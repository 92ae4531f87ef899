#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

#include "topkfair/errors.hpp"
#include "topkfair/optimizer.hpp"

namespace topkfair {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

double to_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, x);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": '" + v + "' is not a number");
  return x;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, x);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(key + ": '" + v + "' is not a nonnegative integer");
  }
  return x;
}

template <class E>
E to_enum(const std::string& key, const std::string& v,
          std::initializer_list<std::pair<const char*, E>> names) {
  std::string all;
  for (const auto& [n, e] : names) {
    if (v == n) return e;
    all += all.empty() ? n : std::string("|") + n;
  }
  throw ConfigError(key + ": '" + v + "' is not one of " + all);
}

template <class E>
std::string from_enum(E e, std::initializer_list<std::pair<const char*, E>> names) {
  for (const auto& [n, x] : names) {
    if (x == e) return n;
  }
  return "?";
}

const std::initializer_list<std::pair<const char*, RankLossKind>> kLossNames = {
    {"ndcg", RankLossKind::ndcg}, {"listnet", RankLossKind::listnet}};
const std::initializer_list<std::pair<const char*, FairnessMode>> kModeNames = {
    {"none", FairnessMode::none},
    {"full_list", FairnessMode::full_list},
    {"top_k", FairnessMode::top_k}};
const std::initializer_list<std::pair<const char*, G2Mode>> kG2Names = {
    {"simplified", G2Mode::simplified}, {"full_implicit", G2Mode::full_implicit}};
const std::initializer_list<std::pair<const char*, LrSchedule>> kScheduleNames = {
    {"constant", LrSchedule::constant}, {"step_decay", LrSchedule::step_decay}};

ConfigParam real(std::string key, std::string help, double TrainConfig::*field) {
  return {key, std::move(help),
          [key, field](TrainConfig& c, const std::string& v) { c.*field = to_double(key, v); },
          [field](const TrainConfig& c) { return fmt(c.*field); }};
}

ConfigParam count(std::string key, std::string help, std::size_t TrainConfig::*field) {
  return {key, std::move(help),
          [key, field](TrainConfig& c, const std::string& v) { c.*field = to_u64(key, v); },
          [field](const TrainConfig& c) { return std::to_string(c.*field); }};
}

ConfigParam batch(std::string key, std::string help, std::size_t BatchSizes::*field) {
  return {key, std::move(help),
          [key, field](TrainConfig& c, const std::string& v) { c.batch.*field = to_u64(key, v); },
          [field](const TrainConfig& c) { return std::to_string(c.batch.*field); }};
}

std::vector<ConfigParam> build_table() {
  std::vector<ConfigParam> t;
  t.push_back(count("K", "top-K length for the fairness term and validation NDCG@K",
                    &TrainConfig::K));
  t.push_back(real("C", "fairness weight", &TrainConfig::C));
  t.push_back({"loss", "ranking loss: ndcg|listnet",
               [](TrainConfig& c, const std::string& v) {
                 c.loss.kind = to_enum("loss", v, kLossNames);
               },
               [](const TrainConfig& c) { return from_enum(c.loss.kind, kLossNames); }});
  t.push_back({"margin", "squared-hinge margin c of the NDCG surrogate",
               [](TrainConfig& c, const std::string& v) { c.loss.margin = to_double("margin", v); },
               [](const TrainConfig& c) { return fmt(c.loss.margin); }});
  t.push_back({"mode", "fairness term: none|full_list|top_k",
               [](TrainConfig& c, const std::string& v) {
                 c.fairness_mode = to_enum("mode", v, kModeNames);
               },
               [](const TrainConfig& c) { return from_enum(c.fairness_mode, kModeNames); }});
  t.push_back({"g2_mode", "fairness gradient: simplified|full_implicit",
               [](TrainConfig& c, const std::string& v) {
                 c.g2_mode = to_enum("g2_mode", v, kG2Names);
               },
               [](const TrainConfig& c) { return from_enum(c.g2_mode, kG2Names); }});
  t.push_back(real("gamma0", "moving-average weight of the rank estimates", &TrainConfig::gamma0));
  t.push_back(real("gamma1", "moving-average weight of the group-A average", &TrainConfig::gamma1));
  t.push_back(real("gamma2", "moving-average weight of the group-B average", &TrainConfig::gamma2));
  t.push_back(real("gamma3", "moving-average weight of the list average", &TrainConfig::gamma3));
  t.push_back(real("gamma4", "moving-average weight of the threshold derivatives",
                   &TrainConfig::gamma4));
  t.push_back(real("gamma5", "momentum weight", &TrainConfig::gamma5));
  t.push_back(real("eta0", "threshold step size", &TrainConfig::eta0));
  t.push_back(real("eta1", "parameter step size", &TrainConfig::eta1));
  t.push_back(real("tau1", "softplus temperature of the threshold problem", &TrainConfig::tau1));
  t.push_back(real("tau2", "quadratic regularizer of the threshold problem", &TrainConfig::tau2));
  t.push_back(real("epsilon", "threshold offset in (0, 1)", &TrainConfig::epsilon));
  t.push_back(real("tau_psi", "temperature of the sigmoid top-K indicator", &TrainConfig::tau_psi));
  t.push_back(batch("batch_pairs", "pairs per step |B|", &BatchSizes::pairs));
  t.push_back(batch("batch_items", "items per sampled query |B_q|", &BatchSizes::query_items));
  t.push_back(batch("batch_a", "group-A items per sampled query", &BatchSizes::group_a));
  t.push_back(batch("batch_b", "group-B items per sampled query", &BatchSizes::group_b));
  t.push_back(count("epochs", "passes over the training pairs", &TrainConfig::epochs));
  t.push_back(count("pretrain_epochs", "color-blind warm-start epochs before the fairness epochs",
                    &TrainConfig::pretrain_epochs));
  t.push_back(real("pretrain_eta1", "parameter step size of the warm-start epochs (0: eta1)",
                   &TrainConfig::pretrain_eta1));
  t.push_back({"seed", "seed for initialization and sampling",
               [](TrainConfig& c, const std::string& v) { c.seed = to_u64("seed", v); },
               [](const TrainConfig& c) { return std::to_string(c.seed); }});
  t.push_back({"lr_schedule", "parameter step schedule: constant|step_decay",
               [](TrainConfig& c, const std::string& v) {
                 c.lr_schedule = to_enum("lr_schedule", v, kScheduleNames);
               },
               [](const TrainConfig& c) { return from_enum(c.lr_schedule, kScheduleNames); }});
  t.push_back(count("dim", "embedding dimension", &TrainConfig::dim));
  t.push_back(real("score_bound", "score bound B_h", &TrainConfig::score_bound));
  t.push_back(real("score_scale", "tanh input scale s", &TrainConfig::score_scale));
  t.push_back(count("log_every", "trace cadence in steps", &TrainConfig::log_every));
  return t;
}

}  // namespace

const std::vector<ConfigParam>& config_params() {
  static const std::vector<ConfigParam> table = build_table();
  return table;
}

std::map<std::string, std::string> read_config_entries(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(n, "expected key = value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    bool known = false;
    for (const auto& p : config_params()) known = known || p.key == key;
    if (!known) throw ParseError(n, "unknown key '" + key + "'");
    if (value.empty()) throw ParseError(n, "empty value for '" + key + "'");
    out[key] = value;
  }
  return out;
}

std::map<std::string, std::string> load_config_entries(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  return read_config_entries(in);
}

void apply_config(TrainConfig& cfg, const std::map<std::string, std::string>& entries) {
  for (const auto& [key, value] : entries) {
    const ConfigParam* param = nullptr;
    for (const auto& p : config_params()) {
      if (p.key == key) param = &p;
    }
    if (param == nullptr) throw ConfigError("unknown config key '" + key + "'");
    param->set(cfg, value);
  }
}

void write_config(const TrainConfig& cfg, std::ostream& out) {
  for (const auto& p : config_params()) out << p.key << " = " << p.get(cfg) << '\n';
}

}  // namespace topkfair

#include "adapool/pipeline.hpp"

#include "adapool/calibration.hpp"
#include "adapool/errors.hpp"
#include "adapool/kmeans.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

namespace adapool {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Shortest text that reads back to the same double.
std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError(key + ": '" + v + "' is not a finite number");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError(key + ": '" + v + "' is not an integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& v, F f) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + f(v[i]);
  return s;
}

const char* format_name(DataFormat f) {
  switch (f) {
    case DataFormat::Csv: return "csv";
    case DataFormat::Packed: return "packed";
    case DataFormat::Pems: return "pems";
  }
  return "?";
}

ConfigKey int_key(std::string name, std::string help, Index RunConfig::*field, Index min) {
  return {name, std::move(help),
          [=](RunConfig& c, const std::string& v) {
            const auto x = to_int(name, v);
            if (x < min) throw ConfigError(name + " must be >= " + std::to_string(min));
            c.*field = static_cast<Index>(x);
          },
          [=](const RunConfig& c) { return std::to_string(c.*field); }};
}

template <class Get>
ConfigKey train_key(std::string name, std::string help, Get get) {
  // `get` maps a TrainConfig to the referenced field.
  return {name, std::move(help),
          [=](RunConfig& c, const std::string& v) {
            auto& field = get(c.train);
            using T = std::remove_reference_t<decltype(field)>;
            if constexpr (std::is_floating_point_v<T>)
              field = to_double(name, v);
            else
              field = static_cast<T>(to_int(name, v));
          },
          [=](const RunConfig& c) {
            auto& field = get(const_cast<TrainConfig&>(c.train));
            using T = std::remove_reference_t<decltype(field)>;
            if constexpr (std::is_floating_point_v<T>)
              return num(field);
            else
              return std::to_string(field);
          }};
}

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> k;
  k.push_back({"data", "dataset path: CSV directory, MTS1 file, or wide PEMS file",
               [](RunConfig& c, const std::string& v) { c.data = v; },
               [](const RunConfig& c) { return c.data.string(); }});
  k.push_back({"format", "csv | packed | pems",
               [](RunConfig& c, const std::string& v) {
                 if (v == "csv") c.format = DataFormat::Csv;
                 else if (v == "packed") c.format = DataFormat::Packed;
                 else if (v == "pems") c.format = DataFormat::Pems;
                 else throw ConfigError("format: unknown '" + v + "'");
               },
               [](const RunConfig& c) { return std::string(format_name(c.format)); }});
  k.push_back({"header", "CSV files start with a header row",
               [](RunConfig& c, const std::string& v) { c.header = to_bool("header", v); },
               [](const RunConfig& c) { return std::string(c.header ? "true" : "false"); }});
  k.push_back(int_key("day_length", "pems: rows per daily series", &RunConfig::day_length, 1));
  k.push_back({"timestamp_column", "pems: first column is a timestamp used to group days",
               [](RunConfig& c, const std::string& v) { c.timestamp_column = to_bool("timestamp_column", v); },
               [](const RunConfig& c) { return std::string(c.timestamp_column ? "true" : "false"); }});
  for (auto [name, field] : {std::pair{"t_train", &SplitSpec::train}, std::pair{"t_val", &SplitSpec::val},
                             std::pair{"t_test", &SplitSpec::test}}) {
    std::string n = name;
    auto f = field;
    k.push_back({n, "split length (all three 0: 60/20/20 of T)",
                 [n, f](RunConfig& c, const std::string& v) {
                   const auto x = to_int(n, v);
                   if (x < 0) throw ConfigError(n + " must be >= 0");
                   c.split.*f = static_cast<Index>(x);
                 },
                 [f](const RunConfig& c) { return std::to_string(c.split.*f); }});
  }
  k.push_back({"impute", "mean | median (TRAIN statistics)",
               [](RunConfig& c, const std::string& v) {
                 if (v == "mean") c.impute = ImputeKind::Mean;
                 else if (v == "median") c.impute = ImputeKind::Median;
                 else throw ConfigError("impute: unknown '" + v + "'");
               },
               [](const RunConfig& c) { return std::string(c.impute == ImputeKind::Mean ? "mean" : "median"); }});
  k.push_back({"eps", "variance stabilizer in sigma = sqrt(var + eps)",
               [](RunConfig& c, const std::string& v) { c.eps = to_double("eps", v); },
               [](const RunConfig& c) { return num(c.eps); }});

  k.push_back(train_key("window", "input window length w", [](TrainConfig& t) -> Index& { return t.window; }));
  k.push_back(train_key("latent", "mixture size r (0: min(16, P))", [](TrainConfig& t) -> Index& { return t.latent; }));
  k.push_back(train_key("hidden", "GRU state size", [](TrainConfig& t) -> Index& { return t.hidden; }));
  k.push_back(train_key("epochs", "GLOBAL epochs (refits use half)", [](TrainConfig& t) -> int& { return t.epochs; }));
  k.push_back(train_key("prototype_epochs", "prototype epochs per outer iteration",
                        [](TrainConfig& t) -> int& { return t.prototype_epochs; }));
  k.push_back(train_key("learning_rate", "Adam step size", [](TrainConfig& t) -> double& { return t.learning_rate; }));
  k.push_back(train_key("batch_size", "windows per minibatch", [](TrainConfig& t) -> Index& { return t.batch_size; }));
  k.push_back(train_key("eta", "L2-SP anchor weight", [](TrainConfig& t) -> double& { return t.eta; }));
  k.push_back(train_key("delta", "Huber transition", [](TrainConfig& t) -> double& { return t.delta; }));
  k.push_back(train_key("clip_norm", "gradient norm clip", [](TrainConfig& t) -> double& { return t.clip_norm; }));
  k.push_back(train_key("seed", "run seed", [](TrainConfig& t) -> std::uint64_t& { return t.seed; }));
  k.push_back({"mode", "point | quantile",
               [](RunConfig& c, const std::string& v) { c.train.mode = parse_mode(v); },
               [](const RunConfig& c) { return std::string(to_string(c.train.mode)); }});
  k.push_back({"quantiles", "quantile levels (quantile mode), increasing",
               [](RunConfig& c, const std::string& v) {
                 c.train.quantiles.clear();
                 for (const auto& s : split_list(v)) c.train.quantiles.push_back(to_double("quantiles", s));
               },
               [](const RunConfig& c) { return join(c.train.quantiles, num); }});

  auto index_list = [](const std::string& name, std::vector<Index> RunConfig::*direct,
                       std::vector<Index> SelectionConfig::*nested) {
    return ConfigKey{name, "",
                     [=](RunConfig& c, const std::string& v) {
                       auto& dst = direct ? c.*direct : c.selection.*nested;
                       dst.clear();
                       for (const auto& s : split_list(v)) dst.push_back(static_cast<Index>(to_int(name, s)));
                     },
                     [=](const RunConfig& c) {
                       const auto& src = direct ? c.*direct : c.selection.*nested;
                       return join(src, [](Index x) { return std::to_string(x); });
                     }};
  };
  k.push_back(index_list("candidates", nullptr, &SelectionConfig::candidates));
  k.back().help = "candidate cluster counts";
  k.push_back({"seeds", "initialization seeds per candidate",
               [](RunConfig& c, const std::string& v) {
                 c.selection.seeds.clear();
                 for (const auto& s : split_list(v)) {
                   const auto x = to_int("seeds", s);
                   if (x < 0) throw ConfigError("seeds must be >= 0");
                   c.selection.seeds.push_back(static_cast<std::uint64_t>(x));
                 }
               },
               [](const RunConfig& c) {
                 return join(c.selection.seeds, [](std::uint64_t x) { return std::to_string(x); });
               }});
  k.push_back({"gamma", "complexity penalty in SelPen = SelAbs + gamma K / N",
               [](RunConfig& c, const std::string& v) { c.selection.gamma = to_double("gamma", v); },
               [](const RunConfig& c) { return num(c.selection.gamma); }});
  k.push_back({"max_iters", "outer iterations cap L",
               [](RunConfig& c, const std::string& v) { c.selection.max_iters = static_cast<int>(to_int("max_iters", v)); },
               [](const RunConfig& c) { return std::to_string(c.selection.max_iters); }});
  k.push_back(index_list("assign_horizons", nullptr, &SelectionConfig::assign_horizons));
  k.back().help = "horizons averaged in the reassignment cost";
  k.push_back({"init", "random_balanced | feature (OURS initialization)",
               [](RunConfig& c, const std::string& v) { c.selection.init = parse_init(v); },
               [](const RunConfig& c) { return std::string(to_string(c.selection.init)); }});
  k.push_back(int_key("k", "cluster count for the `train` subcommand", &RunConfig::fixed_k, 1));
  k.push_back(index_list("horizons", &RunConfig::horizons, nullptr));
  k.back().help = "TEST horizons";
  k.push_back({"coverage_target", "calibration coverage target",
               [](RunConfig& c, const std::string& v) { c.coverage_target = to_double("coverage_target", v); },
               [](const RunConfig& c) { return num(c.coverage_target); }});
  k.push_back({"methods", "ours, global, individual, feat_kmeans, random_balanced",
               [](RunConfig& c, const std::string& v) {
                 c.methods.clear();
                 for (const auto& s : split_list(v)) c.methods.push_back(parse_method(s));
               },
               [](const RunConfig& c) { return join(c.methods, [](Method m) { return std::string(to_string(m)); }); }});
  k.push_back(int_key("plot_series", "series in the trajectory plot data", &RunConfig::plot_series, 0));
  k.push_back({"out", "parent directory of run directories",
               [](RunConfig& c, const std::string& v) { c.out = v; },
               [](const RunConfig& c) { return c.out.string(); }});
  k.push_back({"run_id", "run directory name",
               [](RunConfig& c, const std::string& v) {
                 if (v.empty() || v.find('/') != std::string::npos) throw ConfigError("run_id must be a plain name");
                 c.run_id = v;
               },
               [](const RunConfig& c) { return c.run_id; }});
  return k;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  out << text;
}

json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("missing " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

void write_json(const fs::path& file, const json& j) { write_text(file, j.dump(2) + "\n"); }

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

Eigen::MatrixXd json_matrix(const json& j) {
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows ? static_cast<Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index k = 0; k < cols; ++k) m(i, k) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  return m;
}

Eigen::VectorXd json_vector(const json& j) {
  Eigen::VectorXd v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) v(i) = j[static_cast<std::size_t>(i)];
  return v;
}

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

MetricRow row_from_json(const json& j) {
  auto get = [&](const char* key) { return j.at(key).is_null() ? kNaN : j.at(key).get<double>(); };
  MetricRow r;
  r.method = j.at("method");
  r.horizon = j.at("horizon");
  r.k = j.at("k");
  r.mse = get("mse");
  r.mae = get("mae");
  r.pinball = get("pinball");
  r.coverage = get("coverage");
  r.width = get("width");
  r.coverage_cal = get("coverage_cal");
  r.width_cal = get("width_cal");
  r.delta_pct = get("delta_pct");
  r.ben_pct = get("ben_pct");
  r.fb_pct = get("fb_pct");
  return r;
}

json selection_json(const SelectionResult& sel) {
  json rows = json::array();
  for (const auto& r : sel.runs)
    rows.push_back({{"k", r.k},
                    {"seed", r.seed},
                    {"iterations", r.outer.assignment.iterations},
                    {"cycled", r.outer.cycled},
                    {"sel_abs", r.sel_abs},
                    {"sel_pen", r.sel_pen},
                    {"flagged", r.flags.count()},
                    {"routed_risk", r.risk.routed},
                    {"global_risk", r.risk.global}});
  return rows;
}

std::string selection_csv(const SelectionResult& sel) {
  std::string s = "k,seed,iterations,cycled,sel_abs,sel_pen,flagged,routed_risk,global_risk\n";
  for (const auto& r : sel.runs)
    s += std::to_string(r.k) + ',' + std::to_string(r.seed) + ',' + std::to_string(r.outer.assignment.iterations) +
         ',' + (r.outer.cycled ? "1" : "0") + ',' + num(r.sel_abs) + ',' + num(r.sel_pen) + ',' +
         std::to_string(r.flags.count()) + ',' + num(r.risk.routed) + ',' + num(r.risk.global) + '\n';
  return s;
}

std::vector<bool> routed_to_global(const RoutedModels& m) {
  std::vector<bool> out;
  for (Index r : m.routes()) out.push_back(r < 0);
  return out;
}

}  // namespace

// ---- configuration ---------------------------------------------------------

Index RunConfig::max_horizon() const {
  Index h = 1;
  for (Index x : horizons) h = std::max(h, x);
  for (Index x : selection.assign_horizons) h = std::max(h, x);
  return h;
}

void RunConfig::validate() const {
  train.validate();
  selection.validate();
  if (horizons.empty()) throw ConfigError("horizons must not be empty");
  for (Index h : horizons)
    if (h < 1) throw ConfigError("horizons must be >= 1");
  if (!(coverage_target > 0 && coverage_target < 1)) throw ConfigError("coverage_target must lie in (0, 1)");
  if (methods.empty()) throw ConfigError("methods must not be empty");
  if (!(eps > 0)) throw ConfigError("eps must be positive");
  const bool any = split.train || split.val || split.test;
  if (any && (!split.train || !split.val || !split.test))
    throw ConfigError("set all of t_train, t_val, t_test or none");
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

void apply_setting(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key = value, got '" + assignment + "'");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  for (const auto& k : config_keys())
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::stringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_setting(base, line);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_text(const RunConfig& cfg) {
  std::string s;
  for (const auto& k : config_keys()) s += k.name + " = " + k.get(cfg) + "\n";
  return s;
}

SplitSpec resolve_split(const RunConfig& cfg, Index length) {
  if (cfg.split.total() > 0) return cfg.split;
  SplitSpec s;
  s.train = length * 6 / 10;
  s.val = length * 2 / 10;
  s.test = length - s.train - s.val;
  return s;
}

json to_json(const Standardizer& s) {
  return {{"mu", vector_json(s.mu)},
          {"sigma", vector_json(s.sigma)},
          {"fill", vector_json(s.fill)},
          {"eps", s.eps},
          {"impute", s.impute == ImputeKind::Mean ? "mean" : "median"}};
}

Standardizer standardizer_from_json(const json& j) {
  Standardizer s;
  s.mu = json_vector(j.at("mu"));
  s.sigma = json_vector(j.at("sigma"));
  s.fill = json_vector(j.at("fill"));
  s.eps = j.at("eps");
  s.impute = j.at("impute") == "mean" ? ImputeKind::Mean : ImputeKind::Median;
  return s;
}

json to_json(const MetricRow& r, bool quantile) {
  auto q = [&](double v) { return quantile ? nullable(v) : json(nullptr); };
  return {{"method", r.method},
          {"horizon", r.horizon},
          {"k", r.k},
          {"mse", r.mse},
          {"mae", r.mae},
          {"pinball", q(r.pinball)},
          {"coverage", q(r.coverage)},
          {"width", q(r.width)},
          {"coverage_cal", q(r.coverage_cal)},
          {"width_cal", q(r.width_cal)},
          {"delta_pct", nullable(r.delta_pct)},
          {"ben_pct", r.ben_pct},
          {"fb_pct", r.fb_pct}};
}

MetricRow paper_scaled(MetricRow row) {
  row.mse *= 100;
  row.mae *= 100;
  row.pinball *= 100;
  return row;
}

// ---- run directory ---------------------------------------------------------

Run::Run(RunConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (fs::exists(path("manifest.json"))) manifest_ = read_json(path("manifest.json"));
}

json Run::load_manifest(const fs::path& dir) { return read_json(dir / "manifest.json"); }

void Run::save_manifest() const { write_json(path("manifest.json"), manifest_); }

void Run::require_stage(const char* stage) const {
  if (manifest_.is_null() || !manifest_.contains(stage))
    throw ConfigError(std::string("run '") + cfg_.run_id + "' has no '" + stage + "' stage yet");
}

void Run::merge_audit(const AccessAudit& audit) {
  json& log = manifest_["audit"];
  if (log.is_null()) log = json::array();
  for (const auto& [phase, counts] : audit.entries())
    log.push_back({{"phase", phase}, {"train", counts[0]}, {"val", counts[1]}, {"test", counts[2]}});
}

PreparedData Run::load_prepared() const {
  require_stage("prepare");
  MtsDataset ds = read_packed(path("prepared.mts"));
  ds.names = manifest_["prepare"]["names"].get<std::vector<std::string>>();
  const auto& sp = manifest_["prepare"]["split"];
  return PreparedData(std::move(ds), SplitSpec{sp.at("train"), sp.at("val"), sp.at("test")});
}

void Run::prepare() {
  if (!manifest_.is_null() && manifest_.value("test_used", false))
    throw ProtocolError("run '" + cfg_.run_id + "' already used TEST; choose a new run_id");
  if (cfg_.data.empty()) throw ConfigError("no dataset path (key 'data')");
  MtsDataset raw = cfg_.format == DataFormat::Pems
                       ? load_pems_wide(cfg_.data, cfg_.day_length, cfg_.timestamp_column, {cfg_.header, ','})
                       : load_dataset(cfg_.data, cfg_.format, {cfg_.header, ','});
  const SplitSpec spec = resolve_split(cfg_, raw.length());
  split(raw, spec, cfg_.train.window + cfg_.max_horizon());
  auto [stdz, prepared] = fit_impute_standardize(raw, spec, cfg_.eps, cfg_.impute);

  fs::create_directories(cfg_.run_dir() / "checkpoints");
  write_json(path("standardizer.json"), to_json(stdz));
  write_packed(prepared, path("prepared.mts"));
  write_text(path("config.txt"), config_text(cfg_));

  manifest_ = json::object();
  manifest_["run_id"] = cfg_.run_id;
  manifest_["config"] = config_text(cfg_);
  manifest_["seed"] = cfg_.train.seed;
  manifest_["test_used"] = false;
  manifest_["stages"] = json::array({"prepare"});
  manifest_["audit"] = json::array();
  manifest_["prepare"] = {{"N", raw.num_series()},
                          {"T", raw.length()},
                          {"P", raw.components()},
                          {"split", {{"train", spec.train}, {"val", spec.val}, {"test", spec.test}}},
                          {"standardizer", "standardizer.json"},
                          {"data", "prepared.mts"},
                          {"names", raw.names},
                          {"features", matrix_json(series_features(raw, spec.train))}};
  save_manifest();
}

namespace {

void save_models(const RoutedModels& m, const fs::path& dir, const std::string& prefix, const TrainConfig& cfg,
                 json& entry) {
  const CheckpointInfo info{cfg.window, cfg.mode};
  json files = json::array();
  for (std::size_t k = 0; k < m.prototypes.size(); ++k) {
    const std::string rel = "checkpoints/" + prefix + "_" + std::to_string(k) + ".pcm";
    save_checkpoint(dir / rel, m.prototypes[k], info);
    files.push_back(rel);
  }
  const std::string g = "checkpoints/" + prefix + "_global.pcm";
  save_checkpoint(dir / g, m.global, info);
  entry["global"] = g;
  entry["prototypes"] = files;
}

RoutedModels load_models(const json& method, const json& files, const fs::path& dir) {
  RoutedModels m;
  m.global = load_checkpoint(dir / files.at("global").get<std::string>());
  for (const auto& f : files.at("prototypes")) m.prototypes.push_back(load_checkpoint(dir / f.get<std::string>()));
  m.labels = method.at("labels").get<std::vector<Index>>();
  m.flags.flagged = method.at("flags").get<std::vector<bool>>();
  m.flags.frozen = true;
  return m;
}

}  // namespace

void Run::select(bool sweep) {
  require_stage("prepare");
  if (manifest_.value("test_used", false))
    throw ProtocolError("run '" + cfg_.run_id + "' already used TEST; choose a new run_id");
  PreparedData data = load_prepared();
  auto& audit = data.audit();

  SelectionConfig sel = cfg_.selection;
  if (!sweep) {
    if (cfg_.fixed_k > data.num_series()) throw ConfigError("k exceeds the number of series");
    sel.candidates = {cfg_.fixed_k};
    sel.seeds = {cfg_.selection.seeds.front()};
  }
  const Eigen::MatrixXd features = standardize_columns(json_matrix(manifest_["prepare"]["features"]));

  audit.set_phase("global");
  const ParamSet global = fit_global(data, cfg_.train);
  save_checkpoint(path("checkpoints/global.pcm"), global, {cfg_.train.window, cfg_.train.mode});

  json methods = json::object();
  for (Method method : cfg_.methods) {
    const std::string name = to_string(method);
    audit.set_phase("select:" + name);
    const MethodFit fit = select_method(method, global, data, sel, cfg_.train, &features);
    json entry;
    entry["labels"] = fit.selected.labels;
    entry["flags"] = fit.selected.flags.flagged;
    entry["routes"] = fit.selected.routes();
    entry["k"] = static_cast<Index>(fit.selected.prototypes.size());
    if (fit.selection) {
      const auto& best = fit.selection->chosen();
      entry["seed"] = best.seed;
      entry["sel_abs"] = best.sel_abs;
      entry["sel_pen"] = best.sel_pen;
      entry["cluster_loss"] = best.flags.cluster_loss;
      entry["global_loss"] = best.flags.global_loss;
      entry["selection"] = selection_json(*fit.selection);
      json traces = json::array();
      for (const auto& r : fit.selection->runs)
        traces.push_back({{"k", r.k}, {"seed", r.seed}, {"labels", r.outer.trace}, {"cost", r.outer.trace_cost}});
      entry["traces"] = traces;
      write_text(path("selection_" + name + ".csv"), selection_csv(*fit.selection));
    }
    json files;
    save_models(fit.selected, cfg_.run_dir(), name + "_selected", cfg_.train, files);
    entry["selected_checkpoints"] = files;
    methods[name] = entry;
  }
  manifest_["select"] = {{"sweep", sweep}, {"global", "checkpoints/global.pcm"}, {"methods", methods}};
  manifest_["stages"].push_back(sweep ? "select-k" : "train");
  merge_audit(audit);
  save_manifest();
}

std::vector<MetricRow> Run::evaluate() {
  require_stage("select");
  if (manifest_.value("test_used", false))
    throw ProtocolError("TEST was already evaluated for run '" + cfg_.run_id + "'");
  for (const auto& e : manifest_["audit"])
    if (e.at("test").get<std::uint64_t>() != 0)
      throw ProtocolError("audit shows TEST reads before evaluation (phase " + e.at("phase").get<std::string>() + ")");

  PreparedData data = load_prepared();
  auto& audit = data.audit();
  const Index n = data.num_series();
  const bool quantile = cfg_.train.mode == ForecastMode::Quantile;
  const ParamSet global = load_checkpoint(path(manifest_["select"]["global"].get<std::string>()));

  // Refit (TRAIN+VAL) and calibration (VAL) for every method before TEST opens.
  struct Prepared {
    std::string name;
    RoutedModels final;
    std::optional<CalibrationTable> calibration;
  };
  std::vector<Prepared> methods;
  json& mj = manifest_["select"]["methods"];
  for (auto it = mj.begin(); it != mj.end(); ++it) {
    const Method method = parse_method(it.key());
    const RoutedModels selected = load_models(it.value(), it.value().at("selected_checkpoints"), cfg_.run_dir());
    audit.set_phase("refit:" + it.key());
    Prepared p{it.key(), refit_method(method, selected, data, cfg_.train), std::nullopt};
    json files;
    save_models(p.final, cfg_.run_dir(), it.key() + "_final", cfg_.train, files);
    it.value()["final_checkpoints"] = files;
    if (quantile) {
      audit.set_phase("calibrate:" + it.key());
      p.calibration = calibrate(routed_interval_streams(selected, data, cfg_.horizons, cfg_.train),
                                cfg_.coverage_target);
      it.value()["calibration"] = {{"target", p.calibration->target},
                                   {"horizons", p.calibration->horizons},
                                   {"scale", p.calibration->scale},
                                   {"val_coverage", p.calibration->val_coverage},
                                   {"attained", p.calibration->attained},
                                   {"warnings", p.calibration->warnings}};
    }
    methods.push_back(std::move(p));
  }
  audit.set_phase("refit:reference");
  const RoutedModels reference = refit_trainval(global_only(global, n), data, cfg_.train);

  // Single-use TEST: the marker is persisted before the first TEST read.
  manifest_["test_used"] = true;
  merge_audit(audit);
  audit.clear();
  save_manifest();

  audit.set_phase("test");
  const auto reference_scores = evaluate_routed(reference, data, SplitTag::Test, cfg_.horizons, cfg_.train);
  std::vector<MetricRow> rows;
  std::vector<std::vector<std::vector<SeriesMetrics>>> per_method;
  for (const auto& p : methods) {
    const auto scores = evaluate_routed(p.final, data, SplitTag::Test, cfg_.horizons, cfg_.train,
                                        p.calibration ? &*p.calibration : nullptr);
    const Index k = p.name == "individual" ? n : static_cast<Index>(p.final.prototypes.size());
    for (std::size_t j = 0; j < cfg_.horizons.size(); ++j)
      rows.push_back(summarize(p.name, cfg_.horizons[j], k, scores[j], reference_scores[j],
                               routed_to_global(p.final)));
    per_method.push_back(scores);
  }

  // Reports.
  json report = {{"run_id", cfg_.run_id}, {"mode", to_string(cfg_.train.mode)}, {"rows", json::array()}};
  for (const auto& r : rows) report["rows"].push_back(to_json(r, quantile));
  write_json(path("report.json"), report);
  {
    std::ofstream csv(path("report.csv"));
    std::vector<std::pair<std::string, MetricRow>> tagged;
    for (const auto& r : rows) tagged.emplace_back(cfg_.run_id, r);
    write_report_csv(csv, tagged, quantile);
  }

  // Plot data: per-series TEST MSE per horizon, and h = 1 trajectories on the raw scale.
  fs::create_directories(path("plots"));
  for (std::size_t j = 0; j < cfg_.horizons.size(); ++j) {
    std::string s = "series,name";
    for (const auto& p : methods) s += "," + p.name;
    s += "\n";
    for (Index i = 0; i < n; ++i) {
      s += std::to_string(i) + "," + data.names()[static_cast<std::size_t>(i)];
      for (const auto& m : per_method) s += "," + num(m[j][static_cast<std::size_t>(i)].mse);
      s += "\n";
    }
    write_text(path("plots/errors_h" + std::to_string(cfg_.horizons[j]) + ".csv"), s);
  }
  {
    const Standardizer stdz = standardizer_from_json(read_json(path("standardizer.json")));
    const Index shown = std::min(cfg_.plot_series, n);
    const auto first_end = enumerate_windows(data.split_spec(), n, SplitTag::Test, cfg_.train.window, 1).first_end;
    std::vector<HorizonForecast> fcs;
    for (const auto& p : methods) fcs.push_back(routed_forecast(p.final, data, SplitTag::Test, 1, cfg_.train));
    std::string s = "series,name,t,component,target";
    for (const auto& p : methods) {
      s += "," + p.name;
      if (quantile) s += "," + p.name + "_lower," + p.name + "_upper";
    }
    s += "\n";
    for (Index i = 0; i < shown; ++i) {
      std::vector<Index> cols;
      for (std::size_t c = 0; c < fcs[0].series.size(); ++c)
        if (fcs[0].series[c] == i) cols.push_back(static_cast<Index>(c));
      auto raw = [&](const Eigen::MatrixXd& m, Index c) { return stdz.inverse(m.col(c).transpose()); };
      for (std::size_t w = 0; w < cols.size(); ++w) {
        const Index t = first_end + static_cast<Index>(w) + 1;
        const Eigen::MatrixXd target = raw(fcs[0].targets, cols[w]);
        std::vector<Eigen::MatrixXd> point, lo, hi;
        for (const auto& fc : fcs) {
          point.push_back(raw(fc.point, cols[w]));
          if (quantile) {
            lo.push_back(raw(fc.quantiles.front(), cols[w]));
            hi.push_back(raw(fc.quantiles.back(), cols[w]));
          }
        }
        for (Index p = 0; p < data.components(); ++p) {
          s += std::to_string(i) + "," + data.names()[static_cast<std::size_t>(i)] + "," + std::to_string(t) + "," +
               std::to_string(p) + "," + num(target(0, p));
          for (std::size_t m = 0; m < fcs.size(); ++m) {
            s += "," + num(point[m](0, p));
            if (quantile) s += "," + num(lo[m](0, p)) + "," + num(hi[m](0, p));
          }
          s += "\n";
        }
      }
    }
    write_text(path("plots/trajectory_h1.csv"), s);
  }

  manifest_["evaluate"] = {{"report", "report.json"}, {"csv", "report.csv"}};
  manifest_["stages"].push_back("evaluate");
  merge_audit(audit);
  save_manifest();
  return rows;
}

std::vector<NewSeriesRoute> Run::forecast_new(const Eigen::MatrixXd& raw_segment) {
  require_stage("select");
  const Standardizer stdz = standardizer_from_json(read_json(path("standardizer.json")));
  if (raw_segment.cols() != stdz.mu.size())
    throw DataError("segment has " + std::to_string(raw_segment.cols()) + " components, expected " +
                    std::to_string(stdz.mu.size()));
  Eigen::MatrixXd seg = raw_segment;
  stdz.transform(seg);

  std::vector<NewSeriesRoute> out;
  const json& mj = manifest_["select"]["methods"];
  for (auto it = mj.begin(); it != mj.end(); ++it) {
    const bool refit = it.value().contains("final_checkpoints");
    const RoutedModels models = load_models(
        it.value(), it.value().at(refit ? "final_checkpoints" : "selected_checkpoints"), cfg_.run_dir());
    NewSeriesRoute r;
    r.method = it.key();
    r.route = assign_new_series(seg, models, cfg_.train, &r.losses);
    out.push_back(std::move(r));
  }
  return out;
}

// ---- reports ---------------------------------------------------------------

std::vector<std::pair<std::string, MetricRow>> merge_reports(const std::vector<fs::path>& dirs, bool* quantile) {
  std::vector<std::pair<std::string, MetricRow>> rows;
  bool any_quantile = false;
  for (const auto& d : dirs) {
    const json report = read_json(d / "report.json");
    any_quantile = any_quantile || report.at("mode") == "quantile";
    for (const auto& r : report.at("rows")) rows.emplace_back(report.at("run_id"), row_from_json(r));
  }
  if (quantile) *quantile = any_quantile;
  return rows;
}

void write_report_csv(std::ostream& out, const std::vector<std::pair<std::string, MetricRow>>& rows,
                      bool quantile) {
  out << "run_id,method,horizon,k,mse,mae";
  if (quantile) out << ",pinball,coverage,width,coverage_cal,width_cal";
  out << ",delta_pct,ben_pct,fb_pct\n";
  auto cell = [](double v) { return std::isfinite(v) ? num(v) : std::string(); };
  for (const auto& [run, r] : rows) {
    out << run << ',' << r.method << ',' << r.horizon << ',' << r.k << ',' << num(r.mse) << ',' << num(r.mae);
    if (quantile)
      out << ',' << cell(r.pinball) << ',' << cell(r.coverage) << ',' << cell(r.width) << ','
          << cell(r.coverage_cal) << ',' << cell(r.width_cal);
    out << ',' << cell(r.delta_pct) << ',' << cell(r.ben_pct) << ',' << cell(r.fb_pct) << '\n';
  }
}

}  // namespace adapool

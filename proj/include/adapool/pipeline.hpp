#pragma once

#include "adapool/baselines.hpp"
#include "adapool/dataset.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace adapool {

/// Everything a run needs; read from a plain `key = value` file.
struct RunConfig {
  std::filesystem::path data;
  DataFormat format = DataFormat::Csv;
  bool header = false;
  Index day_length = 288;
  bool timestamp_column = false;

  SplitSpec split;  // all zero: 60/20/20 of T
  ImputeKind impute = ImputeKind::Mean;
  double eps = 1e-8;

  TrainConfig train;
  SelectionConfig selection;
  Index fixed_k = 3;  // `train` subcommand

  std::vector<Index> horizons{1, 3, 6};
  double coverage_target = 0.8;
  std::vector<Method> methods{Method::Ours, Method::Global, Method::Individual, Method::FeatKmeans,
                              Method::RandomBalanced};
  Index plot_series = 4;

  std::filesystem::path out = "runs";
  std::string run_id = "run";

  std::filesystem::path run_dir() const { return out / run_id; }
  Index max_horizon() const;
  void validate() const;
};

/// One documented configuration key.
struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<ConfigKey>& config_keys();

/// Applies one `key=value` assignment; unknown keys and bad values throw ConfigError.
void apply_setting(RunConfig& cfg, const std::string& assignment);

/// Parses a config file body: `key = value` lines, `#` comments, blank lines.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& file);

/// Normalized `key = value` dump of every key; parses back to the same config.
std::string config_text(const RunConfig& cfg);

/// Explicit split or the 60/20/20 default for a series of length T.
SplitSpec resolve_split(const RunConfig& cfg, Index length);

nlohmann::json to_json(const Standardizer& s);
Standardizer standardizer_from_json(const nlohmann::json& j);

nlohmann::json to_json(const MetricRow& row, bool quantile);
/// Multiplies the loss columns (MSE, MAE, pinball) by 100.
MetricRow paper_scaled(MetricRow row);

/// Routing decision for a new series.
struct NewSeriesRoute {
  std::string method;
  Index route = -1;             // -1: GLOBAL
  std::vector<double> losses;   // GLOBAL first, then each prototype
};

/**
 * One run directory: prepared data, checkpoints, manifest and reports.
 * Every subcommand reloads what the earlier ones persisted.
 */
class Run {
 public:
  explicit Run(RunConfig cfg);

  const RunConfig& config() const { return cfg_; }
  const nlohmann::json& manifest() const { return manifest_; }

  /// Split, impute and standardize; persists the Standardizer and the prepared tensor.
  void prepare();
  /// Fits GLOBAL and each method (sweep over candidates, or only `fixed_k`).
  void select(bool sweep);
  /// Refit on TRAIN+VAL, calibrate on VAL, then the single TEST pass.
  std::vector<MetricRow> evaluate();
  /// Routes a raw-scale segment (rows are time) with the latest frozen models.
  std::vector<NewSeriesRoute> forecast_new(const Eigen::MatrixXd& raw_segment);

  static nlohmann::json load_manifest(const std::filesystem::path& dir);

 private:
  PreparedData load_prepared() const;
  void save_manifest() const;
  void merge_audit(const AccessAudit& audit);
  void require_stage(const char* stage) const;
  std::filesystem::path path(const std::string& rel) const { return cfg_.run_dir() / rel; }

  RunConfig cfg_;
  nlohmann::json manifest_;
};

/// Reads `report.json` from each run directory and returns every row tagged with its run id.
std::vector<std::pair<std::string, MetricRow>> merge_reports(const std::vector<std::filesystem::path>& dirs,
                                                             bool* quantile);
void write_report_csv(std::ostream& out, const std::vector<std::pair<std::string, MetricRow>>& rows,
                      bool quantile);

}  // namespace adapool

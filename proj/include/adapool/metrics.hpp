#pragma once

#include "adapool/dataset.hpp"
#include "adapool/losses.hpp"
#include "adapool/model.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace adapool {

/**
 * Forecasts of one model for a set of series at one horizon. `point` holds the
 * point forecast (the median level in quantile mode); `quantiles` is empty in
 * point mode. Columns follow `series` (series-major, chronological).
 */
struct HorizonForecast {
  Index horizon = 0;
  Eigen::MatrixXd point;
  std::vector<Eigen::MatrixXd> quantiles;
  Eigen::MatrixXd targets;
  std::vector<Index> series;
};

/// Rolls the model out over every window of `series` in the tagged region.
HorizonForecast forecast_split(const ParamSet& params, const PreparedData& data,
                               std::span<const Index> series, SplitTag tag, Index h,
                               const TrainConfig& cfg);

/**
 * Same as calling forecast_split for every horizon, but one recursive rollout
 * over the origins of the smallest horizon serves all of them.
 */
std::vector<HorizonForecast> forecast_horizons(const ParamSet& params, const PreparedData& data,
                                               std::span<const Index> series, SplitTag tag,
                                               std::span<const Index> horizons, const TrainConfig& cfg);

/**
 * Mean pointwise loss per requested series (same order as `series`);
 * std::nullopt where the series has no windows. Pinball requires quantiles;
 * the other kinds score the point forecast.
 */
std::vector<std::optional<double>> per_series_loss(const HorizonForecast& fc,
                                                   std::span<const Index> series, LossKind kind,
                                                   const TrainConfig& cfg);

/// Mean loss of one model on series i, split `tag`, horizon h; nullopt if no windows.
std::optional<double> split_mean_loss(const ParamSet& params, const PreparedData& data, Index series,
                                      SplitTag tag, Index h, LossKind kind, const TrainConfig& cfg);

/// Mean of the defined entries; nullopt when none are defined.
std::optional<double> mean_defined(std::span<const std::optional<double>> values);

/// TEST scores of one series at one horizon (averaged over windows and components).
struct SeriesMetrics {
  double mse = 0.0;
  double mae = 0.0;
  double pinball = 0.0;
  double coverage = 0.0;
  double width = 0.0;
  double coverage_cal = 0.0;
  double width_cal = 0.0;
  Index windows = 0;
};

/// Interval bounds [lower, upper] around `median`; all P x n.
struct IntervalStream {
  Eigen::MatrixXd median;
  Eigen::MatrixXd lower;
  Eigen::MatrixXd upper;
  Eigen::MatrixXd targets;
};

/// Fraction of entries of `targets` inside [lower, upper].
double coverage(const Eigen::MatrixXd& targets, const Eigen::MatrixXd& lower,
                const Eigen::MatrixXd& upper);
/// Mean of upper - lower.
double mean_width(const Eigen::MatrixXd& lower, const Eigen::MatrixXd& upper);

/// Scores every series in `fc`. Interval metrics use the outermost quantile
/// levels, and `scale` (when set) applies the calibrated inflation as well.
std::vector<SeriesMetrics> score_series(const HorizonForecast& fc, std::span<const Index> series,
                                        const TrainConfig& cfg, std::optional<double> scale);

/// 100 (global - method) / global.
double relative_gain(double global_mse, double method_mse);
/// Percentage of series whose method MSE is strictly below GLOBAL's.
double benefit_fraction(std::span<const SeriesMetrics> method, std::span<const SeriesMetrics> global);
/// Percentage of series flagged as routed to GLOBAL.
double fallback_fraction(const std::vector<bool>& routed_to_global);

/// One row of the comparison table (method x horizon).
struct MetricRow {
  std::string method;
  Index horizon = 0;
  Index k = 0;
  double mse = 0.0;
  double mae = 0.0;
  double pinball = 0.0;
  double coverage = 0.0;
  double width = 0.0;
  double coverage_cal = 0.0;
  double width_cal = 0.0;
  double delta_pct = 0.0;
  double ben_pct = 0.0;
  double fb_pct = 0.0;
};

/// Averages per-series scores and computes the GLOBAL-relative columns.
MetricRow summarize(const std::string& method, Index horizon, Index k,
                    std::span<const SeriesMetrics> scores, std::span<const SeriesMetrics> global,
                    const std::vector<bool>& routed_to_global);

}  // namespace adapool

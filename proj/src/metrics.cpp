#include "adapool/metrics.hpp"

#include "adapool/calibration.hpp"
#include "adapool/errors.hpp"

#include <algorithm>
#include <cmath>

namespace adapool {

HorizonForecast forecast_split(const ParamSet& params, const PreparedData& data,
                               std::span<const Index> series, SplitTag tag, Index h,
                               const TrainConfig& cfg) {
  HorizonForecast fc;
  fc.horizon = h;
  const auto index = enumerate_windows(data.split_spec(), data.num_series(), tag, cfg.window, h);
  const auto refs = data.refs(index, series);
  if (refs.empty()) {
    fc.point.resize(data.components(), 0);
    fc.targets.resize(data.components(), 0);
    return fc;
  }
  WindowBatch batch = data.gather(refs, cfg.window, h);
  fc.targets = std::move(batch.targets);
  fc.series = std::move(batch.series);
  if (cfg.mode == ForecastMode::Point) {
    fc.point = rollout_point(params, std::move(batch.steps), h);
  } else {
    const auto med = median_level(cfg.quantiles);
    QuantileForecast fan = rollout_quantiles(params, std::move(batch.steps), h, med);
    fc.point = fan.values[med];
    fc.quantiles = std::move(fan.values);
  }
  return fc;
}

std::vector<HorizonForecast> forecast_horizons(const ParamSet& params, const PreparedData& data,
                                               std::span<const Index> series, SplitTag tag,
                                               std::span<const Index> horizons, const TrainConfig& cfg) {
  if (horizons.empty()) return {};
  const Index hmin = *std::min_element(horizons.begin(), horizons.end());
  const Index hmax = *std::max_element(horizons.begin(), horizons.end());
  if (hmin < 1) throw ConfigError("horizons must be >= 1");
  const auto& spec = data.split_spec();
  const auto base = enumerate_windows(spec, data.num_series(), tag, cfg.window, hmin);
  const auto base_refs = data.refs(base, series);

  std::vector<HorizonForecast> out(horizons.size());
  // Columns of horizon h: the first per_series(h) origins of each series block.
  std::vector<std::vector<Index>> cols(horizons.size());
  for (std::size_t j = 0; j < horizons.size(); ++j) {
    const auto index = enumerate_windows(spec, data.num_series(), tag, cfg.window, horizons[j]);
    const auto refs = data.refs(index, series);
    auto& fc = out[j];
    fc.horizon = horizons[j];
    fc.targets = refs.empty() ? Eigen::MatrixXd(data.components(), 0) : data.targets(refs, horizons[j]);
    fc.point.resize(data.components(), 0);
    for (const auto& r : refs) fc.series.push_back(r.series);
    const Index per = index.empty() ? 0 : index.per_series();
    for (std::size_t b = 0; b < series.size(); ++b)
      for (Index c = 0; c < per; ++c) cols[j].push_back(static_cast<Index>(b) * base.per_series() + c);
  }
  if (base_refs.empty()) return out;

  StepBatch steps = data.gather(base_refs, cfg.window, 0).steps;
  const bool quantile = cfg.mode == ForecastMode::Quantile;
  const auto med = quantile ? median_level(cfg.quantiles) : 0;
  for (Index k = 1; k <= hmax; ++k) {
    Eigen::MatrixXd feed;
    QuantileForecast fan;
    if (quantile) {
      fan = forward_quantiles(params, steps);
      feed = fan.values[med];
    } else {
      feed = forward_point(params, steps);
    }
    for (std::size_t j = 0; j < horizons.size(); ++j) {
      if (horizons[j] != k) continue;
      out[j].point = feed(Eigen::all, cols[j]);
      if (quantile)
        for (const auto& v : fan.values) out[j].quantiles.push_back(v(Eigen::all, cols[j]));
    }
    if (k == hmax) break;
    steps.erase(steps.begin());
    steps.push_back(std::move(feed));
  }
  return out;
}

namespace {

/// Maps each requested series to its position, and groups columns by series.
template <typename PerColumn>
std::vector<std::optional<double>> reduce_by_series(const HorizonForecast& fc,
                                                    std::span<const Index> series, PerColumn&& f) {
  std::vector<std::optional<double>> out(series.size());
  std::vector<double> sum(series.size(), 0.0);
  std::vector<Index> count(series.size(), 0);
  std::size_t pos = 0;
  for (Index c = 0; c < static_cast<Index>(fc.series.size()); ++c) {
    while (pos < series.size() && series[pos] != fc.series[static_cast<std::size_t>(c)]) ++pos;
    if (pos == series.size()) throw ConfigError("forecast columns do not follow the series order");
    sum[pos] += f(c);
    ++count[pos];
  }
  for (std::size_t k = 0; k < series.size(); ++k)
    if (count[k] > 0) out[k] = sum[k] / static_cast<double>(count[k]);
  return out;
}

}  // namespace

std::vector<std::optional<double>> per_series_loss(const HorizonForecast& fc,
                                                   std::span<const Index> series, LossKind kind,
                                                   const TrainConfig& cfg) {
  if (kind == LossKind::Pinball) {
    if (fc.quantiles.empty() && !fc.series.empty())
      throw ConfigError("pinball loss needs a quantile forecast");
    Eigen::VectorXd losses = fc.series.empty() ? Eigen::VectorXd()
                                               : window_losses(QuantileForecast{{}, fc.quantiles},
                                                               fc.targets, cfg.quantiles);
    return reduce_by_series(fc, series, [&](Index c) { return losses(c); });
  }
  Eigen::VectorXd losses = fc.series.empty() ? Eigen::VectorXd()
                                             : window_losses(fc.point, fc.targets, kind, cfg.delta);
  return reduce_by_series(fc, series, [&](Index c) { return losses(c); });
}

std::optional<double> split_mean_loss(const ParamSet& params, const PreparedData& data, Index series,
                                      SplitTag tag, Index h, LossKind kind, const TrainConfig& cfg) {
  const Index one[] = {series};
  auto fc = forecast_split(params, data, one, tag, h, cfg);
  return per_series_loss(fc, one, kind, cfg).front();
}

std::optional<double> mean_defined(std::span<const std::optional<double>> values) {
  double sum = 0.0;
  Index n = 0;
  for (const auto& v : values)
    if (v) {
      sum += *v;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

double coverage(const Eigen::MatrixXd& targets, const Eigen::MatrixXd& lower,
                const Eigen::MatrixXd& upper) {
  if (targets.size() == 0) return 0.0;
  const auto inside = (targets.array() >= lower.array()) && (targets.array() <= upper.array());
  return static_cast<double>(inside.count()) / static_cast<double>(targets.size());
}

double mean_width(const Eigen::MatrixXd& lower, const Eigen::MatrixXd& upper) {
  if (lower.size() == 0) return 0.0;
  return (upper - lower).mean();
}

std::vector<SeriesMetrics> score_series(const HorizonForecast& fc, std::span<const Index> series,
                                        const TrainConfig& cfg, std::optional<double> scale) {
  std::vector<SeriesMetrics> out(series.size());
  const Index cols = static_cast<Index>(fc.series.size());
  const bool quantile = !fc.quantiles.empty();
  Eigen::VectorXd pin;
  if (quantile && cols > 0) pin = window_losses(QuantileForecast{{}, fc.quantiles}, fc.targets, cfg.quantiles);
  std::size_t pos = 0;
  for (Index c = 0; c < cols; ++c) {
    while (pos < series.size() && series[pos] != fc.series[static_cast<std::size_t>(c)]) ++pos;
    if (pos == series.size()) throw ConfigError("forecast columns do not follow the series order");
    auto& m = out[pos];
    const auto target = fc.targets.col(c);
    m.mse += squared_error(fc.point.col(c), target);
    m.mae += absolute_error(fc.point.col(c), target);
    if (quantile) {
      m.pinball += pin(c);
      const Eigen::MatrixXd lo = fc.quantiles.front().col(c);
      const Eigen::MatrixXd hi = fc.quantiles.back().col(c);
      const Eigen::MatrixXd tg = target;
      m.coverage += coverage(tg, lo, hi);
      m.width += mean_width(lo, hi);
      if (scale) {
        auto [l2, u2] = apply_calibration(fc.point.col(c), lo, hi, *scale);
        m.coverage_cal += coverage(tg, l2, u2);
        m.width_cal += mean_width(l2, u2);
      }
    }
    ++m.windows;
  }
  for (auto& m : out) {
    if (m.windows == 0) continue;
    const double n = static_cast<double>(m.windows);
    m.mse /= n;
    m.mae /= n;
    m.pinball /= n;
    m.coverage /= n;
    m.width /= n;
    m.coverage_cal /= n;
    m.width_cal /= n;
  }
  return out;
}

double relative_gain(double global_mse, double method_mse) {
  return 100.0 * (global_mse - method_mse) / global_mse;
}

double benefit_fraction(std::span<const SeriesMetrics> method, std::span<const SeriesMetrics> global) {
  if (method.size() != global.size()) throw ConfigError("benefit fraction: length mismatch");
  if (method.empty()) return 0.0;
  std::size_t better = 0;
  for (std::size_t i = 0; i < method.size(); ++i)
    if (method[i].mse < global[i].mse) ++better;
  return 100.0 * static_cast<double>(better) / static_cast<double>(method.size());
}

double fallback_fraction(const std::vector<bool>& routed_to_global) {
  if (routed_to_global.empty()) return 0.0;
  std::size_t n = 0;
  for (bool b : routed_to_global) n += b ? 1 : 0;
  return 100.0 * static_cast<double>(n) / static_cast<double>(routed_to_global.size());
}

MetricRow summarize(const std::string& method, Index horizon, Index k,
                    std::span<const SeriesMetrics> scores, std::span<const SeriesMetrics> global,
                    const std::vector<bool>& routed_to_global) {
  if (scores.size() != global.size()) throw ConfigError("summarize: length mismatch");
  MetricRow row;
  row.method = method;
  row.horizon = horizon;
  row.k = k;
  const double n = static_cast<double>(scores.size());
  double global_mse = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    row.mse += scores[i].mse / n;
    row.mae += scores[i].mae / n;
    row.pinball += scores[i].pinball / n;
    row.coverage += scores[i].coverage / n;
    row.width += scores[i].width / n;
    row.coverage_cal += scores[i].coverage_cal / n;
    row.width_cal += scores[i].width_cal / n;
    global_mse += global[i].mse / n;
  }
  row.delta_pct = relative_gain(global_mse, row.mse);
  row.ben_pct = benefit_fraction(scores, global);
  row.fb_pct = fallback_fraction(routed_to_global);
  return row;
}

}  // namespace adapool

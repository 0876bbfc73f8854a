#include "adapool/calibration.hpp"

#include "adapool/errors.hpp"

#include <cmath>
#include <iostream>
#include <sstream>

namespace adapool {

std::optional<double> CalibrationTable::scale_for(Index h) const {
  for (std::size_t k = 0; k < horizons.size(); ++k)
    if (horizons[k] == h) return scale[k];
  return std::nullopt;
}

std::vector<double> calibration_grid() {
  std::vector<double> grid;
  grid.reserve(61);
  for (int j = 0; j <= 60; ++j) grid.push_back(0.5 * std::pow(1.05, j));
  return grid;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> apply_calibration(const Eigen::MatrixXd& median,
                                                              const Eigen::MatrixXd& lower,
                                                              const Eigen::MatrixXd& upper, double s) {
  Eigen::MatrixXd lo = median - s * (median - lower);
  Eigen::MatrixXd hi = median + s * (upper - median);
  return {std::move(lo), std::move(hi)};
}

double calibrate_scale(const IntervalStream& stream, double target, bool* attained) {
  const auto grid = calibration_grid();
  for (double s : grid) {
    auto [lo, hi] = apply_calibration(stream.median, stream.lower, stream.upper, s);
    if (coverage(stream.targets, lo, hi) >= target) {
      if (attained) *attained = true;
      return s;
    }
  }
  if (attained) *attained = false;
  return grid.back();
}

CalibrationTable calibrate(const std::vector<std::pair<Index, IntervalStream>>& streams, double target) {
  CalibrationTable table;
  table.target = target;
  for (const auto& [h, stream] : streams) {
    if (stream.targets.cols() == 0)
      throw ConfigError("no VAL windows to calibrate horizon " + std::to_string(h));
    bool ok = false;
    const double s = calibrate_scale(stream, target, &ok);
    auto [lo, hi] = apply_calibration(stream.median, stream.lower, stream.upper, s);
    table.horizons.push_back(h);
    table.scale.push_back(s);
    table.val_coverage.push_back(coverage(stream.targets, lo, hi));
    table.attained.push_back(ok);
    if (!ok) {
      std::ostringstream msg;
      msg << "calibration: horizon " << h << " reaches only " << table.val_coverage.back()
          << " VAL coverage at the grid maximum s=" << s << " (target " << target << ")";
      table.warnings.push_back(msg.str());
      std::cerr << "warning: " << msg.str() << '\n';
    }
  }
  return table;
}

}  // namespace adapool

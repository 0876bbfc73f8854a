#pragma once

#include "adapool/metrics.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace adapool {

/// Per-horizon interval inflation factors chosen on VAL.
struct CalibrationTable {
  double target = 0.8;
  std::vector<Index> horizons;
  std::vector<double> scale;
  std::vector<double> val_coverage;  // VAL coverage at the chosen scale
  std::vector<bool> attained;
  std::vector<std::string> warnings;

  std::optional<double> scale_for(Index h) const;
};

/// Geometric scan grid 0.5 * 1.05^j, j = 0..60.
std::vector<double> calibration_grid();

/// l' = m - s (m - l), u' = m + s (u - m), elementwise.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> apply_calibration(const Eigen::MatrixXd& median,
                                                              const Eigen::MatrixXd& lower,
                                                              const Eigen::MatrixXd& upper, double s);

/// Smallest grid scale whose coverage reaches `target`; the grid maximum otherwise.
double calibrate_scale(const IntervalStream& stream, double target, bool* attained = nullptr);

/// Calibrates every horizon; throws ConfigError when a horizon has no VAL windows.
CalibrationTable calibrate(const std::vector<std::pair<Index, IntervalStream>>& streams, double target);

}  // namespace adapool

#pragma once

#include "adapool/dataset.hpp"

#include <cstdint>
#include <vector>

namespace adapool {

/**
 * Heterogeneous linear-plus-seasonal generator with known regimes.
 *
 * Regime k follows x_t = A_k x_{t-1} + b_k + c_k cos(wt) + d_k sin(wt) + e_t,
 * e_t ~ N(0, noise^2 I). Every regime quantity is pulled toward its mean over
 * regimes by (1 - alpha); alpha = 0 makes all regimes identical.
 */
struct SyntheticSpec {
  Index num_series = 30;
  Index length = 300;
  Index components = 8;
  Index regimes = 3;
  double alpha = 1.0;
  double noise = 0.3;
  double spectral_norm = 0.9;  // bound on ||A_k||_2, so the spectral radius stays below 0.95
  // Small offsets: regimes differ mainly in dynamics, which one input window
  // does not reveal to a pooled model.
  double level_scale = 0.1;
  double season_scale = 0.2;
  Index period = 24;
  Index burn_in = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticRegime {
  Eigen::MatrixXd transition;
  Eigen::VectorXd level;
  Eigen::VectorXd cosine;
  Eigen::VectorXd sine;
};

struct SyntheticData {
  MtsDataset dataset;
  std::vector<Index> labels;  // 0-based regime per series
  std::vector<SyntheticRegime> regimes;
};

/// Balanced labels (shuffled), regime dynamics after interpolation, and data.
SyntheticData generate(const SyntheticSpec& spec);

/// max |eigenvalue| of a square matrix.
double spectral_radius(const Eigen::MatrixXd& a);

/// Adjusted Rand index from the pair-counting contingency table.
double adjusted_rand_index(const std::vector<Index>& a, const std::vector<Index>& b);

/// Leave-one-out 1-NN accuracy on standardized TRAIN features (separability check).
double feature_separability(const SyntheticData& data, Index train_rows);

}  // namespace adapool

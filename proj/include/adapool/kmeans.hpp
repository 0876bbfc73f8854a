#pragma once

#include "adapool/dataset.hpp"

#include <cstdint>
#include <vector>

namespace adapool {

/**
 * Per-series summary features: TRAIN mean then TRAIN standard deviation of
 * every component (2P columns, one row per series). Only observed TRAIN
 * entries of the raw dataset are used.
 */
Eigen::MatrixXd series_features(const MtsDataset& raw, Index train_rows);

/// Column-wise zero mean / unit variance across rows (constant columns -> 0).
Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& features);

struct KMeansResult {
  std::vector<Index> labels;
  Eigen::MatrixXd centers;  // K x d
  double inertia = 0.0;
  int iterations = 0;
};

/**
 * Lloyd's algorithm with k-means++ seeding. An emptied cluster steals the
 * point farthest from its current center. Stops after `max_iters` or when
 * the inertia changes by at most `tol`.
 */
KMeansResult kmeans(const Eigen::MatrixXd& points, Index k, std::uint64_t seed, int max_iters = 100,
                    double tol = 1e-9);

/// Leave-one-out 1-nearest-neighbour accuracy of `labels` on `points`.
double loo_nearest_neighbor_accuracy(const Eigen::MatrixXd& points, const std::vector<Index>& labels);

}  // namespace adapool

#include "adapool/kmeans.hpp"

#include "adapool/errors.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace adapool {

Eigen::MatrixXd series_features(const MtsDataset& raw, Index train_rows) {
  const Index n = raw.num_series(), p = raw.components();
  Eigen::MatrixXd f(n, 2 * p);
  for (Index i = 0; i < n; ++i) {
    const auto& x = raw.series[static_cast<std::size_t>(i)];
    const auto& m = raw.mask[static_cast<std::size_t>(i)];
    for (Index c = 0; c < p; ++c) {
      double sum = 0.0, ss = 0.0;
      Index count = 0;
      for (Index t = 0; t < train_rows; ++t)
        if (m(t, c)) {
          sum += x(t, c);
          ++count;
        }
      const double mean = count > 0 ? sum / static_cast<double>(count) : 0.0;
      for (Index t = 0; t < train_rows; ++t)
        if (m(t, c)) ss += (x(t, c) - mean) * (x(t, c) - mean);
      f(i, c) = mean;
      f(i, p + c) = count > 0 ? std::sqrt(ss / static_cast<double>(count)) : 0.0;
    }
  }
  return f;
}

Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& features) {
  Eigen::MatrixXd out = features;
  const double n = static_cast<double>(features.rows());
  for (Index c = 0; c < features.cols(); ++c) {
    const double mean = features.col(c).sum() / n;
    const double sd = std::sqrt((features.col(c).array() - mean).square().sum() / n);
    if (sd > 0.0)
      out.col(c) = (features.col(c).array() - mean) / sd;
    else
      out.col(c).setZero();
  }
  return out;
}

namespace {

double squared_distance(const Eigen::MatrixXd& a, Index i, const Eigen::MatrixXd& b, Index k) {
  return (a.row(i) - b.row(k)).squaredNorm();
}

Eigen::MatrixXd plus_plus_seeds(const Eigen::MatrixXd& x, Index k, std::mt19937_64& rng) {
  const Index n = x.rows();
  Eigen::MatrixXd centers(k, x.cols());
  std::uniform_int_distribution<Index> first(0, n - 1);
  centers.row(0) = x.row(first(rng));
  Eigen::VectorXd d2(n);
  for (Index i = 0; i < n; ++i) d2(i) = squared_distance(x, i, centers, 0);
  for (Index c = 1; c < k; ++c) {
    const double total = d2.sum();
    Index pick = 0;
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (pick = 0; pick < n - 1; ++pick) {
        u -= d2(pick);
        if (u < 0.0) break;
      }
    } else {
      pick = first(rng);
    }
    centers.row(c) = x.row(pick);
    for (Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), squared_distance(x, i, centers, c));
  }
  return centers;
}

}  // namespace

KMeansResult kmeans(const Eigen::MatrixXd& x, Index k, std::uint64_t seed, int max_iters, double tol) {
  const Index n = x.rows();
  if (k < 1 || k > n) throw ConfigError("kmeans: need 1 <= K <= N");
  std::mt19937_64 rng(seed);
  KMeansResult res;
  res.centers = plus_plus_seeds(x, k, rng);
  res.labels.assign(static_cast<std::size_t>(n), 0);
  double prev = std::numeric_limits<double>::infinity();

  for (int it = 1; it <= max_iters; ++it) {
    res.iterations = it;
    Eigen::VectorXd dist(n);
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      double bd = squared_distance(x, i, res.centers, 0);
      for (Index c = 1; c < k; ++c) {
        const double d = squared_distance(x, i, res.centers, c);
        if (d < bd) bd = d, best = c;
      }
      res.labels[static_cast<std::size_t>(i)] = best;
      dist(i) = bd;
    }

    // Repair: an empty cluster takes the point farthest from its center,
    // provided that point's cluster keeps at least one member.
    std::vector<Index> sizes(static_cast<std::size_t>(k), 0);
    for (Index l : res.labels) ++sizes[static_cast<std::size_t>(l)];
    for (Index c = 0; c < k; ++c) {
      if (sizes[static_cast<std::size_t>(c)] > 0) continue;
      Index far = -1;
      for (Index i = 0; i < n; ++i) {
        if (sizes[static_cast<std::size_t>(res.labels[static_cast<std::size_t>(i)])] < 2) continue;
        if (far < 0 || dist(i) > dist(far)) far = i;
      }
      if (far < 0) break;
      --sizes[static_cast<std::size_t>(res.labels[static_cast<std::size_t>(far)])];
      res.labels[static_cast<std::size_t>(far)] = c;
      ++sizes[static_cast<std::size_t>(c)];
      dist(far) = 0.0;
    }

    res.centers.setZero();
    for (Index i = 0; i < n; ++i) res.centers.row(res.labels[static_cast<std::size_t>(i)]) += x.row(i);
    for (Index c = 0; c < k; ++c) res.centers.row(c) /= static_cast<double>(sizes[static_cast<std::size_t>(c)]);

    res.inertia = 0.0;
    for (Index i = 0; i < n; ++i)
      res.inertia += squared_distance(x, i, res.centers, res.labels[static_cast<std::size_t>(i)]);
    if (std::abs(prev - res.inertia) <= tol) break;
    prev = res.inertia;
  }
  return res;
}

double loo_nearest_neighbor_accuracy(const Eigen::MatrixXd& x, const std::vector<Index>& labels) {
  const Index n = x.rows();
  if (static_cast<Index>(labels.size()) != n) throw ConfigError("1-NN: label count mismatch");
  if (n < 2) return 0.0;
  Index correct = 0;
  for (Index i = 0; i < n; ++i) {
    Index best = -1;
    double bd = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = (x.row(i) - x.row(j)).squaredNorm();
      if (d < bd) bd = d, best = j;
    }
    if (labels[static_cast<std::size_t>(best)] == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace adapool

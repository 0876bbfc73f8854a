#pragma once

#include "adapool/dataset.hpp"
#include "adapool/losses.hpp"
#include "adapool/params.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace adapool {

/// Input windows as time steps: steps[s] is P x n (one column per window).
using StepBatch = std::vector<Eigen::MatrixXd>;

struct TrainConfig {
  Index window = 12;
  Index latent = 0;  // 0 selects min(16, P)
  Index hidden = 32;
  int epochs = 30;            // GLOBAL budget
  int prototype_epochs = 15;  // warm-started prototypes
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Index batch_size = 64;
  double eta = 1e-3;  // L2-SP weight
  double delta = 1.0;  // Huber transition
  std::vector<double> quantiles{0.1, 0.5, 0.9};
  std::uint64_t seed = 0;
  ForecastMode mode = ForecastMode::Point;
  double clip_norm = 5.0;

  void validate() const;
  ModelShape shape(Index components) const;
  LossKind loss() const { return mode == ForecastMode::Point ? LossKind::Huber : LossKind::Pinball; }
};

/// Index of the level fed back during quantile rollout (the one closest to 0.5).
std::size_t median_level(std::span<const double> levels);

/// Quantile fan for a batch: latent[j] is r x n and values[j] = B^T latent[j] is P x n.
struct QuantileForecast {
  std::vector<Eigen::MatrixXd> latent;
  std::vector<Eigen::MatrixXd> values;
};

/// Converts a single w x P window (rows are time) into a one-column StepBatch.
StepBatch to_steps(const Eigen::Ref<const Eigen::MatrixXd>& window);

/// One-step point forecast B^T (W_p h_w + b_p) for every window; P x n.
Eigen::MatrixXd forward_point(const ParamSet& params, const StepBatch& steps);
Eigen::VectorXd forward_point(const ParamSet& params, const Eigen::Ref<const Eigen::MatrixXd>& window);

/// One-step quantiles: base plus cumulative softplus increments, decoded by B^T.
QuantileForecast forward_quantiles(const ParamSet& params, const StepBatch& steps);
QuantileForecast forward_quantiles(const ParamSet& params,
                                   const Eigen::Ref<const Eigen::MatrixXd>& window);

/**
 * Recursive h-step forecast: each one-step prediction is appended to the
 * window and the oldest step dropped. In quantile mode the fed-back value is
 * the `median` level and the fan is returned from the terminal step only.
 */
Eigen::MatrixXd rollout_point(const ParamSet& params, StepBatch steps, Index h);
QuantileForecast rollout_quantiles(const ParamSet& params, StepBatch steps, Index h,
                                   std::size_t median);

/// What loss_and_gradients optimizes.
struct Objective {
  ForecastMode mode = ForecastMode::Point;
  double delta = 1.0;
  std::vector<double> levels;
  double eta = 0.0;

  static Objective from(const TrainConfig& cfg);
};

/**
 * Mean Huber (point) or multi-quantile pinball (quantile) loss over the batch,
 * plus eta * ||theta - theta_anchor||^2 over the specialized parameters when
 * an anchor is supplied. Writes the exact gradient into `grad` (resized to
 * match `params`). Returns the loss; NaN propagates to the caller.
 */
double loss_and_gradients(const ParamSet& params, const ParamSet* anchor, const StepBatch& inputs,
                          const Eigen::MatrixXd& targets, const Objective& objective,
                          ParamSet& grad);

/// Per-window pointwise losses of a point or quantile forecast against targets.
Eigen::VectorXd window_losses(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& targets,
                              LossKind kind, double delta);
Eigen::VectorXd window_losses(const QuantileForecast& fan, const Eigen::MatrixXd& targets,
                              std::span<const double> levels);

struct TrainResult {
  ParamSet params;
  std::vector<double> epoch_losses;
};

/**
 * Adam over shuffled mini-batches of the given h = 1 windows. With an anchor
 * the mixing matrix is frozen and the L2-SP term pulls the specialized
 * parameters toward it. Throws DivergenceError on a non-finite loss.
 */
TrainResult train(ParamSet init, const ParamSet* anchor, const PreparedData& data,
                  std::span<const WindowRef> windows, const TrainConfig& cfg, int epochs);

/// Adam state for one flat parameter vector.
class Adam {
 public:
  Adam(Index size, double lr, double beta1, double beta2, double eps);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

 private:
  double lr_, beta1_, beta2_, eps_;
  Eigen::VectorXd m_, v_;
  long t_ = 0;
};

}  // namespace adapool

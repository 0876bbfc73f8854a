#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>

namespace adapool {

/// Pointwise losses. Huber and Pinball drive training and selection; the
/// squared and absolute losses are evaluation-only.
enum class LossKind { Huber, Pinball, Squared, Absolute };

const char* to_string(LossKind kind);

struct HuberParams {
  double delta = 1.0;
};

/// Scalar Huber loss of residual e: quadratic inside [-delta, delta], linear outside.
inline double huber(double e, double delta) {
  const double a = e < 0 ? -e : e;
  return a <= delta ? 0.5 * e * e : delta * a - 0.5 * delta * delta;
}

/// d huber / d e
inline double huber_derivative(double e, double delta) {
  if (e > delta) return delta;
  if (e < -delta) return -delta;
  return e;
}

/// Component-averaged Huber loss between a P-vector prediction and target.
double huber(const Eigen::Ref<const Eigen::VectorXd>& pred,
             const Eigen::Ref<const Eigen::VectorXd>& target, double delta);

/// rho_q(u) = u (q - 1{u < 0}) with u = target - pred.
inline double pinball(double pred, double target, double q) {
  const double u = target - pred;
  return u * (q - (u < 0 ? 1.0 : 0.0));
}

/// d rho_q(target - pred) / d pred. At u = 0 the right derivative (-q) is used.
inline double pinball_derivative(double pred, double target, double q) {
  return target - pred < 0 ? 1.0 - q : -q;
}

/// Multi-quantile pinball averaged over the P components and all levels.
/// `preds[j]` is the prediction for `levels[j]`.
double pinball(std::span<const Eigen::VectorXd> preds,
               const Eigen::Ref<const Eigen::VectorXd>& target, std::span<const double> levels);

double squared_error(const Eigen::Ref<const Eigen::VectorXd>& pred,
                     const Eigen::Ref<const Eigen::VectorXd>& target);
double absolute_error(const Eigen::Ref<const Eigen::VectorXd>& pred,
                      const Eigen::Ref<const Eigen::VectorXd>& target);

/// Numerically stable log(1 + exp(x)).
inline double softplus(double x) {
  return (x > 0 ? x : 0.0) + std::log1p(std::exp(x > 0 ? -x : x));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace adapool

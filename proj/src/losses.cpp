#include "adapool/losses.hpp"

#include "adapool/errors.hpp"

namespace adapool {

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::Huber: return "huber";
    case LossKind::Pinball: return "pinball";
    case LossKind::Squared: return "mse";
    case LossKind::Absolute: return "mae";
  }
  return "?";
}

double huber(const Eigen::Ref<const Eigen::VectorXd>& pred,
             const Eigen::Ref<const Eigen::VectorXd>& target, double delta) {
  double sum = 0.0;
  for (Eigen::Index p = 0; p < pred.size(); ++p) sum += huber(pred(p) - target(p), delta);
  return sum / static_cast<double>(pred.size());
}

double pinball(std::span<const Eigen::VectorXd> preds,
               const Eigen::Ref<const Eigen::VectorXd>& target, std::span<const double> levels) {
  if (preds.size() != levels.size()) throw ConfigError("pinball: one prediction per level required");
  double sum = 0.0;
  for (std::size_t j = 0; j < levels.size(); ++j)
    for (Eigen::Index p = 0; p < target.size(); ++p) sum += pinball(preds[j](p), target(p), levels[j]);
  return sum / static_cast<double>(target.size() * static_cast<Eigen::Index>(levels.size()));
}

double squared_error(const Eigen::Ref<const Eigen::VectorXd>& pred,
                     const Eigen::Ref<const Eigen::VectorXd>& target) {
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

double absolute_error(const Eigen::Ref<const Eigen::VectorXd>& pred,
                      const Eigen::Ref<const Eigen::VectorXd>& target) {
  return (pred - target).cwiseAbs().sum() / static_cast<double>(pred.size());
}

}  // namespace adapool

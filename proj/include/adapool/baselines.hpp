#pragma once

#include "adapool/clustering.hpp"

#include <optional>
#include <string>

namespace adapool {

enum class Method { Ours, Global, Individual, FeatKmeans, RandomBalanced };

const char* to_string(Method m);
Method parse_method(const std::string& text);

/// GLOBAL as a routed model: one flagged cluster holding every series.
RoutedModels global_only(const ParamSet& global, Index n);

/**
 * Fixed-label (K, seed) run: prototypes fitted once on the given labels, no
 * reassignment. Fallback compares training-loss sums like OURS; SelAbs is the
 * routed VAL MSE at h = 1.
 */
ClusterRun fixed_label_run(const ParamSet& global, const Assignment& labels, const PreparedData& data,
                           const TrainConfig& cfg, const Eigen::VectorXd& global_fallback_loss,
                           const Eigen::VectorXd& global_mse, double gamma, std::uint64_t salt);

/// Sweep of fixed-label runs over candidates x seeds; `init` picks the labels.
SelectionResult select_fixed_labels(const ParamSet& global, const PreparedData& data, const SelectionConfig& sel,
                                    const TrainConfig& cfg, InitStrategy init,
                                    const Eigen::MatrixXd* features = nullptr);

/// One model per series from a fresh initialization on its own TRAIN windows
/// with the GLOBAL epoch budget. No clustering, no anchor, no fallback.
RoutedModels fit_individual(const ParamSet& global, const PreparedData& data, const TrainConfig& cfg);

/// Continues every per-series model on its TRAIN+VAL windows for half the
/// GLOBAL budget; `refit_global` only fills the GLOBAL slot.
RoutedModels refit_individual(const RoutedModels& selected, const ParamSet& refit_global,
                              const PreparedData& data, const TrainConfig& cfg);

/// A method carried through selection and the TRAIN+VAL refit.
struct MethodFit {
  Method method = Method::Global;
  std::optional<SelectionResult> selection;
  RoutedModels selected;  // VAL-stage models and routing
  RoutedModels final;     // TRAIN+VAL models that see TEST
};

/**
 * VAL-stage fit of `method` given the TRAIN GLOBAL. FEAT-KMEANS needs
 * standardized TRAIN features; OURS uses them only when `sel.init` is feature.
 */
MethodFit select_method(Method method, const ParamSet& global, const PreparedData& data,
                        const SelectionConfig& sel, const TrainConfig& cfg,
                        const Eigen::MatrixXd* features = nullptr);

/// TRAIN+VAL refit of a VAL-stage fit (the models that see TEST).
RoutedModels refit_method(Method method, const RoutedModels& selected, const PreparedData& data,
                          const TrainConfig& cfg);

/// select_method followed by refit_method.
MethodFit fit_method(Method method, const ParamSet& global, const PreparedData& data, const SelectionConfig& sel,
                     const TrainConfig& cfg, const Eigen::MatrixXd* features = nullptr);

}  // namespace adapool

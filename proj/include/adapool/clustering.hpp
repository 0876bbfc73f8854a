#pragma once

#include "adapool/calibration.hpp"
#include "adapool/dataset.hpp"
#include "adapool/metrics.hpp"
#include "adapool/model.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace adapool {

enum class InitStrategy { RandomBalanced, Feature };

const char* to_string(InitStrategy s);
InitStrategy parse_init(const std::string& text);

/// 0-based cluster label per series.
struct Assignment {
  std::vector<Index> labels;
  Index k = 0;
  int iterations = 0;
};

/**
 * N x K validation costs; NaN marks an undefined entry (no windows). Columns
 * with `active == false` belong to inert prototypes and never win an argmin.
 */
struct CostMatrix {
  Eigen::MatrixXd cost;
  std::vector<Index> horizons;
  std::vector<bool> active;
};

/// Frozen non-specializable markers, one per cluster.
struct FallbackFlags {
  std::vector<bool> flagged;
  bool frozen = false;
  std::vector<double> cluster_loss;  // mean member VAL h=1 loss under the prototype (NaN if empty)
  std::vector<double> global_loss;   // same members under GLOBAL

  Index count() const;
};

struct SelectionConfig {
  std::vector<Index> candidates{2, 3, 4, 5};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double gamma = 0.05;
  int max_iters = 10;
  std::vector<Index> assign_horizons{1, 3, 6};
  InitStrategy init = InitStrategy::RandomBalanced;

  void validate() const;
};

/// Prototype parameters; inert ones are GLOBAL copies standing in for empty clusters.
struct PrototypeSet {
  std::vector<ParamSet> params;
  std::vector<bool> inert;
};

/// Per-horizon matrices of per-series mean losses: values[j](i, m) for model m at horizons[j].
struct LossTable {
  std::vector<Index> horizons;
  std::vector<Eigen::MatrixXd> values;

  const Eigen::MatrixXd& at(Index h) const;
};

/// Seeded balanced deal (random_balanced) or k-means on `features` (feature).
Assignment init_assignments(Index n, Index k, std::uint64_t seed, InitStrategy strategy,
                            const Eigen::MatrixXd* features = nullptr);

/// GLOBAL fit on all h=1 windows of the tagged region from a fresh initialization.
ParamSet fit_global(const PreparedData& data, const TrainConfig& cfg, SplitTag tag = SplitTag::Train);

/// Fits one prototype per cluster, warm-started at and anchored to `global`.
/// `salt` decorrelates the shuffling of different runs.
PrototypeSet fit_prototypes(const Assignment& assignment, const ParamSet& global, const PreparedData& data,
                            const TrainConfig& cfg, std::uint64_t salt = 0);

/// Per-series losses of every model at every horizon on the tagged region.
LossTable evaluate_losses(std::span<const ParamSet* const> models, const PreparedData& data, SplitTag tag,
                          std::span<const Index> horizons, LossKind kind, const TrainConfig& cfg);

/// C_ik = mean over the defined horizons of the tabled VAL loss.
CostMatrix cost_matrix(const LossTable& table, std::span<const Index> horizons, const std::vector<bool>& inert);
CostMatrix compute_cost_matrix(const PrototypeSet& prototypes, const PreparedData& data,
                               std::span<const Index> horizons, LossKind kind, const TrainConfig& cfg);

/// Row-wise argmin over active columns, ties to the smaller index; rows with
/// no defined active entry keep their previous label.
Assignment reassign(const CostMatrix& cost, const Assignment& prev);

/// sum_i C_{i, labels_i} over rows with a defined entry.
double assignment_cost(const CostMatrix& cost, const std::vector<Index>& labels);

struct OuterResult {
  Assignment assignment;
  PrototypeSet prototypes;
  CostMatrix cost;                          // from the last iteration
  Eigen::MatrixXd val_h1;                   // N x K prototype VAL losses at h = 1
  std::vector<std::vector<Index>> trace;    // initial labels, then labels after each iteration
  bool cycled = false;                      // stopped because a label vector repeated
  std::vector<double> trace_cost;           // sum_i C_{i,c_i} after each reassignment
  std::vector<double> trace_min_cost;       // sum_i min_k C_ik for the same matrix
};

/// Alternates TRAIN prototype fits and VAL reassignment until the labels are
/// unchanged, an earlier label vector recurs, or `max_iters` passes were made.
OuterResult outer_loop(const ParamSet& global, Assignment init, const PreparedData& data,
                       const SelectionConfig& sel, const TrainConfig& cfg, std::uint64_t salt = 0);

/**
 * Flags cluster k iff its members' summed VAL h=1 loss under the prototype is
 * strictly larger than under GLOBAL (equivalently the means). Empty clusters
 * are flagged. `clus` is N x K, `glob` has N entries; NaN entries are skipped.
 */
FallbackFlags compute_fallback(const Assignment& assignment, const Eigen::MatrixXd& clus,
                               const Eigen::VectorXd& glob);

struct RoutedRisk {
  double routed = 0.0;
  double global = 0.0;
};

/**
 * Mean routed VAL h=1 loss and the GLOBAL risk over the same series. Both are
 * accumulated cluster by cluster so the routed value can never exceed GLOBAL's.
 */
RoutedRisk routed_val_risk(const Assignment& assignment, const FallbackFlags& flags,
                           const Eigen::MatrixXd& clus, const Eigen::VectorXd& glob);

double penalized_score(double sel_abs, Index k, Index n, double gamma);

/// One (K, seed) run of the VAL-driven procedure (or a fixed-label baseline).
struct ClusterRun {
  Index k = 0;
  std::uint64_t seed = 0;
  OuterResult outer;
  FallbackFlags flags;
  RoutedRisk risk;
  double sel_abs = 0.0;
  double sel_pen = 0.0;
};

struct SelectionResult {
  std::vector<ClusterRun> runs;
  std::size_t best = 0;
  Eigen::VectorXd global_val_h1;

  const ClusterRun& chosen() const { return runs[best]; }
};

/// Index of the minimal SelPen; ties to the smaller K, then the smaller seed.
std::size_t argmin_selection(const std::vector<ClusterRun>& runs);

/// Full sweep over candidates x seeds with the VAL-only criterion.
SelectionResult select_k(const ParamSet& global, const PreparedData& data, const SelectionConfig& sel,
                         const TrainConfig& cfg, const Eigen::MatrixXd* features = nullptr);

/// GLOBAL plus prototypes with frozen routing; route -1 means GLOBAL.
struct RoutedModels {
  ParamSet global;
  std::vector<ParamSet> prototypes;
  std::vector<Index> labels;
  FallbackFlags flags;

  std::vector<Index> routes() const;
  const ParamSet& model(Index route) const { return route < 0 ? global : prototypes[static_cast<std::size_t>(route)]; }
};

/// Routing as selected on VAL (pre-refit models).
RoutedModels routed_models(const ParamSet& global, const ClusterRun& run);

/**
 * Refits GLOBAL on TRAIN+VAL (warm start, half the GLOBAL budget) and every
 * unflagged, non-empty prototype on its members' TRAIN+VAL windows, warm
 * started from its VAL-stage parameters with the refit GLOBAL as anchor and
 * shared mixing matrix. Flags are carried over unchanged.
 */
RoutedModels refit_trainval(const RoutedModels& selected, const PreparedData& data, const TrainConfig& cfg);

/// Forecasts of every series under its routed model at horizon h.
HorizonForecast routed_forecast(const RoutedModels& models, const PreparedData& data, SplitTag tag, Index h,
                                const TrainConfig& cfg);

/// Per-series scores on the tagged region for each horizon: result[j][i].
std::vector<std::vector<SeriesMetrics>> evaluate_routed(const RoutedModels& models, const PreparedData& data,
                                                        SplitTag tag, std::span<const Index> horizons,
                                                        const TrainConfig& cfg,
                                                        const CalibrationTable* calibration = nullptr);

/// VAL interval streams of the routed models, ready for calibrate().
std::vector<std::pair<Index, IntervalStream>> routed_interval_streams(const RoutedModels& models,
                                                                      const PreparedData& data,
                                                                      std::span<const Index> horizons,
                                                                      const TrainConfig& cfg);

/**
 * Routes a new series from its initial standardized segment (rows are time):
 * mean h=1 loss over all complete windows under GLOBAL and every unflagged
 * prototype; a prototype wins only by strictly beating GLOBAL. Returns -1 for
 * GLOBAL. Throws DataError when the segment is shorter than w + 1.
 */
Index assign_new_series(const Eigen::MatrixXd& segment, const RoutedModels& models, const TrainConfig& cfg,
                        std::vector<double>* losses = nullptr);

}  // namespace adapool

#include "adapool/baselines.hpp"

#include "adapool/errors.hpp"
#include "adapool/parallel.hpp"
#include "detail.hpp"

namespace adapool {

using detail::all_series;
using detail::member_windows;
using detail::reseeded;

const char* to_string(Method m) {
  switch (m) {
    case Method::Ours: return "ours";
    case Method::Global: return "global";
    case Method::Individual: return "individual";
    case Method::FeatKmeans: return "feat_kmeans";
    case Method::RandomBalanced: return "random_balanced";
  }
  return "?";
}

Method parse_method(const std::string& text) {
  for (Method m : {Method::Ours, Method::Global, Method::Individual, Method::FeatKmeans, Method::RandomBalanced})
    if (text == to_string(m)) return m;
  throw ConfigError("unknown method '" + text + "'");
}

RoutedModels global_only(const ParamSet& global, Index n) {
  FallbackFlags flags;
  flags.flagged = {true};
  flags.frozen = true;
  return {global, {global}, std::vector<Index>(static_cast<std::size_t>(n), 0), flags};
}

ClusterRun fixed_label_run(const ParamSet& global, const Assignment& labels, const PreparedData& data,
                           const TrainConfig& cfg, const Eigen::VectorXd& global_fallback_loss,
                           const Eigen::VectorXd& global_mse, double gamma, std::uint64_t salt) {
  ClusterRun run;
  run.k = labels.k;
  run.outer.assignment = labels;
  run.outer.trace = {labels.labels};
  run.outer.prototypes = fit_prototypes(labels, global, data, cfg, salt);

  std::vector<const ParamSet*> models;
  for (const auto& p : run.outer.prototypes.params) models.push_back(&p);
  const Index h1[] = {1};
  run.outer.val_h1 = evaluate_losses(models, data, SplitTag::Val, h1, cfg.loss(), cfg).at(1);
  const Eigen::MatrixXd mse = cfg.loss() == LossKind::Squared
                                  ? run.outer.val_h1
                                  : evaluate_losses(models, data, SplitTag::Val, h1, LossKind::Squared, cfg).at(1);

  run.flags = compute_fallback(labels, run.outer.val_h1, global_fallback_loss);
  run.risk = routed_val_risk(labels, run.flags, mse, global_mse);
  run.sel_abs = run.risk.routed;
  run.sel_pen = penalized_score(run.sel_abs, labels.k, data.num_series(), gamma);
  return run;
}

SelectionResult select_fixed_labels(const ParamSet& global, const PreparedData& data, const SelectionConfig& sel,
                                    const TrainConfig& cfg, InitStrategy init, const Eigen::MatrixXd* features) {
  sel.validate();
  const ParamSet* g[] = {&global};
  const Index h1[] = {1};
  SelectionResult out;
  out.global_val_h1 = evaluate_losses(g, data, SplitTag::Val, h1, cfg.loss(), cfg).at(1).col(0);
  const Eigen::VectorXd global_mse =
      evaluate_losses(g, data, SplitTag::Val, h1, LossKind::Squared, cfg).at(1).col(0);

  for (Index k : sel.candidates)
    for (std::uint64_t seed : sel.seeds) {
      const Assignment labels = init_assignments(data.num_series(), k, seed, init, features);
      ClusterRun run = fixed_label_run(global, labels, data, cfg, out.global_val_h1, global_mse, sel.gamma,
                                       mix_seed(static_cast<std::uint64_t>(k), seed));
      run.seed = seed;
      out.runs.push_back(std::move(run));
    }
  out.best = argmin_selection(out.runs);
  return out;
}

RoutedModels fit_individual(const ParamSet& global, const PreparedData& data, const TrainConfig& cfg) {
  const Index n = data.num_series();
  RoutedModels out;
  out.global = global;
  out.labels = all_series(n);
  out.flags.flagged.assign(static_cast<std::size_t>(n), false);
  out.flags.frozen = true;
  out.prototypes.assign(static_cast<std::size_t>(n), global);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    const Index one[] = {static_cast<Index>(i)};
    const auto windows = member_windows(data, SplitTag::Train, cfg.window, one);
    ParamSet init = ParamSet::initialize(cfg.shape(data.components()), mix_seed(cfg.seed, mix_seed(0x1D1, i)));
    out.prototypes[i] =
        train(std::move(init), nullptr, data, windows, reseeded(cfg, mix_seed(0x1D2, i)), cfg.epochs).params;
  });
  return out;
}

RoutedModels refit_individual(const RoutedModels& selected, const ParamSet& refit_global, const PreparedData& data,
                              const TrainConfig& cfg) {
  RoutedModels out = selected;
  out.global = refit_global;
  const int budget = cfg.epochs / 2;
  if (budget == 0) return out;
  parallel_for(out.prototypes.size(), [&](std::size_t i) {
    const Index one[] = {static_cast<Index>(i)};
    const auto windows = member_windows(data, SplitTag::TrainVal, cfg.window, one);
    out.prototypes[i] = train(selected.prototypes[i], nullptr, data, windows, reseeded(cfg, mix_seed(0x1D3, i)),
                              budget)
                            .params;
  });
  return out;
}

MethodFit select_method(Method method, const ParamSet& global, const PreparedData& data,
                        const SelectionConfig& sel, const TrainConfig& cfg, const Eigen::MatrixXd* features) {
  MethodFit fit;
  fit.method = method;
  switch (method) {
    case Method::Global:
      fit.selected = global_only(global, data.num_series());
      break;
    case Method::Individual:
      fit.selected = fit_individual(global, data, cfg);
      break;
    case Method::Ours:
      fit.selection = select_k(global, data, sel, cfg, features);
      break;
    case Method::FeatKmeans:
      if (!features) throw ConfigError("feat_kmeans needs series features");
      fit.selection = select_fixed_labels(global, data, sel, cfg, InitStrategy::Feature, features);
      break;
    case Method::RandomBalanced:
      fit.selection = select_fixed_labels(global, data, sel, cfg, InitStrategy::RandomBalanced);
      break;
  }
  if (fit.selection) fit.selected = routed_models(global, fit.selection->chosen());
  return fit;
}

RoutedModels refit_method(Method method, const RoutedModels& selected, const PreparedData& data,
                          const TrainConfig& cfg) {
  if (method != Method::Individual) return refit_trainval(selected, data, cfg);
  const RoutedModels g = refit_trainval(global_only(selected.global, data.num_series()), data, cfg);
  return refit_individual(selected, g.global, data, cfg);
}

MethodFit fit_method(Method method, const ParamSet& global, const PreparedData& data, const SelectionConfig& sel,
                     const TrainConfig& cfg, const Eigen::MatrixXd* features) {
  MethodFit fit = select_method(method, global, data, sel, cfg, features);
  fit.final = refit_method(method, fit.selected, data, cfg);
  return fit;
}

}  // namespace adapool

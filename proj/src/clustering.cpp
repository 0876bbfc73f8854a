#include "adapool/clustering.hpp"

#include "adapool/errors.hpp"
#include "adapool/kmeans.hpp"
#include "adapool/parallel.hpp"
#include "detail.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <tuple>

namespace adapool {

using detail::all_series;
using detail::member_windows;
using detail::members_of;
using detail::reseeded;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

const char* to_string(InitStrategy s) {
  return s == InitStrategy::RandomBalanced ? "random_balanced" : "feature";
}

InitStrategy parse_init(const std::string& text) {
  if (text == "random_balanced") return InitStrategy::RandomBalanced;
  if (text == "feature") return InitStrategy::Feature;
  throw ConfigError("unknown init strategy '" + text + "'");
}

Index FallbackFlags::count() const {
  return static_cast<Index>(std::count(flagged.begin(), flagged.end(), true));
}

void SelectionConfig::validate() const {
  if (candidates.empty()) throw ConfigError("candidate K set is empty");
  for (Index k : candidates)
    if (k < 1) throw ConfigError("candidate K must be >= 1");
  if (seeds.empty()) throw ConfigError("seed set is empty");
  if (!(gamma >= 0)) throw ConfigError("gamma must be >= 0");
  if (max_iters < 1) throw ConfigError("max outer iterations must be >= 1");
  if (assign_horizons.empty()) throw ConfigError("assignment horizon set is empty");
  for (Index h : assign_horizons)
    if (h < 1) throw ConfigError("horizons must be >= 1");
}

const Eigen::MatrixXd& LossTable::at(Index h) const {
  for (std::size_t j = 0; j < horizons.size(); ++j)
    if (horizons[j] == h) return values[j];
  throw ConfigError("loss table has no horizon " + std::to_string(h));
}

Assignment init_assignments(Index n, Index k, std::uint64_t seed, InitStrategy strategy,
                            const Eigen::MatrixXd* features) {
  if (k < 1 || k > n) throw ConfigError("need 1 <= K <= N for initialization");
  Assignment a;
  a.k = k;
  a.labels.assign(static_cast<std::size_t>(n), 0);
  if (strategy == InitStrategy::Feature) {
    if (!features || features->rows() != n) throw ConfigError("feature initialization needs N feature rows");
    a.labels = kmeans(*features, k, seed).labels;
    return a;
  }
  auto perm = all_series(n);
  std::mt19937_64 rng(mix_seed(seed, 0xBA1));
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t j = 0; j < perm.size(); ++j)
    a.labels[static_cast<std::size_t>(perm[j])] = static_cast<Index>(j) % k;
  return a;
}

ParamSet fit_global(const PreparedData& data, const TrainConfig& cfg, SplitTag tag) {
  const auto series = all_series(data.num_series());
  const auto windows = member_windows(data, tag, cfg.window, series);
  ParamSet init = ParamSet::initialize(cfg.shape(data.components()), mix_seed(cfg.seed, 0x61));
  return train(std::move(init), nullptr, data, windows, reseeded(cfg, 0x62), cfg.epochs).params;
}

PrototypeSet fit_prototypes(const Assignment& assignment, const ParamSet& global, const PreparedData& data,
                            const TrainConfig& cfg, std::uint64_t salt) {
  const auto k = static_cast<std::size_t>(assignment.k);
  PrototypeSet out{std::vector<ParamSet>(k, global), std::vector<bool>(k, false)};
  std::vector<char> inert(k, 0);
  parallel_for(k, [&](std::size_t c) {
    const auto members = members_of(assignment.labels, static_cast<Index>(c));
    const auto windows = member_windows(data, SplitTag::Train, cfg.window, members);
    if (windows.empty()) {
      inert[c] = 1;
      return;
    }
    const TrainConfig ck = reseeded(cfg, mix_seed(salt, c + 1));
    out.params[c] = train(global, &global, data, windows, ck, cfg.prototype_epochs).params;
  });
  for (std::size_t c = 0; c < k; ++c) out.inert[c] = inert[c] != 0;
  return out;
}

LossTable evaluate_losses(std::span<const ParamSet* const> models, const PreparedData& data, SplitTag tag,
                          std::span<const Index> horizons, LossKind kind, const TrainConfig& cfg) {
  const Index n = data.num_series();
  const auto series = all_series(n);
  LossTable table;
  table.horizons.assign(horizons.begin(), horizons.end());
  table.values.assign(horizons.size(), Eigen::MatrixXd::Constant(n, static_cast<Index>(models.size()), kNaN));
  parallel_for(models.size(), [&](std::size_t m) {
    const auto fcs = forecast_horizons(*models[m], data, series, tag, horizons, cfg);
    for (std::size_t j = 0; j < horizons.size(); ++j) {
      const auto losses = per_series_loss(fcs[j], series, kind, cfg);
      for (Index i = 0; i < n; ++i)
        if (const auto& v = losses[static_cast<std::size_t>(i)]) table.values[j](i, static_cast<Index>(m)) = *v;
    }
  });
  return table;
}

CostMatrix cost_matrix(const LossTable& table, std::span<const Index> horizons, const std::vector<bool>& inert) {
  if (horizons.empty()) throw ConfigError("cost matrix needs at least one horizon");
  const auto& first = table.at(horizons.front());
  CostMatrix c;
  c.horizons.assign(horizons.begin(), horizons.end());
  c.cost = Eigen::MatrixXd::Constant(first.rows(), first.cols(), kNaN);
  c.active.assign(static_cast<std::size_t>(first.cols()), true);
  for (std::size_t k = 0; k < inert.size() && k < c.active.size(); ++k) c.active[k] = !inert[k];
  for (Index i = 0; i < first.rows(); ++i)
    for (Index k = 0; k < first.cols(); ++k) {
      double sum = 0.0;
      int defined = 0;
      for (Index h : horizons) {
        const double v = table.at(h)(i, k);
        if (std::isfinite(v)) {
          sum += v;
          ++defined;
        }
      }
      if (defined > 0) c.cost(i, k) = sum / defined;
    }
  return c;
}

CostMatrix compute_cost_matrix(const PrototypeSet& prototypes, const PreparedData& data,
                               std::span<const Index> horizons, LossKind kind, const TrainConfig& cfg) {
  std::vector<const ParamSet*> models;
  for (const auto& p : prototypes.params) models.push_back(&p);
  return cost_matrix(evaluate_losses(models, data, SplitTag::Val, horizons, kind, cfg), horizons, prototypes.inert);
}

Assignment reassign(const CostMatrix& cost, const Assignment& prev) {
  if (static_cast<Index>(prev.labels.size()) != cost.cost.rows() || prev.k != cost.cost.cols())
    throw ConfigError("reassign: cost matrix and assignment disagree in shape");
  Assignment next = prev;
  for (Index i = 0; i < cost.cost.rows(); ++i) {
    Index best = -1;
    for (Index k = 0; k < cost.cost.cols(); ++k) {
      if (!cost.active[static_cast<std::size_t>(k)] || !std::isfinite(cost.cost(i, k))) continue;
      if (best < 0 || cost.cost(i, k) < cost.cost(i, best)) best = k;
    }
    if (best >= 0) next.labels[static_cast<std::size_t>(i)] = best;
  }
  return next;
}

double assignment_cost(const CostMatrix& cost, const std::vector<Index>& labels) {
  double s = 0.0;
  for (Index i = 0; i < cost.cost.rows(); ++i) {
    const double v = cost.cost(i, labels[static_cast<std::size_t>(i)]);
    if (std::isfinite(v)) s += v;
  }
  return s;
}

namespace {

double min_cost(const CostMatrix& cost) {
  double s = 0.0;
  for (Index i = 0; i < cost.cost.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Index k = 0; k < cost.cost.cols(); ++k)
      if (cost.active[static_cast<std::size_t>(k)] && std::isfinite(cost.cost(i, k)))
        best = std::min(best, cost.cost(i, k));
    if (std::isfinite(best)) s += best;
  }
  return s;
}

}  // namespace

OuterResult outer_loop(const ParamSet& global, Assignment init, const PreparedData& data,
                       const SelectionConfig& sel, const TrainConfig& cfg, std::uint64_t salt) {
  sel.validate();
  std::vector<Index> table_h = sel.assign_horizons;
  if (std::find(table_h.begin(), table_h.end(), Index{1}) == table_h.end()) table_h.push_back(1);

  OuterResult res;
  Assignment cur = std::move(init);
  res.trace.push_back(cur.labels);  // iteration 0: the initialization
  for (int it = 1; it <= sel.max_iters; ++it) {
    // Same shuffling every pass: unchanged members reproduce the same prototype.
    res.prototypes = fit_prototypes(cur, global, data, cfg, salt);
    std::vector<const ParamSet*> models;
    for (const auto& p : res.prototypes.params) models.push_back(&p);
    const LossTable table = evaluate_losses(models, data, SplitTag::Val, table_h, cfg.loss(), cfg);
    res.cost = cost_matrix(table, sel.assign_horizons, res.prototypes.inert);
    res.val_h1 = table.at(1);

    Assignment next = reassign(res.cost, cur);
    next.iterations = it;
    res.trace.push_back(next.labels);
    res.trace_cost.push_back(assignment_cost(res.cost, next.labels));
    res.trace_min_cost.push_back(min_cost(res.cost));
    // Prototypes are a deterministic function of the labels, so revisiting an
    // earlier label vector means the loop cycles and can never settle.
    const bool stable = next.labels == cur.labels;
    const bool cycled = !stable && std::find(res.trace.begin(), res.trace.end() - 1, next.labels) != res.trace.end() - 1;
    cur = std::move(next);
    if (stable) break;
    if (cycled) {
      res.cycled = true;
      break;
    }
  }
  res.assignment = std::move(cur);
  return res;
}

namespace {

// Per-cluster sums over members where both losses are defined, in series order.
struct ClusterSums {
  std::vector<double> clus, glob;
  std::vector<Index> count;
};

ClusterSums cluster_sums(const Assignment& a, const Eigen::MatrixXd& clus, const Eigen::VectorXd& glob) {
  const auto k = static_cast<std::size_t>(a.k);
  ClusterSums s{std::vector<double>(k, 0.0), std::vector<double>(k, 0.0), std::vector<Index>(k, 0)};
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    const Index c = a.labels[i];
    const double lc = clus(static_cast<Index>(i), c), lg = glob(static_cast<Index>(i));
    if (!std::isfinite(lc) || !std::isfinite(lg)) continue;
    s.clus[static_cast<std::size_t>(c)] += lc;
    s.glob[static_cast<std::size_t>(c)] += lg;
    ++s.count[static_cast<std::size_t>(c)];
  }
  return s;
}

}  // namespace

FallbackFlags compute_fallback(const Assignment& assignment, const Eigen::MatrixXd& clus,
                               const Eigen::VectorXd& glob) {
  if (clus.rows() != glob.size() || clus.cols() != assignment.k)
    throw ConfigError("fallback: loss shapes disagree with the assignment");
  const auto s = cluster_sums(assignment, clus, glob);
  FallbackFlags f;
  for (std::size_t k = 0; k < s.count.size(); ++k) {
    const bool empty = s.count[k] == 0;
    f.flagged.push_back(empty || s.clus[k] > s.glob[k]);
    const double n = static_cast<double>(s.count[k]);
    f.cluster_loss.push_back(empty ? kNaN : s.clus[k] / n);
    f.global_loss.push_back(empty ? kNaN : s.glob[k] / n);
  }
  f.frozen = true;
  return f;
}

RoutedRisk routed_val_risk(const Assignment& assignment, const FallbackFlags& flags,
                           const Eigen::MatrixXd& clus, const Eigen::VectorXd& glob) {
  if (!flags.frozen) throw ProtocolError("routed risk requires frozen fallback flags");
  const auto s = cluster_sums(assignment, clus, glob);
  double routed = 0.0, global = 0.0;
  Index n = 0;
  for (std::size_t k = 0; k < s.count.size(); ++k) {
    routed += flags.flagged[k] ? s.glob[k] : s.clus[k];
    global += s.glob[k];
    n += s.count[k];
  }
  if (n == 0) throw DataError("no series with defined VAL loss");
  return {routed / static_cast<double>(n), global / static_cast<double>(n)};
}

double penalized_score(double sel_abs, Index k, Index n, double gamma) {
  return sel_abs + gamma * static_cast<double>(k) / static_cast<double>(n);
}

std::size_t argmin_selection(const std::vector<ClusterRun>& runs) {
  if (runs.empty()) throw ConfigError("no selection runs");
  std::size_t best = 0;
  for (std::size_t j = 1; j < runs.size(); ++j) {
    const auto& a = runs[j];
    const auto& b = runs[best];
    if (std::tie(a.sel_pen, a.k, a.seed) < std::tie(b.sel_pen, b.k, b.seed)) best = j;
  }
  return best;
}

SelectionResult select_k(const ParamSet& global, const PreparedData& data, const SelectionConfig& sel,
                         const TrainConfig& cfg, const Eigen::MatrixXd* features) {
  sel.validate();
  const Index n = data.num_series();
  SelectionResult out;
  const ParamSet* g[] = {&global};
  const Index h1[] = {1};
  out.global_val_h1 = evaluate_losses(g, data, SplitTag::Val, h1, cfg.loss(), cfg).at(1).col(0);

  for (Index k : sel.candidates)
    for (std::uint64_t seed : sel.seeds) {
      ClusterRun run;
      run.k = k;
      run.seed = seed;
      Assignment init = init_assignments(n, k, seed, sel.init, features);
      run.outer = outer_loop(global, std::move(init), data, sel, cfg,
                             mix_seed(static_cast<std::uint64_t>(k), seed));
      run.flags = compute_fallback(run.outer.assignment, run.outer.val_h1, out.global_val_h1);
      run.risk = routed_val_risk(run.outer.assignment, run.flags, run.outer.val_h1, out.global_val_h1);
      run.sel_abs = run.risk.routed;
      run.sel_pen = penalized_score(run.sel_abs, k, n, sel.gamma);
      out.runs.push_back(std::move(run));
    }
  out.best = argmin_selection(out.runs);
  return out;
}

std::vector<Index> RoutedModels::routes() const {
  std::vector<Index> r(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    r[i] = flags.flagged[static_cast<std::size_t>(labels[i])] ? -1 : labels[i];
  return r;
}

RoutedModels routed_models(const ParamSet& global, const ClusterRun& run) {
  return {global, run.outer.prototypes.params, run.outer.assignment.labels, run.flags};
}

RoutedModels refit_trainval(const RoutedModels& selected, const PreparedData& data, const TrainConfig& cfg) {
  if (!selected.flags.frozen) throw ProtocolError("refit requires frozen fallback flags");
  const int budget = cfg.epochs / 2;
  RoutedModels out;
  out.labels = selected.labels;
  out.flags = selected.flags;

  const auto series = all_series(data.num_series());
  out.global = selected.global;
  if (budget > 0)
    out.global = train(selected.global, nullptr, data, member_windows(data, SplitTag::TrainVal, cfg.window, series),
                       reseeded(cfg, 0x7E1), budget)
                     .params;

  const std::size_t k = selected.prototypes.size();
  out.prototypes.assign(k, out.global);
  parallel_for(k, [&](std::size_t c) {
    if (out.flags.flagged[c]) return;
    const auto members = members_of(out.labels, static_cast<Index>(c));
    const auto windows = member_windows(data, SplitTag::TrainVal, cfg.window, members);
    if (windows.empty()) return;
    ParamSet init = selected.prototypes[c];
    init.mixing() = out.global.mixing();
    if (budget > 0)
      out.prototypes[c] = train(std::move(init), &out.global, data, windows, reseeded(cfg, mix_seed(0x7E2, c)),
                                budget)
                              .params;
    else
      out.prototypes[c] = std::move(init);
  });
  return out;
}

HorizonForecast routed_forecast(const RoutedModels& models, const PreparedData& data, SplitTag tag, Index h,
                                const TrainConfig& cfg) {
  const auto routes = models.routes();
  std::vector<Index> keys(routes.begin(), routes.end());
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());

  // Forecast each routed group as one batch, then reassemble in series order.
  std::vector<HorizonForecast> parts(keys.size());
  parallel_for(keys.size(), [&](std::size_t g) {
    std::vector<Index> members;
    for (std::size_t i = 0; i < routes.size(); ++i)
      if (routes[i] == keys[g]) members.push_back(static_cast<Index>(i));
    parts[g] = forecast_split(models.model(keys[g]), data, members, tag, h, cfg);
  });

  HorizonForecast out;
  out.horizon = h;
  Index total = 0;
  for (const auto& p : parts) total += static_cast<Index>(p.series.size());
  const Index pdim = data.components();
  out.point.resize(pdim, total);
  out.targets.resize(pdim, total);
  const bool quantile = cfg.mode == ForecastMode::Quantile;
  if (quantile) out.quantiles.assign(cfg.quantiles.size(), Eigen::MatrixXd(pdim, total));

  std::vector<Index> cursor(parts.size(), 0);
  Index col = 0;
  for (std::size_t i = 0; i < routes.size(); ++i) {
    const auto g = static_cast<std::size_t>(std::lower_bound(keys.begin(), keys.end(), routes[i]) - keys.begin());
    const auto& p = parts[g];
    Index& c = cursor[g];
    while (c < static_cast<Index>(p.series.size()) && p.series[static_cast<std::size_t>(c)] == static_cast<Index>(i)) {
      out.point.col(col) = p.point.col(c);
      out.targets.col(col) = p.targets.col(c);
      for (std::size_t q = 0; q < out.quantiles.size(); ++q) out.quantiles[q].col(col) = p.quantiles[q].col(c);
      out.series.push_back(static_cast<Index>(i));
      ++c;
      ++col;
    }
  }
  return out;
}

std::vector<std::vector<SeriesMetrics>> evaluate_routed(const RoutedModels& models, const PreparedData& data,
                                                        SplitTag tag, std::span<const Index> horizons,
                                                        const TrainConfig& cfg,
                                                        const CalibrationTable* calibration) {
  const auto series = all_series(data.num_series());
  std::vector<std::vector<SeriesMetrics>> out;
  for (Index h : horizons) {
    const auto fc = routed_forecast(models, data, tag, h, cfg);
    std::optional<double> scale;
    if (calibration) scale = calibration->scale_for(h);
    out.push_back(score_series(fc, series, cfg, scale));
  }
  return out;
}

std::vector<std::pair<Index, IntervalStream>> routed_interval_streams(const RoutedModels& models,
                                                                      const PreparedData& data,
                                                                      std::span<const Index> horizons,
                                                                      const TrainConfig& cfg) {
  if (cfg.mode != ForecastMode::Quantile) throw ConfigError("interval calibration needs quantile mode");
  std::vector<std::pair<Index, IntervalStream>> out;
  for (Index h : horizons) {
    auto fc = routed_forecast(models, data, SplitTag::Val, h, cfg);
    IntervalStream s;
    s.median = std::move(fc.point);
    s.lower = fc.quantiles.front();
    s.upper = fc.quantiles.back();
    s.targets = std::move(fc.targets);
    out.emplace_back(h, std::move(s));
  }
  return out;
}

Index assign_new_series(const Eigen::MatrixXd& segment, const RoutedModels& models, const TrainConfig& cfg,
                        std::vector<double>* losses) {
  const Index w = cfg.window, len = segment.rows();
  if (len < w + 1) throw DataError("new-series segment must contain at least w + 1 steps");
  if (segment.cols() != models.global.shape().components) throw DataError("new-series segment has wrong width");
  if (!segment.allFinite()) throw DataError("new-series segment must be finite (standardized and imputed)");

  const Index n = len - w;
  StepBatch steps(static_cast<std::size_t>(w), Eigen::MatrixXd(segment.cols(), n));
  Eigen::MatrixXd targets(segment.cols(), n);
  for (Index j = 0; j < n; ++j) {
    for (Index s = 0; s < w; ++s) steps[static_cast<std::size_t>(s)].col(j) = segment.row(j + s).transpose();
    targets.col(j) = segment.row(j + w).transpose();
  }
  auto score = [&](const ParamSet& p) {
    if (cfg.mode == ForecastMode::Point)
      return window_losses(forward_point(p, steps), targets, LossKind::Huber, cfg.delta).mean();
    return window_losses(forward_quantiles(p, steps), targets, cfg.quantiles).mean();
  };

  double best = score(models.global);
  Index route = -1;
  if (losses) losses->assign(models.prototypes.size() + 1, kNaN), (*losses)[0] = best;
  for (std::size_t k = 0; k < models.prototypes.size(); ++k) {
    if (models.flags.flagged[k]) continue;
    const double l = score(models.prototypes[k]);
    if (losses) (*losses)[k + 1] = l;
    if (l < best) best = l, route = static_cast<Index>(k);
  }
  return route;
}

}  // namespace adapool

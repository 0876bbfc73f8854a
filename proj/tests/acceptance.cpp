// Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero on any FAIL.

#include "adapool/baselines.hpp"
#include "adapool/calibration.hpp"
#include "adapool/errors.hpp"
#include "adapool/kmeans.hpp"
#include "adapool/losses.hpp"
#include "adapool/pipeline.hpp"
#include "adapool/synthetic.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <sstream>

using namespace adapool;
using namespace adapool::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

void progress(const std::string& s) { std::fprintf(stderr, "[acceptance] %s\n", s.c_str()); }

bool bitwise(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- 1 ----------------------------------------------------------------------

Verdict gradients() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const bool quantile = inst % 2 == 1;
    const ModelShape shape{3, 2, 4, quantile ? 3 : 0};
    ParamSet ps = random_params(shape, rng);
    ParamSet anchor = random_params(shape, rng);
    const StepBatch x = random_steps(5, 3, 4, rng);
    const Eigen::MatrixXd y = random_matrix(3, 4, rng, 2.0);
    Objective obj;
    obj.mode = quantile ? ForecastMode::Quantile : ForecastMode::Point;
    obj.levels = {0.1, 0.5, 0.9};
    obj.eta = 0.3;
    ParamSet grad;
    loss_and_gradients(ps, &anchor, x, y, obj, grad);
    auto f = [&](const Eigen::VectorXd& v) {
      ParamSet p = ps;
      p.flat() = v;
      ParamSet g;
      return loss_and_gradients(p, &anchor, x, y, obj, g);
    };
    worst = std::max(worst, max_relative_error(grad.flat(), finite_difference(f, ps.flat(), 1e-5)));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 10.0,
          fmt("20 instances (10 point, 10 quantile), max rel. error %.2e (< 1e-4), %.2f s (< 10 s)", worst, secs)};
}

// ---- 2 ----------------------------------------------------------------------

Verdict loss_oracles() {
  const double e1 = std::abs(huber(0.5, 1.0) - 0.125);
  const double e2 = std::abs(huber(2.0, 1.0) - 1.5);
  const double e3 = std::abs(pinball(0.0, 1.0, 0.9) - 0.9);
  const double e4 = std::abs(pinball(0.0, -1.0, 0.9) - 0.1);
  const double unit = std::max({e1, e2, e3, e4});

  std::mt19937_64 rng(7);
  std::normal_distribution<double> dist;
  std::uniform_real_distribution<double> qd(0.02, 0.98);
  double gap = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> xs(31);
    for (auto& x : xs) x = dist(rng);
    const double q = qd(rng);
    auto mean_loss = [&](double a) {
      double s = 0;
      for (double x : xs) s += pinball(a, x, q);
      return s / static_cast<double>(xs.size());
    };
    // Empirical minimizer: the piecewise-linear objective attains its minimum at a sample.
    double best = mean_loss(xs[0]);
    for (double a : xs) best = std::min(best, mean_loss(a));
    auto sorted = xs;
    std::sort(sorted.begin(), sorted.end());
    const double oracle = sorted[static_cast<std::size_t>(std::ceil(q * static_cast<double>(xs.size()))) - 1];
    gap = std::max(gap, std::abs(best - mean_loss(oracle)));
  }
  return {unit <= 1e-12 && gap <= 1e-12,
          fmt("Huber/pinball unit values max error %.1e (<= 1e-12); minimizer vs sorted quantile, 100 samples, "
              "max loss gap %.1e (<= 1e-12)",
              unit, gap)};
}

// ---- 3 ----------------------------------------------------------------------

Verdict non_crossing() {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> qdist(2, 6);
  long crossings = 0, checked = 0;
  for (int draw = 0; draw < 1000; ++draw) {
    const ModelShape shape{3, 2, 4, qdist(rng)};
    const ParamSet ps = random_params(shape, rng, 3.0);
    const auto fan = forward_quantiles(ps, random_steps(5, 3, 4, rng));
    for (std::size_t j = 1; j < fan.latent.size(); ++j) {
      crossings += (fan.latent[j].array() < fan.latent[j - 1].array()).count();
      checked += fan.latent[j].size();
    }
  }
  return {crossings == 0, fmt("1000 draws, %ld adjacent latent pairs, %ld crossings", checked, crossings)};
}

// ---- 4 ----------------------------------------------------------------------

Verdict leakage(const fs::path& scratch) {
  SyntheticSpec spec;
  spec.num_series = 10;
  spec.length = 120;
  spec.components = 4;
  spec.seed = 5;
  const SyntheticData syn = generate(spec);
  const SplitSpec split{72, 24, 24};

  MtsDataset perturbed = syn.dataset;
  std::mt19937_64 rng(3);
  for (auto& s : perturbed.series) s.bottomRows(48) = random_matrix(48, 4, rng, 25.0);

  TrainConfig cfg;
  cfg.window = 6;
  cfg.hidden = 6;
  cfg.epochs = 3;
  auto [s1, d1] = fit_impute_standardize(syn.dataset, split);
  auto [s2, d2] = fit_impute_standardize(perturbed, split);
  const bool stdz = bitwise(s1.mu, s2.mu) && bitwise(s1.sigma, s2.sigma) && bitwise(s1.fill, s2.fill);
  const ParamSet g1 = fit_global(PreparedData(d1, split), cfg);
  const ParamSet g2 = fit_global(PreparedData(d2, split), cfg);
  const bool global = bitwise(g1.flat(), g2.flat());
  const bool features = bitwise(series_features(syn.dataset, 72), series_features(perturbed, 72));

  // Split-access log through the real pipeline.
  write_csv_dir(syn.dataset, scratch / "leak_data");
  RunConfig rc = parse_config(
      "window = 6\nhidden = 4\nepochs = 2\nprototype_epochs = 1\ncandidates = 2\nseeds = 0\nmax_iters = 2\n");
  rc.data = scratch / "leak_data";
  rc.out = scratch / "runs";
  rc.run_id = "leakage";
  Run run(rc);
  run.prepare();
  run.select(true);
  std::uint64_t before = 0;
  for (const auto& e : run.manifest()["audit"]) before += e["test"].get<std::uint64_t>();
  run.evaluate();
  std::uint64_t test_phase = 0, other = 0;
  for (const auto& e : run.manifest()["audit"])
    (e["phase"] == "test" ? test_phase : other) += e["test"].get<std::uint64_t>();

  return {stdz && global && features && before == 0 && other == 0 && test_phase > 0,
          fmt("VAL+TEST perturbed: standardizer %s, TRAIN GLOBAL %s, FEAT-KMEANS features %s; TEST reads before "
              "evaluate = %llu, inside evaluate = %llu",
              stdz ? "identical" : "CHANGED", global ? "identical" : "CHANGED", features ? "identical" : "CHANGED",
              static_cast<unsigned long long>(before + other), static_cast<unsigned long long>(test_phase))};
}

// ---- synthetic sweeps shared by 5-8 and 10 ---------------------------------

struct Repetition {
  double alpha = 1;
  int rep = 0;
  SyntheticData syn;
  std::unique_ptr<PreparedData> data;
  ParamSet global;
  SelectionResult selection;
  RoutedModels ours_final, global_final;
  double ours_mse = 0, global_mse = 0, ari = 0, separability = 0, seconds = 0;
};

TrainConfig desk_config(int rep) {
  TrainConfig cfg;
  cfg.window = 8;
  cfg.hidden = 8;
  cfg.epochs = 20;
  cfg.prototype_epochs = 6;
  cfg.learning_rate = 3e-3;
  cfg.seed = static_cast<std::uint64_t>(rep);
  return cfg;
}

Repetition run_repetition(double alpha, int rep) {
  const auto t0 = Clock::now();
  Repetition r;
  r.alpha = alpha;
  r.rep = rep;
  SyntheticSpec spec;  // N=30, T=300, P=8, K_true=3, default noise
  spec.alpha = alpha;
  spec.seed = static_cast<std::uint64_t>(100 + rep);
  r.syn = generate(spec);
  const SplitSpec split{180, 60, 60};
  r.data = std::make_unique<PreparedData>(fit_impute_standardize(r.syn.dataset, split).second, split);
  r.separability = feature_separability(r.syn, split.train);

  const TrainConfig cfg = desk_config(rep);
  SelectionConfig sel;  // K in {2..5}, seeds 0..4
  r.global = fit_global(*r.data, cfg);
  r.selection = select_k(r.global, *r.data, sel, cfg);
  r.ari = adjusted_rand_index(r.selection.chosen().outer.assignment.labels, r.syn.labels);

  r.ours_final = refit_trainval(routed_models(r.global, r.selection.chosen()), *r.data, cfg);
  r.global_final = refit_trainval(global_only(r.global, r.data->num_series()), *r.data, cfg);
  const Index h1[] = {1};
  const auto so = evaluate_routed(r.ours_final, *r.data, SplitTag::Test, h1, cfg)[0];
  const auto sg = evaluate_routed(r.global_final, *r.data, SplitTag::Test, h1, cfg)[0];
  const MetricRow row = summarize("ours", 1, r.selection.chosen().k, so, sg, {});
  r.ours_mse = row.mse;
  r.global_mse = summarize("global", 1, 1, sg, sg, {}).mse;
  r.seconds = seconds_since(t0);
  progress(fmt("alpha=%.0f rep %d: K*=%lld ARI=%.3f ours=%.5f global=%.5f (%.1f s)", alpha, rep,
               static_cast<long long>(r.selection.chosen().k), r.ari, r.ours_mse, r.global_mse, r.seconds));
  return r;
}

// ---- 5 ----------------------------------------------------------------------

Verdict coordinate_descent(const std::vector<Repetition>& reps) {
  long iterations = 0, violations = 0, monotone_violations = 0;
  for (const auto& r : reps)
    for (const auto& run : r.selection.runs) {
      for (std::size_t j = 0; j < run.outer.trace_cost.size(); ++j) {
        ++iterations;
        if (run.outer.trace_cost[j] != run.outer.trace_min_cost[j]) ++violations;
      }
    }

  // Brute force over all 2^6 labelings with fixed, trained prototypes.
  SyntheticSpec spec;
  spec.num_series = 6;
  spec.length = 90;
  spec.components = 3;
  spec.regimes = 2;
  spec.seed = 8;
  const SplitSpec split{54, 18, 18};
  PreparedData data(fit_impute_standardize(generate(spec).dataset, split).second, split);
  TrainConfig cfg;
  cfg.window = 5;
  cfg.hidden = 4;
  cfg.epochs = 5;
  cfg.prototype_epochs = 3;
  const ParamSet global = fit_global(data, cfg);
  int mismatches = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Assignment init = init_assignments(6, 2, seed, InitStrategy::RandomBalanced);
    const PrototypeSet protos = fit_prototypes(init, global, data, cfg, seed);
    const Index hs[] = {1, 3, 6};
    const CostMatrix cost = compute_cost_matrix(protos, data, hs, cfg.loss(), cfg);
    const Assignment got = reassign(cost, init);
    if (assignment_cost(cost, got.labels) > assignment_cost(cost, init.labels)) ++monotone_violations;
    double best = std::numeric_limits<double>::infinity();
    std::vector<Index> best_labels;
    for (int mask = 0; mask < 64; ++mask) {
      std::vector<Index> l(6);
      for (int i = 0; i < 6; ++i) l[static_cast<std::size_t>(i)] = (mask >> i) & 1;
      const double v = assignment_cost(cost, l);
      if (v < best) best = v, best_labels = l;
    }
    if (got.labels != best_labels || assignment_cost(cost, got.labels) != best) ++mismatches;
  }
  return {violations == 0 && mismatches == 0 && monotone_violations == 0,
          fmt("%ld reassignments across %zu sweeps: %ld with sum C_i,c_i != sum min_k C_ik; N=6 K=2 brute force "
              "(3 prototype sets x 64 labelings): %d mismatches, %ld monotonicity violations",
              iterations, reps.size(), violations, mismatches, monotone_violations)};
}

// ---- 6 ----------------------------------------------------------------------

Verdict fallback_dominance(const std::vector<Repetition>& reps) {
  long runs = 0, violations = 0;
  for (const auto& r : reps)
    for (const auto& run : r.selection.runs) {
      ++runs;
      if (!(run.risk.routed <= run.risk.global)) ++violations;
    }

  // Corrupt every prototype of the chosen run of the first repetition.
  const Repetition& r = reps.front();
  const TrainConfig cfg = desk_config(r.rep);
  ClusterRun run = r.selection.chosen();
  std::mt19937_64 rng(13);
  for (auto& p : run.outer.prototypes.params)
    p.specialized() += random_matrix(p.specialized().size(), 1, rng, 3.0).col(0);
  std::vector<const ParamSet*> models;
  for (const auto& p : run.outer.prototypes.params) models.push_back(&p);
  const Index h1[] = {1};
  run.outer.val_h1 = evaluate_losses(models, *r.data, SplitTag::Val, h1, cfg.loss(), cfg).at(1);
  run.flags = compute_fallback(run.outer.assignment, run.outer.val_h1, r.selection.global_val_h1);
  const RoutedModels corrupted = refit_trainval(routed_models(r.global, run), *r.data, cfg);

  const Index hs[] = {1, 3, 6};
  const auto sc = evaluate_routed(corrupted, *r.data, SplitTag::Test, hs, cfg);
  const auto sg = evaluate_routed(r.global_final, *r.data, SplitTag::Test, hs, cfg);
  std::vector<bool> to_global;
  for (Index x : corrupted.routes()) to_global.push_back(x < 0);
  bool identical = true;
  double fb = 0;
  for (std::size_t j = 0; j < 3; ++j) {
    const MetricRow a = summarize("ours", hs[j], run.k, sc[j], sg[j], to_global);
    const MetricRow b = summarize("global", hs[j], 1, sg[j], sg[j], {});
    identical = identical && a.mse == b.mse && a.mae == b.mae;
    for (std::size_t i = 0; i < sc[j].size(); ++i)
      identical = identical && sc[j][i].mse == sg[j][i].mse && sc[j][i].mae == sg[j][i].mae;
    fb = a.fb_pct;
  }
  return {violations == 0 && fb == 100.0 && identical,
          fmt("%ld runs, %ld with routed VAL risk > GLOBAL; all prototypes corrupted: Fb%%=%.0f, TEST metrics %s "
              "GLOBAL's at h=1,3,6",
              runs, violations, fb, identical ? "bitwise equal to" : "DIFFER from")};
}

// ---- 7 ----------------------------------------------------------------------

Verdict heterogeneity(const std::vector<Repetition>& reps, double seconds) {
  int k_ok = 0, ari_ok = 0, below = 0;
  std::vector<double> gains;
  std::string ks, aris, gs;
  double sep = 1.0;
  for (const auto& r : reps) {
    const Index k = r.selection.chosen().k;
    k_ok += (k == 3 || k == 4);
    ari_ok += r.ari > 0.8;
    below += r.ours_mse < r.global_mse;
    const double gain = relative_gain(r.global_mse, r.ours_mse);
    gains.push_back(gain);
    ks += fmt("%s%lld", ks.empty() ? "" : ",", static_cast<long long>(k));
    aris += fmt("%s%.2f", aris.empty() ? "" : ",", r.ari);
    gs += fmt("%s%.1f", gs.empty() ? "" : ",", gain);
    sep = std::min(sep, r.separability);
  }
  const int n = static_cast<int>(reps.size());
  const double med = median(gains);
  return {k_ok >= 4 && ari_ok >= 4 && below == n && med >= 5.0,
          fmt("(a) K*=[%s] in {3,4}: %d/%d; (b) ARI=[%s] > 0.8: %d/%d; (c) OURS < GLOBAL TEST MSE: %d/%d, gains%%=[%s], "
              "median %.2f%% (>= 5%%); min 1-NN separability %.2f; %.0f s (target 300 s: %s)",
              ks.c_str(), k_ok, n, aris.c_str(), ari_ok, n, below, n, gs.c_str(), med, sep, seconds,
              seconds < 300 ? "met" : "missed")};
}

// ---- 8 ----------------------------------------------------------------------

Verdict weak_heterogeneity(const std::vector<Repetition>& reps) {
  double worst = 0;
  std::string rel;
  for (const auto& r : reps) {
    const double d = 100.0 * (r.ours_mse - r.global_mse) / r.global_mse;
    worst = std::max(worst, std::abs(d));
    rel += fmt("%s%+.2f", rel.empty() ? "" : ",", d);
  }
  return {worst <= 2.0, fmt("alpha=0, %zu reps: routed vs GLOBAL TEST MSE diff%% = [%s], max |diff| %.2f%% (<= 2%%)",
                            reps.size(), rel.c_str(), worst)};
}

// ---- 9 ----------------------------------------------------------------------

Verdict calibration_check() {
  SyntheticSpec spec;
  spec.num_series = 12;
  spec.length = 200;
  spec.components = 4;
  spec.seed = 21;
  const SplitSpec split{120, 40, 40};
  PreparedData data(fit_impute_standardize(generate(spec).dataset, split).second, split);
  TrainConfig cfg;
  cfg.mode = ForecastMode::Quantile;
  cfg.window = 8;
  cfg.hidden = 8;
  cfg.epochs = 10;
  cfg.prototype_epochs = 4;
  cfg.learning_rate = 3e-3;
  SelectionConfig sel;
  sel.candidates = {2};
  sel.seeds = {0};
  sel.max_iters = 3;
  const ParamSet global = fit_global(data, cfg);
  const SelectionResult res = select_k(global, data, sel, cfg);
  const RoutedModels routed = routed_models(global, res.chosen());
  const Index hs[] = {1, 3, 6};
  const auto streams = routed_interval_streams(routed, data, hs, cfg);
  const CalibrationTable table = calibrate(streams, 0.8);
  const auto grid = calibration_grid();

  int attainable = 0, met = 0, minimal = 0;
  std::string detail;
  for (std::size_t j = 0; j < streams.size(); ++j) {
    const auto& s = streams[j].second;
    auto cov = [&](double scale) {
      auto [lo, hi] = apply_calibration(s.median, s.lower, s.upper, scale);
      return coverage(s.targets, lo, hi);
    };
    const bool can = cov(grid.back()) >= 0.8;
    attainable += can;
    const double c = cov(table.scale[j]);
    if (can && c >= 0.8) ++met;
    const auto pos = std::find(grid.begin(), grid.end(), table.scale[j]) - grid.begin();
    if (!can || pos == 0 || cov(grid[static_cast<std::size_t>(pos) - 1]) < 0.8) ++minimal;
    detail += fmt("%sh=%lld s=%.3f cov=%.3f", detail.empty() ? "" : ", ", static_cast<long long>(hs[j]),
                  table.scale[j], c);
  }

  std::mt19937_64 rng(4);
  double identity = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const Eigen::MatrixXd m = random_matrix(4, 9, rng, 3.0);
    const Eigen::MatrixXd lo = m - random_matrix(4, 9, rng).cwiseAbs();
    const Eigen::MatrixXd hi = m + random_matrix(4, 9, rng).cwiseAbs();
    auto [l2, u2] = apply_calibration(m, lo, hi, 1.0);
    identity = std::max({identity, (l2 - lo).cwiseAbs().maxCoeff(), (u2 - hi).cwiseAbs().maxCoeff()});
  }
  return {met == attainable && minimal == 3 && identity <= 1e-15,
          fmt("quantile run: %s; attainable %d/3, reached 0.80 on %d/%d, smallest grid scale on %d/3; apply(s=1) "
              "max deviation %.1e (<= 1e-15)",
              detail.c_str(), attainable, met, attainable, minimal, identity)};
}

// ---- 10 ---------------------------------------------------------------------

Verdict paper_scale(const fs::path& scratch, const std::vector<Repetition>& hetero, bool fallback_collapse) {
  // A wide sensor table in the PEMS layout: rows are 5-minute steps of consecutive days.
  SyntheticSpec spec;
  spec.num_series = 10;
  spec.length = 96;
  spec.components = 5;
  spec.seed = 31;
  const SyntheticData syn = generate(spec);
  fs::create_directories(scratch);
  const fs::path wide = scratch / "pems_wide.csv";
  {
    std::ofstream out(wide);
    out.precision(17);
    for (const auto& day : syn.dataset.series)
      for (Index t = 0; t < day.rows(); ++t)
        for (Index p = 0; p < day.cols(); ++p) out << day(t, p) << (p + 1 < day.cols() ? ',' : '\n');
  }
  RunConfig rc = parse_config(
      "format = pems\nday_length = 96\nwindow = 6\nhidden = 4\nepochs = 3\nprototype_epochs = 2\n"
      "candidates = 2,3\nseeds = 0\nmax_iters = 2\n");
  rc.data = wide;
  rc.out = scratch / "runs";
  rc.run_id = "pems_layout";
  Run run(rc);
  run.prepare();
  run.select(true);
  const auto rows = run.evaluate();

  bool quantile = false;
  auto merged = merge_reports({rc.run_dir()}, &quantile);
  std::map<std::string, int> per_method;
  bool scaled = merged.size() == rows.size();
  for (std::size_t i = 0; i < merged.size() && scaled; ++i) {
    const MetricRow s = paper_scaled(merged[i].second);
    scaled = s.mse == rows[i].mse * 100 && s.delta_pct == rows[i].delta_pct;
    ++per_method[s.method];
  }
  bool structure = per_method.size() == 5 && run.manifest()["prepare"]["N"] == 10;
  for (const auto& [m, count] : per_method) structure = structure && count == 3;

  // Directional claims on the heterogeneous synthetic data.
  const Repetition& r = hetero.front();
  const TrainConfig cfg = desk_config(r.rep);
  const RoutedModels ind = refit_method(Method::Individual, fit_individual(r.global, *r.data, cfg), *r.data, cfg);
  const Index h1[] = {1};
  const auto si = evaluate_routed(ind, *r.data, SplitTag::Test, h1, cfg)[0];
  const auto sg = evaluate_routed(r.global_final, *r.data, SplitTag::Test, h1, cfg)[0];
  const double ind_mse = summarize("individual", 1, 30, si, sg, {}).mse;
  const bool global_beats_individual = r.global_mse < ind_mse;
  int ours_beats_global = 0;
  for (const auto& x : hetero) ours_beats_global += x.ours_mse < x.global_mse;
  const bool directional = global_beats_individual && ours_beats_global * 2 > static_cast<int>(hetero.size()) &&
                           fallback_collapse;

  return {structure && scaled && directional,
          fmt("PEMS-layout file -> %zu report rows (5 methods x h=1,3,6), --paper-scale x100 %s; GLOBAL %.4f vs "
              "INDIVIDUAL %.4f TEST MSE (GLOBAL better: %s); OURS beats GLOBAL in %d/%zu heterogeneous reps; "
              "Fb%%=100 collapses to GLOBAL: %s. Reference PEMS-BAY figures (GLOBAL 7.58 vs INDIVIDUAL 10.11, K*=7, +18.12%%) "
              "need the real data and are not reproduced here",
              merged.size(), scaled ? "exact" : "WRONG", r.global_mse, ind_mse, global_beats_individual ? "yes" : "no",
              ours_beats_global, hetero.size(), fallback_collapse ? "yes" : "no")};
}

}  // namespace

int main() {
  const fs::path scratch = fs::temp_directory_path() / "adapool_acceptance";
  fs::remove_all(scratch);
  fs::create_directories(scratch);
  std::map<int, Verdict> v;

  progress("criteria 1-4");
  v[1] = gradients();
  v[2] = loss_oracles();
  v[3] = non_crossing();
  v[4] = leakage(scratch);

  progress("criterion 7 sweeps (alpha = 1)");
  const auto t7 = Clock::now();
  std::vector<Repetition> hetero;
  for (int rep = 0; rep < 5; ++rep) hetero.push_back(run_repetition(1.0, rep));
  const double secs7 = seconds_since(t7);

  progress("criterion 8 sweeps (alpha = 0)");
  std::vector<Repetition> weak;
  for (int rep = 0; rep < 5; ++rep) weak.push_back(run_repetition(0.0, rep));

  std::vector<Repetition*> all;
  std::vector<Repetition> both;
  v[7] = heterogeneity(hetero, secs7);
  v[8] = weak_heterogeneity(weak);
  for (auto& r : hetero) both.push_back(std::move(r));
  for (auto& r : weak) both.push_back(std::move(r));
  v[5] = coordinate_descent(both);
  v[6] = fallback_dominance(both);

  progress("criterion 9");
  v[9] = calibration_check();
  progress("criterion 10");
  const std::vector<Repetition> hetero_view(std::make_move_iterator(both.begin()),
                                            std::make_move_iterator(both.begin() + 5));
  v[10] = paper_scale(scratch, hetero_view, v[6].pass);

  fs::remove_all(scratch);
  int failed = 0;
  for (const auto& [id, verdict] : v) {
    std::printf("criterion %2d: %s  %s\n", id, verdict.pass ? "PASS" : "FAIL", verdict.detail.c_str());
    failed += !verdict.pass;
  }
  std::printf("%d/10 criteria passed\n", 10 - failed);
  return failed == 0 ? 0 : 1;
}

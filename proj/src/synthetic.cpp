#include "adapool/synthetic.hpp"

#include "adapool/errors.hpp"
#include "adapool/kmeans.hpp"
#include "adapool/params.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <random>

namespace adapool {

void SyntheticSpec::validate() const {
  if (num_series < 1 || length < 2 || components < 1) throw ConfigError("synthetic: empty shape");
  if (regimes < 1 || regimes > num_series) throw ConfigError("synthetic: need 1 <= K_true <= N");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("synthetic: alpha must lie in [0, 1]");
  if (!(noise >= 0.0)) throw ConfigError("synthetic: noise must be >= 0");
  if (!(spectral_norm > 0.0 && spectral_norm < 0.95))
    throw ConfigError("synthetic: spectral_norm must lie in (0, 0.95)");
  if (period < 1 || burn_in < 0) throw ConfigError("synthetic: bad period or burn-in");
}

double spectral_radius(const Eigen::MatrixXd& a) {
  return Eigen::EigenSolver<Eigen::MatrixXd>(a, false).eigenvalues().cwiseAbs().maxCoeff();
}

namespace {

Eigen::MatrixXd gaussian(Index rows, Index cols, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> d(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) m(r, c) = d(rng);
  return m;
}

// Raw regime draws; interpolation toward the mean happens afterwards.
SyntheticRegime draw_regime(const SyntheticSpec& spec, std::mt19937_64& rng) {
  const Index p = spec.components;
  SyntheticRegime g;
  Eigen::MatrixXd a = gaussian(p, p, rng, 1.0);
  const double norm = Eigen::JacobiSVD<Eigen::MatrixXd>(a).singularValues()(0);
  g.transition = a * (spec.spectral_norm / norm);
  g.level = gaussian(p, 1, rng, spec.level_scale).col(0);
  const double phase = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  const Eigen::VectorXd amp = gaussian(p, 1, rng, spec.season_scale).col(0);
  g.cosine = amp * std::cos(phase);
  g.sine = amp * std::sin(phase);
  return g;
}

template <typename M>
M blend(const M& mean, const M& own, double alpha) {
  return (1.0 - alpha) * mean + alpha * own;
}

}  // namespace

SyntheticData generate(const SyntheticSpec& spec) {
  spec.validate();
  const Index n = spec.num_series, k = spec.regimes, p = spec.components;
  std::mt19937_64 rng(mix_seed(spec.seed, 0x5157));

  std::vector<SyntheticRegime> raw;
  for (Index r = 0; r < k; ++r) raw.push_back(draw_regime(spec, rng));
  SyntheticRegime mean{Eigen::MatrixXd::Zero(p, p), Eigen::VectorXd::Zero(p), Eigen::VectorXd::Zero(p),
                       Eigen::VectorXd::Zero(p)};
  for (const auto& g : raw) {
    mean.transition += g.transition;
    mean.level += g.level;
    mean.cosine += g.cosine;
    mean.sine += g.sine;
  }
  const double inv = 1.0 / static_cast<double>(k);
  mean.transition *= inv;
  mean.level *= inv;
  mean.cosine *= inv;
  mean.sine *= inv;

  SyntheticData out;
  for (const auto& g : raw)
    out.regimes.push_back({blend(mean.transition, g.transition, spec.alpha), blend(mean.level, g.level, spec.alpha),
                           blend(mean.cosine, g.cosine, spec.alpha), blend(mean.sine, g.sine, spec.alpha)});

  out.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out.labels[static_cast<std::size_t>(i)] = i % k;
  std::shuffle(out.labels.begin(), out.labels.end(), rng);

  const double omega = 2.0 * std::numbers::pi / static_cast<double>(spec.period);
  std::normal_distribution<double> eps(0.0, 1.0);
  for (Index i = 0; i < n; ++i) {
    const auto& g = out.regimes[static_cast<std::size_t>(out.labels[static_cast<std::size_t>(i)])];
    Eigen::MatrixXd x(spec.length, p);
    Eigen::VectorXd state = Eigen::VectorXd::Zero(p);
    for (Index t = -spec.burn_in; t < spec.length; ++t) {
      Eigen::VectorXd e(p);
      for (Index c = 0; c < p; ++c) e(c) = spec.noise * eps(rng);
      const double wt = omega * static_cast<double>(t);
      state = g.transition * state + g.level + g.cosine * std::cos(wt) + g.sine * std::sin(wt) + e;
      if (t >= 0) x.row(t) = state.transpose();
    }
    out.dataset.series.push_back(std::move(x));
    out.dataset.mask.push_back(MaskMatrix::Constant(spec.length, p, true));
    char name[32];
    std::snprintf(name, sizeof name, "series_%05lld", static_cast<long long>(i));
    out.dataset.names.emplace_back(name);
  }
  return out;
}

double adjusted_rand_index(const std::vector<Index>& a, const std::vector<Index>& b) {
  if (a.size() != b.size()) throw ConfigError("ARI: label vectors differ in length");
  const auto n = static_cast<double>(a.size());
  if (a.size() < 2) return 1.0;
  std::map<std::pair<Index, Index>, double> cells;
  std::map<Index, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cells[{a[i], b[i]}] += 1;
    rows[a[i]] += 1;
    cols[b[i]] += 1;
  }
  auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0, sa = 0, sb = 0;
  for (const auto& [key, v] : cells) index += c2(v);
  for (const auto& [key, v] : rows) sa += c2(v);
  for (const auto& [key, v] : cols) sb += c2(v);
  const double expected = sa * sb / c2(n);
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;  // both labelings trivial in the same way
  return (index - expected) / (max_index - expected);
}

double feature_separability(const SyntheticData& data, Index train_rows) {
  return loo_nearest_neighbor_accuracy(standardize_columns(series_features(data.dataset, train_rows)),
                                       data.labels);
}

}  // namespace adapool

#include "adapool/model.hpp"

#include "adapool/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace adapool {

namespace {

struct StepCache {
  Eigen::MatrixXd encoded;  // r x n
  Eigen::MatrixXd h_prev;   // H x n
  Eigen::MatrixXd update;   // H x n
  Eigen::MatrixXd reset;    // H x n
  Eigen::MatrixXd cand;     // H x n
  Eigen::MatrixXd un_h;     // H x n, candidate recurrent term before reset gating
};

Eigen::MatrixXd sigmoid_of(const Eigen::MatrixXd& m) {
  return m.unaryExpr([](double x) { return sigmoid(x); });
}

// Gate nonlinearities written over exp so Eigen vectorizes them; both saturate
// cleanly when exp overflows.
Eigen::MatrixXd gate_sigmoid(const Eigen::MatrixXd& m) {
  return (1.0 + (-m.array()).exp()).inverse().matrix();
}

Eigen::ArrayXXd gate_tanh(const Eigen::ArrayXXd& a) {
  return 1.0 - 2.0 / ((2.0 * a).exp() + 1.0);
}

/// Runs the mixing layer and the GRU; returns the final hidden state (H x n).
Eigen::MatrixXd run_gru(const ParamSet& params, const StepBatch& steps,
                        std::vector<StepCache>* cache) {
  const auto& shape = params.shape();
  const Index hd = shape.hidden;
  if (steps.empty()) throw ConfigError("empty window");
  const Index n = steps.front().cols();
  const auto b_mix = params.mixing();
  const auto w_in = params.gate_input();
  const auto u_rec = params.gate_recurrent();
  const auto bias = params.gate_bias();

  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(hd, n);
  if (cache) cache->resize(steps.size());
  for (std::size_t s = 0; s < steps.size(); ++s) {
    if (steps[s].rows() != shape.components || steps[s].cols() != n)
      throw ConfigError("window shape does not match the model");
    Eigen::MatrixXd encoded = b_mix * steps[s];
    Eigen::MatrixXd gi = w_in * encoded;
    gi.colwise() += bias;
    Eigen::MatrixXd gh = u_rec.topRows(2 * hd) * h;
    Eigen::MatrixXd un_h = u_rec.bottomRows(hd) * h;
    Eigen::MatrixXd update = gate_sigmoid(gi.topRows(hd) + gh.topRows(hd));
    Eigen::MatrixXd reset = gate_sigmoid(gi.middleRows(hd, hd) + gh.bottomRows(hd));
    Eigen::MatrixXd cand = gate_tanh(gi.bottomRows(hd).array() + reset.array() * un_h.array()).matrix();
    Eigen::MatrixXd h_new =
        ((1.0 - update.array()) * cand.array() + update.array() * h.array()).matrix();
    if (cache) {
      auto& c = (*cache)[s];
      c.encoded = std::move(encoded);
      c.h_prev = std::move(h);
      c.update = std::move(update);
      c.reset = std::move(reset);
      c.cand = std::move(cand);
      c.un_h = std::move(un_h);
    }
    h = std::move(h_new);
  }
  return h;
}

/// Latent quantile head output (rQ x n) -> per-level latent quantiles.
std::vector<Eigen::MatrixXd> cumulate(const Eigen::MatrixXd& head, Index r, Index q) {
  std::vector<Eigen::MatrixXd> latent(static_cast<std::size_t>(q));
  latent[0] = head.topRows(r);
  for (Index j = 1; j < q; ++j)
    latent[static_cast<std::size_t>(j)] =
        latent[static_cast<std::size_t>(j - 1)] +
        head.middleRows(j * r, r).unaryExpr([](double x) { return softplus(x); });
  return latent;
}

QuantileForecast quantiles_from_hidden(const ParamSet& params, const Eigen::MatrixXd& h) {
  const auto& shape = params.shape();
  if (shape.quantiles < 1) throw ConfigError("model has no quantile head");
  Eigen::MatrixXd head = params.quantile_weight() * h;
  head.colwise() += params.quantile_bias();
  QuantileForecast out;
  out.latent = cumulate(head, shape.latent, shape.quantiles);
  out.values.reserve(out.latent.size());
  for (const auto& z : out.latent) out.values.push_back(params.mixing().transpose() * z);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (window < 1) throw ConfigError("window length must be >= 1");
  if (hidden < 1) throw ConfigError("hidden size must be >= 1");
  if (latent < 0) throw ConfigError("latent size must be >= 0");
  if (epochs < 0 || prototype_epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(eta >= 0)) throw ConfigError("eta must be >= 0");
  if (!(delta > 0)) throw ConfigError("delta must be > 0");
  if (mode == ForecastMode::Quantile) {
    if (quantiles.empty()) throw ConfigError("quantile grid is empty");
    for (std::size_t j = 0; j < quantiles.size(); ++j) {
      if (!(quantiles[j] > 0 && quantiles[j] < 1)) throw ConfigError("quantile levels must lie in (0,1)");
      if (j > 0 && !(quantiles[j] > quantiles[j - 1]))
        throw ConfigError("quantile levels must be strictly increasing");
    }
  }
}

ModelShape TrainConfig::shape(Index components) const {
  ModelShape s;
  s.components = components;
  s.latent = latent > 0 ? latent : std::min<Index>(16, components);
  s.hidden = hidden;
  s.quantiles = mode == ForecastMode::Quantile ? static_cast<Index>(quantiles.size()) : 0;
  return s;
}

std::size_t median_level(std::span<const double> levels) {
  if (levels.empty()) throw ConfigError("quantile grid is empty");
  std::size_t best = 0;
  for (std::size_t j = 1; j < levels.size(); ++j)
    if (std::abs(levels[j] - 0.5) < std::abs(levels[best] - 0.5)) best = j;
  return best;
}

StepBatch to_steps(const Eigen::Ref<const Eigen::MatrixXd>& window) {
  StepBatch steps;
  steps.reserve(static_cast<std::size_t>(window.rows()));
  for (Index t = 0; t < window.rows(); ++t) steps.emplace_back(window.row(t).transpose());
  return steps;
}

Eigen::MatrixXd forward_point(const ParamSet& params, const StepBatch& steps) {
  Eigen::MatrixXd h = run_gru(params, steps, nullptr);
  Eigen::MatrixXd latent = params.point_weight() * h;
  latent.colwise() += params.point_bias();
  return params.mixing().transpose() * latent;
}

Eigen::VectorXd forward_point(const ParamSet& params, const Eigen::Ref<const Eigen::MatrixXd>& window) {
  return forward_point(params, to_steps(window)).col(0);
}

QuantileForecast forward_quantiles(const ParamSet& params, const StepBatch& steps) {
  return quantiles_from_hidden(params, run_gru(params, steps, nullptr));
}

QuantileForecast forward_quantiles(const ParamSet& params,
                                   const Eigen::Ref<const Eigen::MatrixXd>& window) {
  return forward_quantiles(params, to_steps(window));
}

Eigen::MatrixXd rollout_point(const ParamSet& params, StepBatch steps, Index h) {
  if (h < 1) throw ConfigError("rollout horizon must be >= 1");
  for (Index k = 1;; ++k) {
    Eigen::MatrixXd pred = forward_point(params, steps);
    if (k == h) return pred;
    steps.erase(steps.begin());
    steps.push_back(std::move(pred));
  }
}

QuantileForecast rollout_quantiles(const ParamSet& params, StepBatch steps, Index h,
                                   std::size_t median) {
  if (h < 1) throw ConfigError("rollout horizon must be >= 1");
  for (Index k = 1;; ++k) {
    QuantileForecast fan = forward_quantiles(params, steps);
    if (k == h) return fan;
    steps.erase(steps.begin());
    steps.push_back(std::move(fan.values.at(median)));
  }
}

Objective Objective::from(const TrainConfig& cfg) {
  Objective o;
  o.mode = cfg.mode;
  o.delta = cfg.delta;
  o.levels = cfg.quantiles;
  o.eta = cfg.eta;
  return o;
}

double loss_and_gradients(const ParamSet& params, const ParamSet* anchor, const StepBatch& inputs,
                          const Eigen::MatrixXd& targets, const Objective& objective,
                          ParamSet& grad) {
  const auto& shape = params.shape();
  const Index n = targets.cols();
  const Index p_dim = shape.components;
  const Index r = shape.latent;
  const Index hd = shape.hidden;
  if (n == 0) throw ConfigError("empty batch");
  if (targets.rows() != p_dim) throw ConfigError("target dimension does not match the model");
  if (anchor && !(anchor->shape() == shape)) throw ConfigError("anchor shape mismatch");

  if (!(grad.shape() == shape)) grad = ParamSet(shape);
  grad.flat().setZero();

  std::vector<StepCache> cache;
  const Eigen::MatrixXd h_final = run_gru(params, inputs, &cache);
  const auto b_mix = params.mixing();
  auto g_mix = grad.mixing();
  Eigen::MatrixXd dh;
  double loss = 0.0;

  if (objective.mode == ForecastMode::Point) {
    Eigen::MatrixXd latent = params.point_weight() * h_final;
    latent.colwise() += params.point_bias();
    const Eigen::MatrixXd pred = b_mix.transpose() * latent;
    const double scale = 1.0 / static_cast<double>(n * p_dim);
    Eigen::MatrixXd dpred(p_dim, n);
    for (Index j = 0; j < n; ++j)
      for (Index p = 0; p < p_dim; ++p) {
        const double e = pred(p, j) - targets(p, j);
        loss += huber(e, objective.delta);
        dpred(p, j) = scale * huber_derivative(e, objective.delta);
      }
    loss *= scale;
    g_mix += latent * dpred.transpose();
    const Eigen::MatrixXd dlatent = b_mix * dpred;
    grad.point_weight() += dlatent * h_final.transpose();
    grad.point_bias() += dlatent.rowwise().sum();
    dh = params.point_weight().transpose() * dlatent;
  } else {
    const Index q = shape.quantiles;
    if (static_cast<Index>(objective.levels.size()) != q)
      throw ConfigError("quantile grid does not match the model head");
    Eigen::MatrixXd head = params.quantile_weight() * h_final;
    head.colwise() += params.quantile_bias();
    const auto latent = cumulate(head, r, q);
    const double scale = 1.0 / static_cast<double>(n * p_dim * q);
    std::vector<Eigen::MatrixXd> dlatent(static_cast<std::size_t>(q));
    for (Index j = 0; j < q; ++j) {
      const auto& z = latent[static_cast<std::size_t>(j)];
      const Eigen::MatrixXd pred = b_mix.transpose() * z;
      const double level = objective.levels[static_cast<std::size_t>(j)];
      Eigen::MatrixXd dpred(p_dim, n);
      for (Index c = 0; c < n; ++c)
        for (Index p = 0; p < p_dim; ++p) {
          loss += pinball(pred(p, c), targets(p, c), level);
          dpred(p, c) = scale * pinball_derivative(pred(p, c), targets(p, c), level);
        }
      g_mix += z * dpred.transpose();
      dlatent[static_cast<std::size_t>(j)] = b_mix * dpred;
    }
    loss *= scale;
    // latent_j = base + sum_{m<=j} softplus(delta_m): suffix sums flow back.
    Eigen::MatrixXd dhead(r * q, n);
    Eigen::MatrixXd suffix = Eigen::MatrixXd::Zero(r, n);
    for (Index j = q - 1; j >= 0; --j) {
      suffix += dlatent[static_cast<std::size_t>(j)];
      if (j == 0)
        dhead.topRows(r) = suffix;
      else
        dhead.middleRows(j * r, r) =
            (suffix.array() * sigmoid_of(head.middleRows(j * r, r)).array()).matrix();
    }
    grad.quantile_weight() += dhead * h_final.transpose();
    grad.quantile_bias() += dhead.rowwise().sum();
    dh = params.quantile_weight().transpose() * dhead;
  }

  // Backpropagation through time.
  const auto w_in = params.gate_input();
  const auto u_rec = params.gate_recurrent();
  auto g_w = grad.gate_input();
  auto g_u = grad.gate_recurrent();
  auto g_bias = grad.gate_bias();
  Eigen::MatrixXd dgates(3 * hd, n);
  for (std::size_t s = cache.size(); s-- > 0;) {
    const auto& c = cache[s];
    const Eigen::ArrayXXd upd = c.update.array();
    const Eigen::ArrayXXd rst = c.reset.array();
    const Eigen::ArrayXXd cnd = c.cand.array();
    const Eigen::ArrayXXd dha = dh.array();
    const Eigen::ArrayXXd dcand_pre = dha * (1.0 - upd) * (1.0 - cnd * cnd);
    const Eigen::ArrayXXd dupd_pre = dha * (c.h_prev.array() - cnd) * upd * (1.0 - upd);
    const Eigen::ArrayXXd drst_pre = dcand_pre * c.un_h.array() * rst * (1.0 - rst);
    const Eigen::MatrixXd dun_h = (dcand_pre * rst).matrix();
    dgates.topRows(hd) = dupd_pre.matrix();
    dgates.middleRows(hd, hd) = drst_pre.matrix();
    dgates.bottomRows(hd) = dcand_pre.matrix();

    g_w += dgates * c.encoded.transpose();
    g_bias += dgates.rowwise().sum();
    g_u.topRows(2 * hd) += dgates.topRows(2 * hd) * c.h_prev.transpose();
    g_u.bottomRows(hd) += dun_h * c.h_prev.transpose();

    const Eigen::MatrixXd dencoded = w_in.transpose() * dgates;
    g_mix += dencoded * inputs[s].transpose();

    dh = (dha * upd).matrix() + u_rec.topRows(2 * hd).transpose() * dgates.topRows(2 * hd) +
         u_rec.bottomRows(hd).transpose() * dun_h;
  }

  if (anchor && objective.eta > 0) {
    const Eigen::VectorXd diff = params.specialized() - anchor->specialized();
    loss += objective.eta * diff.squaredNorm();
    grad.specialized() += 2.0 * objective.eta * diff;
  }
  return loss;
}

Eigen::VectorXd window_losses(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& targets,
                              LossKind kind, double delta) {
  if (pred.rows() != targets.rows() || pred.cols() != targets.cols())
    throw ConfigError("prediction/target shape mismatch");
  Eigen::VectorXd out(pred.cols());
  for (Index j = 0; j < pred.cols(); ++j) {
    switch (kind) {
      case LossKind::Huber: out(j) = huber(pred.col(j), targets.col(j), delta); break;
      case LossKind::Squared: out(j) = squared_error(pred.col(j), targets.col(j)); break;
      case LossKind::Absolute: out(j) = absolute_error(pred.col(j), targets.col(j)); break;
      case LossKind::Pinball: throw ConfigError("pinball needs a quantile forecast");
    }
  }
  return out;
}

Eigen::VectorXd window_losses(const QuantileForecast& fan, const Eigen::MatrixXd& targets,
                              std::span<const double> levels) {
  if (fan.values.size() != levels.size()) throw ConfigError("quantile grid mismatch");
  const Index n = targets.cols();
  const Index p_dim = targets.rows();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  for (std::size_t j = 0; j < levels.size(); ++j)
    for (Index c = 0; c < n; ++c)
      for (Index p = 0; p < p_dim; ++p) out(c) += pinball(fan.values[j](p, c), targets(p, c), levels[j]);
  return out / static_cast<double>(p_dim * static_cast<Index>(levels.size()));
}

Adam::Adam(Index size, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(Eigen::VectorXd::Zero(size)),
      v_(Eigen::VectorXd::Zero(size)) {}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

TrainResult train(ParamSet init, const ParamSet* anchor, const PreparedData& data,
                  std::span<const WindowRef> windows, const TrainConfig& cfg, int epochs) {
  cfg.validate();
  if (windows.empty()) throw DataError("no training windows");
  const WindowBatch all = data.gather(windows, cfg.window, 1);
  const Objective objective = Objective::from(cfg);
  const Index n = all.size();

  TrainResult result{std::move(init), {}};
  ParamSet& params = result.params;
  ParamSet grad(params.shape());
  Adam adam(params.size(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
  std::mt19937_64 rng(cfg.seed);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  StepBatch inputs(static_cast<std::size_t>(cfg.window));
  Eigen::MatrixXd targets;

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index len = std::min(cfg.batch_size, n - start);
      const std::vector<Index> idx(order.begin() + start, order.begin() + start + len);
      for (std::size_t s = 0; s < inputs.size(); ++s) inputs[s] = all.steps[s](Eigen::all, idx);
      targets = all.targets(Eigen::all, idx);
      const double loss = loss_and_gradients(params, anchor, inputs, targets, objective, grad);
      if (!std::isfinite(loss) || !grad.all_finite()) {
        std::ostringstream msg;
        msg << "training diverged in epoch " << epoch << " (loss " << loss << ")";
        throw DivergenceError(msg.str(), epoch - 1);
      }
      epoch_loss += loss * static_cast<double>(len);
      Eigen::VectorXd& g = grad.flat();
      if (anchor) g.head(params.specialized_offset()).setZero();
      const double norm = g.norm();
      if (cfg.clip_norm > 0 && norm > cfg.clip_norm) g *= cfg.clip_norm / norm;
      adam.step(params.flat(), g);
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(n));
  }
  if (!params.all_finite()) throw DivergenceError("parameters became non-finite", epochs - 1);
  return result;
}

}  // namespace adapool

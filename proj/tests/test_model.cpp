#include "doctest.h"
#include "test_util.hpp"

#include "adapool/errors.hpp"
#include "adapool/model.hpp"

#include <cmath>

using namespace adapool;
using namespace adapool::testing;

namespace {

const ModelShape kTiny{3, 2, 4, 0};
const ModelShape kTinyQuantile{3, 2, 4, 3};

double loss_at(const ParamSet& like, const Eigen::VectorXd& flat, const ParamSet* anchor,
               const StepBatch& x, const Eigen::MatrixXd& y, const Objective& obj) {
  ParamSet p = like;
  p.flat() = flat;
  ParamSet scratch;
  return loss_and_gradients(p, anchor, x, y, obj, scratch);
}

PreparedData constant_data(Index n, Index t, Index p, double value) {
  std::vector<Eigen::MatrixXd> s(static_cast<std::size_t>(n), Eigen::MatrixXd::Constant(t, p, value));
  return PreparedData(make_dataset(std::move(s)), SplitSpec{t - 40, 20, 20});
}

}  // namespace

TEST_CASE("zero network predicts the zero vector") {
  ParamSet ps(ModelShape{4, 2, 3, 0});
  Eigen::MatrixXd window = Eigen::MatrixXd::Random(5, 4);
  CHECK(forward_point(ps, window).isZero(0.0));
}

TEST_CASE("output has P components for any (w, P, r)") {
  std::mt19937_64 rng(3);
  for (auto [w, p, r] : {std::tuple{1, 1, 1}, {4, 7, 3}, {9, 2, 2}}) {
    auto ps = ParamSet::initialize(ModelShape{p, r, 5, 0}, 11);
    CHECK(forward_point(ps, random_matrix(w, p, rng)).size() == p);
  }
}

TEST_CASE("forward is deterministic") {
  auto ps = ParamSet::initialize(ModelShape{6, 3, 8, 0}, 5);
  std::mt19937_64 rng(1);
  Eigen::MatrixXd window = random_matrix(12, 6, rng);
  Eigen::VectorXd a = forward_point(ps, window);
  Eigen::VectorXd b = forward_point(ps, window);
  CHECK((a.array() == b.array()).all());
  CHECK((ParamSet::initialize(ModelShape{6, 3, 8, 0}, 5).flat().array() == ps.flat().array()).all());
}

TEST_CASE("batched forward matches per-window forward") {
  std::mt19937_64 rng(2);
  auto ps = random_params(kTiny, rng);
  StepBatch steps = random_steps(5, 3, 4, rng);
  Eigen::MatrixXd batch = forward_point(ps, steps);
  for (Index j = 0; j < 4; ++j) {
    Eigen::MatrixXd window(5, 3);
    for (Index s = 0; s < 5; ++s) window.row(s) = steps[static_cast<std::size_t>(s)].col(j).transpose();
    CHECK((forward_point(ps, window) - batch.col(j)).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("quantiles with zero increments step by ln 2") {
  ParamSet ps(ModelShape{1, 1, 2, 3});
  ps.mixing()(0, 0) = 1.0;
  auto fan = forward_quantiles(ps, Eigen::MatrixXd::Zero(3, 1));
  REQUIRE(fan.values.size() == 3);
  CHECK(fan.values[0](0, 0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(fan.values[1](0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(fan.values[2](0, 0) == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("single-level grid decodes the base") {
  std::mt19937_64 rng(4);
  auto ps = random_params(ModelShape{3, 2, 4, 1}, rng);
  Eigen::MatrixXd window = random_matrix(5, 3, rng);
  auto fan = forward_quantiles(ps, window);
  REQUIRE(fan.values.size() == 1);
  CHECK((fan.values[0] - ps.mixing().transpose() * fan.latent[0]).norm() < 1e-14);
}

TEST_CASE("latent quantiles never cross") {
  std::mt19937_64 rng(8);
  for (int draw = 0; draw < 200; ++draw) {
    auto ps = random_params(ModelShape{3, 2, 4, 5}, rng, 3.0);
    auto fan = forward_quantiles(ps, random_steps(5, 3, 3, rng));
    for (std::size_t j = 1; j < fan.latent.size(); ++j)
      CHECK((fan.latent[j].array() >= fan.latent[j - 1].array()).all());
  }
}

TEST_CASE("rollout h=1 is the one-step forward") {
  std::mt19937_64 rng(5);
  auto ps = random_params(kTiny, rng);
  StepBatch steps = random_steps(5, 3, 2, rng);
  CHECK((rollout_point(ps, steps, 1).array() == forward_point(ps, steps).array()).all());
  CHECK_THROWS_AS(rollout_point(ps, steps, 0), ConfigError);
}

TEST_CASE("rollout equals h-fold one-step composition") {
  std::mt19937_64 rng(6);
  auto ps = random_params(kTiny, rng);
  for (Index h : {2, 3, 6}) {
    Eigen::MatrixXd window = random_matrix(5, 3, rng);
    Eigen::VectorXd oracle = compose_one_step(ps, window, h);
    Eigen::VectorXd got = rollout_point(ps, to_steps(window), h).col(0);
    CHECK((oracle.array() == got.array()).all());
  }
}

TEST_CASE("quantile rollout feeds back the median only") {
  std::mt19937_64 rng(7);
  auto ps = random_params(kTinyQuantile, rng);
  Eigen::MatrixXd window = random_matrix(5, 3, rng);
  const std::vector<double> levels{0.1, 0.5, 0.9};
  const auto med = median_level(levels);
  REQUIRE(med == 1);
  auto before = rollout_quantiles(ps, to_steps(window), 2, med);
  // The median is base + softplus(delta_2); perturbing the last increment
  // (level 0.9 only) must leave the median path untouched.
  ParamSet perturbed = ps;
  perturbed.quantile_weight().bottomRows(2).setZero();
  perturbed.quantile_bias().tail(2).setZero();
  auto after = rollout_quantiles(perturbed, to_steps(window), 2, med);
  CHECK((before.values[1].array() == after.values[1].array()).all());
  CHECK((before.values[0].array() == after.values[0].array()).all());
}

TEST_CASE("analytic gradients match central finite differences") {
  std::mt19937_64 rng(42);
  for (ForecastMode mode : {ForecastMode::Point, ForecastMode::Quantile}) {
    const ModelShape shape = mode == ForecastMode::Point ? kTiny : kTinyQuantile;
    for (int rep = 0; rep < 5; ++rep) {
      auto ps = random_params(shape, rng);
      auto anchor = random_params(shape, rng);
      StepBatch x = random_steps(5, 3, 4, rng);
      Eigen::MatrixXd y = random_matrix(3, 4, rng, 2.0);
      Objective obj;
      obj.mode = mode;
      obj.levels = {0.1, 0.5, 0.9};
      obj.eta = 0.3;
      ParamSet grad;
      loss_and_gradients(ps, &anchor, x, y, obj, grad);
      auto fd = finite_difference(
          [&](const Eigen::VectorXd& v) { return loss_at(ps, v, &anchor, x, y, obj); }, ps.flat(), 1e-5);
      CHECK(max_relative_error(grad.flat(), fd) < 1e-4);
    }
  }
}

TEST_CASE("perfect prediction leaves only the anchor penalty") {
  std::mt19937_64 rng(9);
  auto ps = random_params(kTiny, rng);
  StepBatch x = random_steps(5, 3, 3, rng);
  Eigen::MatrixXd y = forward_point(ps, x);
  Objective obj;
  obj.eta = 0.5;
  ParamSet grad;
  CHECK(loss_and_gradients(ps, nullptr, x, y, obj, grad) == 0.0);
  auto anchor = random_params(kTiny, rng);
  const double expected = 0.5 * (ps.specialized() - anchor.specialized()).squaredNorm();
  CHECK(loss_and_gradients(ps, &anchor, x, y, obj, grad) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("anchor at the current point adds nothing") {
  std::mt19937_64 rng(10);
  auto ps = random_params(kTiny, rng);
  StepBatch x = random_steps(5, 3, 3, rng);
  Eigen::MatrixXd y = random_matrix(3, 3, rng);
  Objective plain, anchored;
  anchored.eta = 7.0;
  ParamSet g1, g2;
  const double l1 = loss_and_gradients(ps, nullptr, x, y, plain, g1);
  const double l2 = loss_and_gradients(ps, &ps, x, y, anchored, g2);
  CHECK(l1 == l2);
  CHECK((g1.flat().array() == g2.flat().array()).all());
}

TEST_CASE("training fits a constant series") {
  auto data = constant_data(3, 120, 2, 0.8);
  TrainConfig cfg;
  cfg.window = 4;
  cfg.hidden = 6;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 32;
  auto idx = enumerate_windows(data.split_spec(), 3, SplitTag::Train, cfg.window, 1);
  auto refs = data.refs(idx);
  auto init = ParamSet::initialize(cfg.shape(2), 1);
  auto result = train(init, nullptr, data, refs, cfg, 150);
  CHECK(result.epoch_losses.back() < 1e-3);
}

TEST_CASE("training is deterministic for a fixed seed") {
  std::mt19937_64 rng(11);
  std::vector<Eigen::MatrixXd> s{random_matrix(80, 3, rng), random_matrix(80, 3, rng)};
  PreparedData data(make_dataset(s), SplitSpec{40, 20, 20});
  TrainConfig cfg;
  cfg.window = 5;
  cfg.hidden = 4;
  cfg.seed = 77;
  auto refs = data.refs(enumerate_windows(data.split_spec(), 2, SplitTag::Train, 5, 1));
  auto init = ParamSet::initialize(cfg.shape(3), 3);
  auto a = train(init, nullptr, data, refs, cfg, 3);
  auto b = train(init, nullptr, data, refs, cfg, 3);
  CHECK((a.params.flat().array() == b.params.flat().array()).all());
}

TEST_CASE("L2-SP weight pulls prototypes toward the anchor") {
  std::mt19937_64 rng(12);
  std::vector<Eigen::MatrixXd> s{random_matrix(100, 3, rng), random_matrix(100, 3, rng)};
  PreparedData data(make_dataset(s), SplitSpec{60, 20, 20});
  TrainConfig cfg;
  cfg.window = 5;
  cfg.hidden = 4;
  auto refs = data.refs(enumerate_windows(data.split_spec(), 2, SplitTag::Train, 5, 1));
  auto anchor = train(ParamSet::initialize(cfg.shape(3), 1), nullptr, data, refs, cfg, 2).params;
  std::vector<double> dist;
  for (double eta : {0.0, 1.0, 1e3, 1e6}) {
    cfg.eta = eta;
    auto proto = train(anchor, &anchor, data, refs, cfg, 10).params;
    CHECK((proto.mixing().array() == anchor.mixing().array()).all());
    dist.push_back((proto.flat() - anchor.flat()).norm());
    if (eta == 1e6) CHECK((proto.flat() - anchor.flat()).cwiseAbs().maxCoeff() < 1e-3);
  }
  CHECK(dist[0] > dist[1]);
  CHECK(dist[1] > dist[2]);
  CHECK(dist[2] >= dist[3]);
}

TEST_CASE("checkpoints round-trip bitwise") {
  std::mt19937_64 rng(13);
  auto ps = random_params(kTinyQuantile, rng);
  auto file = std::filesystem::temp_directory_path() / "adapool_ckpt_test.bin";
  save_checkpoint(file, ps, {5, ForecastMode::Quantile});
  CheckpointInfo info;
  auto back = load_checkpoint(file, &info);
  CHECK(back.shape() == ps.shape());
  CHECK(info.window == 5);
  CHECK(info.mode == ForecastMode::Quantile);
  CHECK((back.flat().array() == ps.flat().array()).all());
  std::filesystem::remove(file);
}

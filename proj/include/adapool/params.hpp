#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>

namespace adapool {

using Index = Eigen::Index;

enum class ForecastMode { Point, Quantile };

const char* to_string(ForecastMode mode);
ForecastMode parse_mode(const std::string& text);

struct ModelShape {
  Index components = 0;  // P
  Index latent = 0;      // r
  Index hidden = 0;      // GRU state size
  Index quantiles = 0;   // Q; zero in point mode

  bool operator==(const ModelShape&) const = default;
};

/**
 * All learnable parameters of one forecaster stored in a single flat vector.
 *
 * Layout, in order: mixing matrix B (r x P), GRU input weights (3H x r, rows
 * update|reset|candidate), recurrent weights (3H x H), gate biases (3H), point
 * head (r x H, r), quantile head (rQ x H, rQ). Everything after B is the
 * specialized part; B is shared between clusters.
 */
class ParamSet {
 public:
  using MatrixMap = Eigen::Map<Eigen::MatrixXd>;
  using ConstMatrixMap = Eigen::Map<const Eigen::MatrixXd>;
  using VectorMap = Eigen::Map<Eigen::VectorXd>;
  using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

  ParamSet() = default;
  explicit ParamSet(const ModelShape& shape);

  const ModelShape& shape() const { return shape_; }
  Index size() const { return values_.size(); }

  Eigen::VectorXd& flat() { return values_; }
  const Eigen::VectorXd& flat() const { return values_; }

  /// Offset of the first specialized (non-shared) parameter.
  Index specialized_offset() const { return off_w_; }
  auto specialized() { return values_.tail(values_.size() - off_w_); }
  auto specialized() const { return values_.tail(values_.size() - off_w_); }

  MatrixMap mixing() { return mat(off_b_, shape_.latent, shape_.components); }
  ConstMatrixMap mixing() const { return cmat(off_b_, shape_.latent, shape_.components); }
  MatrixMap gate_input() { return mat(off_w_, 3 * shape_.hidden, shape_.latent); }
  ConstMatrixMap gate_input() const { return cmat(off_w_, 3 * shape_.hidden, shape_.latent); }
  MatrixMap gate_recurrent() { return mat(off_u_, 3 * shape_.hidden, shape_.hidden); }
  ConstMatrixMap gate_recurrent() const { return cmat(off_u_, 3 * shape_.hidden, shape_.hidden); }
  VectorMap gate_bias() { return vec(off_bias_, 3 * shape_.hidden); }
  ConstVectorMap gate_bias() const { return cvec(off_bias_, 3 * shape_.hidden); }
  MatrixMap point_weight() { return mat(off_pw_, shape_.latent, shape_.hidden); }
  ConstMatrixMap point_weight() const { return cmat(off_pw_, shape_.latent, shape_.hidden); }
  VectorMap point_bias() { return vec(off_pb_, shape_.latent); }
  ConstVectorMap point_bias() const { return cvec(off_pb_, shape_.latent); }
  MatrixMap quantile_weight() { return mat(off_qw_, shape_.latent * shape_.quantiles, shape_.hidden); }
  ConstMatrixMap quantile_weight() const {
    return cmat(off_qw_, shape_.latent * shape_.quantiles, shape_.hidden);
  }
  VectorMap quantile_bias() { return vec(off_qb_, shape_.latent * shape_.quantiles); }
  ConstVectorMap quantile_bias() const { return cvec(off_qb_, shape_.latent * shape_.quantiles); }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  static ParamSet initialize(const ModelShape& shape, std::uint64_t seed);

  bool all_finite() const { return values_.allFinite(); }

 private:
  MatrixMap mat(Index off, Index r, Index c) { return MatrixMap(values_.data() + off, r, c); }
  ConstMatrixMap cmat(Index off, Index r, Index c) const { return ConstMatrixMap(values_.data() + off, r, c); }
  VectorMap vec(Index off, Index n) { return VectorMap(values_.data() + off, n); }
  ConstVectorMap cvec(Index off, Index n) const { return ConstVectorMap(values_.data() + off, n); }

  ModelShape shape_;
  Eigen::VectorXd values_;
  Index off_b_ = 0, off_w_ = 0, off_u_ = 0, off_bias_ = 0, off_pw_ = 0, off_pb_ = 0, off_qw_ = 0,
        off_qb_ = 0;
};

/// Checkpoint header fields beyond the parameter shape.
struct CheckpointInfo {
  Index window = 0;
  ForecastMode mode = ForecastMode::Point;
};

/// PCM1 checkpoint: magic, (r, P, H, w, Q, mode) as u64, then the flat
/// parameter vector as little-endian f64.
void save_checkpoint(const std::filesystem::path& file, const ParamSet& params,
                     const CheckpointInfo& info);
ParamSet load_checkpoint(const std::filesystem::path& file, CheckpointInfo* info = nullptr);

/// splitmix64 mixing, used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace adapool

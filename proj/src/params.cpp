#include "adapool/params.hpp"

#include "adapool/errors.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace adapool {

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int k = 0; k < 8; ++k) bytes[k] = static_cast<unsigned char>((v >> (8 * k)) & 0xFF);
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw DataError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(bytes[k]) << (8 * k);
  return v;
}

}  // namespace

const char* to_string(ForecastMode mode) { return mode == ForecastMode::Point ? "point" : "quantile"; }

ForecastMode parse_mode(const std::string& text) {
  if (text == "point") return ForecastMode::Point;
  if (text == "quantile") return ForecastMode::Quantile;
  throw ConfigError("unknown mode '" + text + "' (expected point|quantile)");
}

ParamSet::ParamSet(const ModelShape& shape) : shape_(shape) {
  if (shape.components < 1 || shape.latent < 1 || shape.hidden < 1 || shape.quantiles < 0)
    throw ConfigError("invalid model shape");
  const Index r = shape.latent, p = shape.components, h = shape.hidden, q = shape.quantiles;
  off_b_ = 0;
  off_w_ = off_b_ + r * p;
  off_u_ = off_w_ + 3 * h * r;
  off_bias_ = off_u_ + 3 * h * h;
  off_pw_ = off_bias_ + 3 * h;
  off_pb_ = off_pw_ + r * h;
  off_qw_ = off_pb_ + r;
  off_qb_ = off_qw_ + r * q * h;
  values_ = Eigen::VectorXd::Zero(off_qb_ + r * q);
}

ParamSet ParamSet::initialize(const ModelShape& shape, std::uint64_t seed) {
  ParamSet ps(shape);
  std::mt19937_64 rng(seed);
  auto fill = [&rng](auto&& m, Index fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Index c = 0; c < m.cols(); ++c)
      for (Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
  };
  fill(ps.mixing(), shape.components);
  fill(ps.gate_input(), shape.latent);
  fill(ps.gate_recurrent(), shape.hidden);
  fill(ps.point_weight(), shape.hidden);
  if (shape.quantiles > 0) fill(ps.quantile_weight(), shape.hidden);
  return ps;
}

void save_checkpoint(const std::filesystem::path& file, const ParamSet& params,
                     const CheckpointInfo& info) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + file.string());
  const auto& s = params.shape();
  out.write("PCM1", 4);
  put_u64(out, static_cast<std::uint64_t>(s.latent));
  put_u64(out, static_cast<std::uint64_t>(s.components));
  put_u64(out, static_cast<std::uint64_t>(s.hidden));
  put_u64(out, static_cast<std::uint64_t>(info.window));
  put_u64(out, static_cast<std::uint64_t>(s.quantiles));
  put_u64(out, info.mode == ForecastMode::Point ? 0 : 1);
  for (Index k = 0; k < params.size(); ++k) put_u64(out, std::bit_cast<std::uint64_t>(params.flat()(k)));
}

ParamSet load_checkpoint(const std::filesystem::path& file, CheckpointInfo* info) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + file.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "PCM1", 4) != 0)
    throw DataError(file.string() + " is not a PCM1 checkpoint");
  ModelShape shape;
  shape.latent = static_cast<Index>(get_u64(in));
  shape.components = static_cast<Index>(get_u64(in));
  shape.hidden = static_cast<Index>(get_u64(in));
  const auto window = static_cast<Index>(get_u64(in));
  shape.quantiles = static_cast<Index>(get_u64(in));
  const auto mode = get_u64(in);
  if (mode > 1) throw DataError("checkpoint has unknown mode");
  ParamSet ps(shape);
  for (Index k = 0; k < ps.size(); ++k) ps.flat()(k) = std::bit_cast<double>(get_u64(in));
  if (info) *info = {window, mode == 0 ? ForecastMode::Point : ForecastMode::Quantile};
  return ps;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace adapool

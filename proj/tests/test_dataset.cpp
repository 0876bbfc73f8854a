#include "doctest.h"
#include "test_util.hpp"

#include "adapool/dataset.hpp"
#include "adapool/errors.hpp"

#include <cmath>
#include <fstream>

using namespace adapool;
using namespace adapool::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("adapool_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

std::string grid(int rows, int cols, double base) {
  std::string s;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (c) s += ',';
      s += std::to_string(base + r + 0.5 * c);
    }
    s += '\n';
  }
  return s;
}

}  // namespace

TEST_CASE("csv directory loads in file-name order") {
  auto dir = scratch_dir("csv_load");
  write_file(dir / "b.csv", grid(10, 3, 100));
  write_file(dir / "a.csv", grid(10, 3, 0));
  auto ds = load_dataset(dir, DataFormat::Csv);
  CHECK(ds.num_series() == 2);
  CHECK(ds.length() == 10);
  CHECK(ds.components() == 3);
  CHECK(ds.names[0] == "a");
  CHECK(ds.series[1](0, 0) == 100.0);
}

TEST_CASE("empty cells and NaN are missing") {
  auto dir = scratch_dir("csv_missing");
  write_file(dir / "s.csv", "1,2,3\n4,,6\nNaN,8,9\n");
  auto ds = load_dataset(dir, DataFormat::Csv);
  CHECK_FALSE(ds.mask[0](1, 1));
  CHECK_FALSE(ds.mask[0](2, 0));
  CHECK(ds.mask[0](1, 2));
  CHECK(std::isnan(ds.series[0](1, 1)));
}

TEST_CASE("load errors") {
  auto dir = scratch_dir("csv_errors");
  write_file(dir / "a.csv", grid(4, 3, 0));
  write_file(dir / "b.csv", grid(4, 2, 0));
  CHECK_THROWS_AS(load_dataset(dir, DataFormat::Csv), DataError);

  auto bad = scratch_dir("csv_bad_cell");
  write_file(bad / "a.csv", "1,2\n3,abc\n");
  CHECK_THROWS_AS(load_dataset(bad, DataFormat::Csv), DataError);

  auto empty = scratch_dir("csv_empty");
  write_file(empty / "a.csv", "");
  CHECK_THROWS_AS(load_dataset(empty, DataFormat::Csv), DataError);
}

TEST_CASE("header row is skipped when flagged") {
  auto dir = scratch_dir("csv_header");
  write_file(dir / "a.csv", "x,y\n1,2\n3,4\n");
  CsvOptions opt;
  opt.header = true;
  auto ds = load_dataset(dir, DataFormat::Csv, opt);
  CHECK(ds.length() == 2);
}

TEST_CASE("packed format round-trips including NaN") {
  std::mt19937_64 rng(1);
  auto a = random_matrix(6, 2, rng);
  a(2, 1) = std::nan("");
  auto ds = make_dataset({a, random_matrix(6, 2, rng)});
  auto file = scratch_dir("packed") / "d.mts";
  write_packed(ds, file);
  auto back = read_packed(file);
  CHECK(back.num_series() == 2);
  CHECK_FALSE(back.mask[0](2, 1));
  CHECK(back.series[1].isApprox(ds.series[1], 0.0));

  std::ifstream in(file, std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  CHECK(std::string(magic, 4) == "MTS1");
}

TEST_CASE("pems wide table keeps complete days only") {
  auto dir = scratch_dir("pems");
  std::string text;
  for (int d = 1; d <= 3; ++d) {
    const int rows = d == 2 ? 3 : 4;  // day 2 is incomplete
    for (int r = 0; r < rows; ++r)
      text += "2017-01-0" + std::to_string(d) + " 00:0" + std::to_string(r) + ":00," +
              std::to_string(d) + "," + std::to_string(r) + "\n";
  }
  write_file(dir / "speed.csv", text);
  auto ds = load_pems_wide(dir / "speed.csv", 4, true);
  CHECK(ds.num_series() == 2);
  CHECK(ds.components() == 2);
  CHECK(ds.names[1] == "2017-01-03");
}

TEST_CASE("split arithmetic") {
  auto ds = make_dataset({Eigen::MatrixXd::Zero(288, 1)});
  auto v = split(ds, {200, 40, 48}, 13);
  CHECK(v.train.begin == 0);
  CHECK(v.train.end == 200);
  CHECK(v.val.begin == 200);
  CHECK(v.val.end == 240);
  CHECK(v.test.begin == 240);
  CHECK(v.test.end == 288);
  CHECK_THROWS_AS(split(ds, {288, 0, 0}, 13), ConfigError);
  CHECK_THROWS_AS(split(ds, {200, 40, 40}, 13), ConfigError);

  auto short_ds = make_dataset({Eigen::MatrixXd::Zero(144, 1)});
  auto s = split(short_ds, {100, 22, 22}, 18);
  CHECK(s.val.begin == 100);  // 0-based: steps 101..122
  CHECK(s.val.end == 122);
}

TEST_CASE("standardization uses pooled TRAIN statistics") {
  Eigen::MatrixXd a(6, 1), b(6, 1);
  a << 1, 2, 99, std::nan(""), 5, 5;
  b << 3, std::nan(""), 7, 7, 7, 7;
  // TRAIN = first 2 rows: observed {1, 2, 3}
  auto [st, out] = fit_impute_standardize(make_dataset({a, b}), {2, 2, 2}, 1e-8);
  CHECK(st.mu(0) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(st.sigma(0) == doctest::Approx(std::sqrt(2.0 / 3.0 + 1e-8)).epsilon(1e-15));
  CHECK(out.series[0](0, 0) == doctest::Approx(-1.0 / st.sigma(0)));
  CHECK(out.series[1](0, 0) == doctest::Approx(1.2247448).epsilon(1e-6));
  CHECK(out.series[0](3, 0) == 0.0);  // missing VAL cell -> mu -> 0
  CHECK(out.series[1](1, 0) == 0.0);
  CHECK_FALSE(out.mask[0](3, 0));
}

TEST_CASE("standardizer ignores VAL and TEST values bitwise") {
  std::mt19937_64 rng(2);
  auto a = random_matrix(30, 3, rng);
  auto b = random_matrix(30, 3, rng);
  auto [st1, out1] = fit_impute_standardize(make_dataset({a, b}), {20, 5, 5});
  a.bottomRows(10) = random_matrix(10, 3, rng, 100.0);
  b(25, 1) = std::nan("");
  auto [st2, out2] = fit_impute_standardize(make_dataset({a, b}), {20, 5, 5});
  CHECK((st1.mu.array() == st2.mu.array()).all());
  CHECK((st1.sigma.array() == st2.sigma.array()).all());
  CHECK((out1.series[0].topRows(20).array() == out2.series[0].topRows(20).array()).all());
}

TEST_CASE("standardized TRAIN has zero mean and unit variance") {
  std::mt19937_64 rng(3);
  auto [st, out] = fit_impute_standardize(
      make_dataset({random_matrix(50, 2, rng, 4.0), random_matrix(50, 2, rng, 4.0)}), {30, 10, 10});
  for (Index p = 0; p < 2; ++p) {
    double sum = 0, ss = 0;
    for (const auto& s : out.series)
      for (Index t = 0; t < 30; ++t) sum += s(t, p);
    const double mean = sum / 60;
    for (const auto& s : out.series)
      for (Index t = 0; t < 30; ++t) ss += (s(t, p) - mean) * (s(t, p) - mean);
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(ss / 60 - 1.0) < 1e-7);
  }
}

TEST_CASE("median imputation") {
  Eigen::MatrixXd a(6, 1);
  a << 1, 2, 10, std::nan(""), 0, 0;
  auto [st, out] = fit_impute_standardize(make_dataset({a}), {3, 2, 1}, 1e-8, ImputeKind::Median);
  CHECK(st.fill(0) == 2.0);
  CHECK(out.series[0](3, 0) == doctest::Approx((2.0 - st.mu(0)) / st.sigma(0)));
}

TEST_CASE("fully missing TRAIN component is an error") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Ones(6, 2);
  a(0, 1) = a(1, 1) = std::nan("");
  CHECK_THROWS_AS(fit_impute_standardize(make_dataset({a}), {2, 2, 2}), DataError);
}

TEST_CASE("window enumeration") {
  SplitSpec spec{200, 40, 48};
  auto tr = enumerate_windows(spec, 1, SplitTag::Train, 12, 1);
  CHECK(tr.per_series() == 188);
  CHECK(tr.first_end == 11);   // 1-based 12
  CHECK(tr.last_end == 198);   // 1-based 199

  auto va = enumerate_windows(spec, 1, SplitTag::Val, 12, 1);
  CHECK(va.first_end == 199);  // 1-based 200, context reaches into TRAIN
  CHECK(va.last_end == 238);   // target 1-based 240
  CHECK(va.per_series() == 40);

  auto te = enumerate_windows(spec, 1, SplitTag::Test, 12, 6);
  CHECK(te.first_end == 239);
  CHECK(te.last_end + 6 == 287);

  auto empty = enumerate_windows(SplitSpec{100, 5, 20}, 1, SplitTag::Val, 12, 6);
  CHECK(empty.empty());
}

TEST_CASE("audit attributes reads to splits") {
  std::mt19937_64 rng(4);
  PreparedData data(make_dataset({random_matrix(30, 2, rng)}), {20, 5, 5});
  data.audit().set_phase("val");
  auto idx = enumerate_windows(data.split_spec(), 1, SplitTag::Val, 4, 1);
  auto refs = data.refs(idx);
  auto batch = data.gather(refs, 4, 1);
  CHECK(batch.size() == 5);
  CHECK(data.audit().reads("val", Split::Test) == 0);
  CHECK(data.audit().reads("val", Split::Val) > 0);
  CHECK(data.audit().reads("val", Split::Train) > 0);
  data.audit().set_phase("test");
  data.gather(data.refs(enumerate_windows(data.split_spec(), 1, SplitTag::Test, 4, 1)), 4, 1);
  CHECK(data.audit().reads("test", Split::Test) > 0);
}

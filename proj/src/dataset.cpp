#include "adapool/dataset.hpp"

#include "adapool/errors.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace adapool {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, delim)) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == delim) cells.emplace_back();
  return cells;
}

double parse_cell(const std::string& cell, const std::string& where) {
  if (cell.empty() || cell == "NaN" || cell == "nan" || cell == "NAN" || cell == "NA") return kNaN;
  double value = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) throw DataError("unreadable cell '" + cell + "' in " + where);
  return value;
}

MaskMatrix mask_of(const Eigen::MatrixXd& m) {
  MaskMatrix mask(m.rows(), m.cols());
  for (Index c = 0; c < m.cols(); ++c)
    for (Index r = 0; r < m.rows(); ++r) mask(r, c) = !std::isnan(m(r, c));
  return mask;
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int k = 0; k < 8; ++k) bytes[k] = static_cast<unsigned char>((v >> (8 * k)) & 0xFF);
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw DataError("truncated packed file");
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(bytes[k]) << (8 * k);
  return v;
}

void put_f64(std::ostream& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }
double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

double median_of(std::vector<double>& v) {
  const auto n = v.size();
  auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  double hi = *mid;
  if (n % 2 == 1) return hi;
  double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

}  // namespace

const char* to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::Train: return "train";
    case SplitTag::Val: return "val";
    case SplitTag::Test: return "test";
    case SplitTag::TrainVal: return "trainval";
  }
  return "?";
}

void MtsDataset::validate() const {
  if (series.empty()) throw DataError("dataset has no series");
  if (mask.size() != series.size()) throw DataError("mask count does not match series count");
  if (!names.empty() && names.size() != series.size())
    throw DataError("name count does not match series count");
  const Index t = length();
  const Index p = components();
  if (t == 0 || p == 0) throw DataError("series length T and dimension P must be positive");
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i].rows() != t || series[i].cols() != p)
      throw DataError("dimension mismatch: series " + std::to_string(i) + " is " +
                      std::to_string(series[i].rows()) + "x" + std::to_string(series[i].cols()) +
                      ", expected " + std::to_string(t) + "x" + std::to_string(p));
    if (mask[i].rows() != t || mask[i].cols() != p)
      throw DataError("mask shape mismatch for series " + std::to_string(i));
  }
}

SplitViews split(const MtsDataset& ds, const SplitSpec& spec, Index min_segment) {
  if (spec.total() != ds.length())
    throw ConfigError("split lengths " + std::to_string(spec.train) + "+" + std::to_string(spec.val) +
                      "+" + std::to_string(spec.test) + " do not sum to T=" +
                      std::to_string(ds.length()));
  auto check = [&](Index len, const char* name) {
    if (len < min_segment)
      throw ConfigError(std::string(name) + " segment has " + std::to_string(len) +
                        " steps, needs at least " + std::to_string(min_segment));
  };
  check(spec.train, "TRAIN");
  check(spec.val, "VAL");
  check(spec.test, "TEST");
  return {{Split::Train, 0, spec.train},
          {Split::Val, spec.train, spec.train + spec.val},
          {Split::Test, spec.train + spec.val, spec.total()}};
}

void Standardizer::transform(Eigen::MatrixXd& block) const {
  for (Index p = 0; p < block.cols(); ++p)
    for (Index t = 0; t < block.rows(); ++t) {
      double& x = block(t, p);
      if (std::isnan(x)) x = fill(p);
      x = (x - mu(p)) / sigma(p);
    }
}

Eigen::MatrixXd Standardizer::inverse(const Eigen::MatrixXd& block) const {
  Eigen::MatrixXd out = block;
  for (Index p = 0; p < out.cols(); ++p) out.col(p) = out.col(p).array() * sigma(p) + mu(p);
  return out;
}

std::pair<Standardizer, MtsDataset> fit_impute_standardize(const MtsDataset& ds,
                                                           const SplitSpec& spec, double eps,
                                                           ImputeKind impute) {
  ds.validate();
  if (!(eps > 0.0)) throw ConfigError("standardization eps must be positive");
  if (spec.total() != ds.length()) throw ConfigError("split lengths do not sum to T");
  const Index p_dim = ds.components();
  Standardizer st;
  st.eps = eps;
  st.impute = impute;
  st.mu = Eigen::VectorXd::Zero(p_dim);
  st.sigma = Eigen::VectorXd::Zero(p_dim);
  st.fill = Eigen::VectorXd::Zero(p_dim);

  for (Index p = 0; p < p_dim; ++p) {
    double sum = 0.0;
    std::uint64_t count = 0;
    for (const auto& s : ds.series)
      for (Index t = 0; t < spec.train; ++t)
        if (!std::isnan(s(t, p))) {
          sum += s(t, p);
          ++count;
        }
    if (count == 0)
      throw DataError("component " + std::to_string(p) + " has no observed TRAIN entries");
    const double mu = sum / static_cast<double>(count);
    double ss = 0.0;
    for (const auto& s : ds.series)
      for (Index t = 0; t < spec.train; ++t)
        if (!std::isnan(s(t, p))) ss += (s(t, p) - mu) * (s(t, p) - mu);
    st.mu(p) = mu;
    st.sigma(p) = std::sqrt(ss / static_cast<double>(count) + eps);
    if (impute == ImputeKind::Median) {
      std::vector<double> observed;
      observed.reserve(count);
      for (const auto& s : ds.series)
        for (Index t = 0; t < spec.train; ++t)
          if (!std::isnan(s(t, p))) observed.push_back(s(t, p));
      st.fill(p) = median_of(observed);
    } else {
      st.fill(p) = mu;
    }
  }

  MtsDataset out = ds;
  for (auto& s : out.series) st.transform(s);
  return {std::move(st), std::move(out)};
}

// ---- audit ---------------------------------------------------------------

void AccessAudit::set_phase(std::string phase) {
  std::lock_guard lock(mutex_);
  phase_ = std::move(phase);
}

std::string AccessAudit::phase() const {
  std::lock_guard lock(mutex_);
  return phase_;
}

void AccessAudit::record(Index begin, Index end, const SplitSpec& spec) {
  if (end <= begin) return;
  auto overlap = [&](Index lo, Index hi) {
    return static_cast<std::uint64_t>(std::max<Index>(0, std::min(end, hi) - std::max(begin, lo)));
  };
  const Counts add{overlap(0, spec.train), overlap(spec.val_begin(), spec.test_begin()),
                   overlap(spec.test_begin(), spec.total())};
  std::lock_guard lock(mutex_);
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const auto& e) { return e.first == phase_; });
  if (it == entries_.end()) {
    entries_.emplace_back(phase_, Counts{0, 0, 0});
    it = std::prev(entries_.end());
  }
  for (int k = 0; k < 3; ++k) it->second[k] += add[k];
}

std::vector<std::pair<std::string, AccessAudit::Counts>> AccessAudit::entries() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

std::uint64_t AccessAudit::reads(const std::string& phase, Split split) const {
  std::lock_guard lock(mutex_);
  for (const auto& [name, counts] : entries_)
    if (name == phase) return counts[static_cast<int>(split)];
  return 0;
}

void AccessAudit::clear() {
  std::lock_guard lock(mutex_);
  entries_.clear();
}

// ---- windows ---------------------------------------------------------------

std::vector<Index> WindowIndex::end_times() const {
  std::vector<Index> out;
  for (Index t = first_end; t <= last_end; ++t) out.push_back(t);
  return out;
}

WindowIndex enumerate_windows(const SplitSpec& spec, Index num_series, SplitTag tag, Index w,
                              Index h) {
  if (w < 1 || h < 1) throw ConfigError("window length and horizon must be >= 1");
  Index target_begin = 0;
  Index target_end = 0;
  switch (tag) {
    case SplitTag::Train: target_begin = 0; target_end = spec.train; break;
    case SplitTag::Val: target_begin = spec.val_begin(); target_end = spec.test_begin(); break;
    case SplitTag::Test: target_begin = spec.test_begin(); target_end = spec.total(); break;
    case SplitTag::TrainVal: target_begin = 0; target_end = spec.test_begin(); break;
  }
  WindowIndex idx;
  idx.split = tag;
  idx.window = w;
  idx.horizon = h;
  idx.num_series = num_series;
  // Forecast origins sit inside the region or at the step just before it.
  idx.first_end = std::max(w - 1, target_begin - 1);
  idx.last_end = target_end - 1 - h;
  if (idx.last_end < idx.first_end) {
    idx.first_end = 0;
    idx.last_end = -1;
  }
  return idx;
}

// ---- prepared data ---------------------------------------------------------

PreparedData::PreparedData(MtsDataset standardized, SplitSpec spec,
                           std::shared_ptr<AccessAudit> audit)
    : data_(std::move(standardized)), spec_(spec), audit_(std::move(audit)) {
  data_.validate();
  if (spec_.total() != data_.length()) throw ConfigError("split lengths do not sum to T");
  for (const auto& s : data_.series)
    if (!s.allFinite()) throw DataError("prepared data must be finite (run imputation first)");
  if (!audit_) audit_ = std::make_shared<AccessAudit>();
}

Eigen::MatrixXd PreparedData::rows(Index series, Index begin, Index end) const {
  audit_->record(begin, end, spec_);
  return data_.series[static_cast<std::size_t>(series)].middleRows(begin, end - begin);
}

WindowBatch PreparedData::gather(std::span<const WindowRef> refs, Index w, Index h) const {
  const Index n = static_cast<Index>(refs.size());
  const Index p = components();
  WindowBatch batch;
  batch.steps.assign(static_cast<std::size_t>(w), Eigen::MatrixXd(p, n));
  if (h > 0) batch.targets.resize(p, n);
  batch.series.reserve(refs.size());
  for (Index j = 0; j < n; ++j) {
    const WindowRef& ref = refs[static_cast<std::size_t>(j)];
    const auto& s = data_.series[static_cast<std::size_t>(ref.series)];
    const Index start = ref.end - w + 1;
    if (start < 0 || ref.end + h >= s.rows())
      throw DataError("window out of range for series " + std::to_string(ref.series));
    for (Index k = 0; k < w; ++k) batch.steps[static_cast<std::size_t>(k)].col(j) = s.row(start + k).transpose();
    audit_->record(start, ref.end + 1, spec_);
    if (h > 0) {
      batch.targets.col(j) = s.row(ref.end + h).transpose();
      audit_->record(ref.end + h, ref.end + h + 1, spec_);
    }
    batch.series.push_back(ref.series);
  }
  return batch;
}

Eigen::MatrixXd PreparedData::targets(std::span<const WindowRef> refs, Index h) const {
  Eigen::MatrixXd out(components(), static_cast<Index>(refs.size()));
  for (std::size_t j = 0; j < refs.size(); ++j) {
    const auto& s = data_.series[static_cast<std::size_t>(refs[j].series)];
    const Index t = refs[j].end + h;
    if (t < 0 || t >= s.rows()) throw DataError("target out of range for series " + std::to_string(refs[j].series));
    out.col(static_cast<Index>(j)) = s.row(t).transpose();
    audit_->record(t, t + 1, spec_);
  }
  return out;
}

std::vector<WindowRef> PreparedData::refs(const WindowIndex& index,
                                          std::span<const Index> series) const {
  std::vector<WindowRef> out;
  out.reserve(series.size() * static_cast<std::size_t>(index.per_series()));
  for (Index i : series)
    for (Index t = index.first_end; t <= index.last_end; ++t) out.push_back({i, t});
  return out;
}

std::vector<WindowRef> PreparedData::refs(const WindowIndex& index) const {
  std::vector<Index> all(static_cast<std::size_t>(num_series()));
  for (Index i = 0; i < num_series(); ++i) all[static_cast<std::size_t>(i)] = i;
  return refs(index, all);
}

// ---- file formats ------------------------------------------------------------

Eigen::MatrixXd read_series_csv(const std::filesystem::path& file, const CsvOptions& options) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open " + file.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  bool skip = options.header;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (skip) {
      skip = false;
      continue;
    }
    if (trim(line).empty()) continue;
    auto cells = split_line(line, options.delimiter);
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells)
      row.push_back(parse_cell(c, file.string() + ":" + std::to_string(line_no)));
    if (!rows.empty() && row.size() != rows.front().size())
      throw DataError("dimension mismatch: ragged row " + std::to_string(line_no) + " in " +
                      file.string());
    rows.push_back(std::move(row));
  }
  if (rows.empty() || rows.front().empty()) throw DataError("empty series file " + file.string());
  Eigen::MatrixXd m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index t = 0; t < m.rows(); ++t)
    for (Index p = 0; p < m.cols(); ++p) m(t, p) = rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  return m;
}

MtsDataset load_dataset(const std::filesystem::path& path, DataFormat format,
                        const CsvOptions& options) {
  namespace fs = std::filesystem;
  if (format == DataFormat::Packed) return read_packed(path);
  if (format == DataFormat::Pems) return load_pems_wide(path, 288, false, options);

  if (!fs::is_directory(path)) throw DataError(path.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path))
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  if (files.empty()) throw DataError("no .csv files in " + path.string());

  MtsDataset ds;
  for (const auto& f : files) {
    Eigen::MatrixXd m = read_series_csv(f, options);
    if (!ds.series.empty() && (m.rows() != ds.length() || m.cols() != ds.components()))
      throw DataError("dimension mismatch: " + f.filename().string() + " is " +
                      std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ", expected " +
                      std::to_string(ds.length()) + "x" + std::to_string(ds.components()));
    ds.mask.push_back(mask_of(m));
    ds.series.push_back(std::move(m));
    ds.names.push_back(f.stem().string());
  }
  ds.validate();
  return ds;
}

void write_csv_dir(const MtsDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (Index i = 0; i < ds.num_series(); ++i) {
    const auto& name = ds.names.empty() ? "series_" + std::to_string(i) : ds.names[static_cast<std::size_t>(i)];
    std::ofstream out(dir / (name + ".csv"));
    if (!out) throw DataError("cannot write " + (dir / name).string());
    out.precision(17);
    const auto& s = ds.series[static_cast<std::size_t>(i)];
    for (Index t = 0; t < s.rows(); ++t) {
      for (Index p = 0; p < s.cols(); ++p) {
        if (p) out << ',';
        if (!std::isnan(s(t, p))) out << s(t, p);
      }
      out << '\n';
    }
  }
}

void write_packed(const MtsDataset& ds, const std::filesystem::path& file) {
  ds.validate();
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write " + file.string());
  out.write("MTS1", 4);
  put_u64(out, static_cast<std::uint64_t>(ds.num_series()));
  put_u64(out, static_cast<std::uint64_t>(ds.length()));
  put_u64(out, static_cast<std::uint64_t>(ds.components()));
  for (const auto& s : ds.series)
    for (Index t = 0; t < s.rows(); ++t)
      for (Index p = 0; p < s.cols(); ++p) put_f64(out, s(t, p));
}

MtsDataset read_packed(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open " + file.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "MTS1", 4) != 0)
    throw DataError(file.string() + " is not an MTS1 file");
  const auto n = get_u64(in);
  const auto t = get_u64(in);
  const auto p = get_u64(in);
  if (n == 0 || t == 0 || p == 0) throw DataError("packed header has a zero dimension");
  if (n * t * p > (std::uint64_t{1} << 34)) throw DataError("packed header dimensions are implausible");
  MtsDataset ds;
  for (std::uint64_t i = 0; i < n; ++i) {
    Eigen::MatrixXd m(static_cast<Index>(t), static_cast<Index>(p));
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) m(r, c) = get_f64(in);
    ds.mask.push_back(mask_of(m));
    ds.series.push_back(std::move(m));
    char buf[32];
    std::snprintf(buf, sizeof buf, "series_%05llu", static_cast<unsigned long long>(i));
    ds.names.emplace_back(buf);
  }
  ds.validate();
  return ds;
}

MtsDataset load_pems_wide(const std::filesystem::path& file, Index day_length,
                          bool timestamp_column, const CsvOptions& options) {
  if (day_length < 1) throw ConfigError("day length must be positive");
  std::ifstream in(file);
  if (!in) throw DataError("cannot open " + file.string());
  std::string line;
  bool skip = options.header;
  std::vector<std::string> keys;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (skip) {
      skip = false;
      continue;
    }
    if (trim(line).empty()) continue;
    auto cells = split_line(line, options.delimiter);
    std::size_t first = 0;
    if (timestamp_column) {
      keys.push_back(cells.empty() ? std::string() : cells.front().substr(0, 10));
      first = 1;
    }
    std::vector<double> row;
    for (std::size_t c = first; c < cells.size(); ++c)
      row.push_back(parse_cell(cells[c], file.string() + ":" + std::to_string(line_no)));
    if (!rows.empty() && row.size() != rows.front().size())
      throw DataError("dimension mismatch: ragged row " + std::to_string(line_no));
    rows.push_back(std::move(row));
  }
  if (rows.empty() || rows.front().empty()) throw DataError("empty sensor table " + file.string());
  const auto p = static_cast<Index>(rows.front().size());

  // Group rows into candidate days.
  std::vector<std::pair<std::string, std::vector<std::size_t>>> days;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::string key = timestamp_column ? keys[r] : std::to_string(r / static_cast<std::size_t>(day_length));
    if (days.empty() || days.back().first != key) days.push_back({key, {}});
    days.back().second.push_back(r);
  }
  MtsDataset ds;
  for (const auto& [key, idx] : days) {
    if (static_cast<Index>(idx.size()) != day_length) continue;
    Eigen::MatrixXd m(day_length, p);
    for (Index t = 0; t < day_length; ++t)
      for (Index c = 0; c < p; ++c) m(t, c) = rows[idx[static_cast<std::size_t>(t)]][static_cast<std::size_t>(c)];
    ds.mask.push_back(mask_of(m));
    ds.series.push_back(std::move(m));
    ds.names.push_back(timestamp_column ? key : "day_" + key);
  }
  if (ds.series.empty()) throw DataError("no complete days of length " + std::to_string(day_length));
  ds.validate();
  return ds;
}

}  // namespace adapool

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace adapool {

using Index = Eigen::Index;
using MaskMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/**
 * N multivariate series sharing length T and dimension P.
 *
 * Each entry of `series` is T x P (rows are time). Missing raw values are NaN
 * and have `mask == false`; after imputation the values are finite but the
 * mask keeps recording what was originally observed.
 */
struct MtsDataset {
  std::vector<Eigen::MatrixXd> series;
  std::vector<MaskMatrix> mask;
  std::vector<std::string> names;

  Index num_series() const { return static_cast<Index>(series.size()); }
  Index length() const { return series.empty() ? 0 : series.front().rows(); }
  Index components() const { return series.empty() ? 0 : series.front().cols(); }

  /// Throws DataError unless all shapes agree and T, P, N > 0.
  void validate() const;
};

/// Contiguous chronological split lengths; must sum to T.
struct SplitSpec {
  Index train = 0;
  Index val = 0;
  Index test = 0;

  Index total() const { return train + val + test; }
  Index val_begin() const { return train; }
  Index test_begin() const { return train + val; }
};

enum class Split : int { Train = 0, Val = 1, Test = 2 };

/// Target region used for window enumeration. TrainVal is the refit region.
enum class SplitTag { Train, Val, Test, TrainVal };

const char* to_string(SplitTag tag);

/// Half-open time range [begin, end) of one split.
struct SplitRange {
  Split split;
  Index begin;
  Index end;

  Index size() const { return end - begin; }
};

struct SplitViews {
  SplitRange train;
  SplitRange val;
  SplitRange test;
};

/// Checks `spec` against the dataset and returns the three ranges.
/// Every segment must hold at least `min_segment` steps (w + max horizon).
SplitViews split(const MtsDataset& ds, const SplitSpec& spec, Index min_segment);

enum class ImputeKind { Mean, Median };

struct Standardizer {
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma;
  /// Per-component fill value for missing entries (mu for mean imputation).
  Eigen::VectorXd fill;
  double eps = 1e-8;
  ImputeKind impute = ImputeKind::Mean;

  /// Imputes NaNs and standardizes a T x P block in place.
  void transform(Eigen::MatrixXd& block) const;
  /// Maps standardized values back to the raw scale.
  Eigen::MatrixXd inverse(const Eigen::MatrixXd& block) const;
};

/**
 * Fits imputation and scaling statistics on observed TRAIN entries, pooled
 * over series, and applies them to every split. sigma_p is the square root of
 * the TRAIN variance plus eps.
 */
std::pair<Standardizer, MtsDataset> fit_impute_standardize(const MtsDataset& ds,
                                                           const SplitSpec& spec,
                                                           double eps = 1e-8,
                                                           ImputeKind impute = ImputeKind::Mean);

/**
 * Records how many time steps each phase reads from each split. Used to prove
 * that nothing before TEST evaluation touches TEST rows.
 */
class AccessAudit {
 public:
  using Counts = std::array<std::uint64_t, 3>;

  void set_phase(std::string phase);
  std::string phase() const;
  /// Records a read of rows [begin, end) of one series.
  void record(Index begin, Index end, const SplitSpec& spec);
  /// Phases in first-use order with per-split step counts (train, val, test).
  std::vector<std::pair<std::string, Counts>> entries() const;
  std::uint64_t reads(const std::string& phase, Split split) const;
  void clear();

 private:
  mutable std::mutex mutex_;
  std::string phase_ = "unspecified";
  std::vector<std::pair<std::string, Counts>> entries_;
};

/**
 * Window end-times t with inputs t-w+1..t and target t+h inside the tagged
 * region. For VAL and TEST the origin t may be the last step before the region,
 * so inputs reach back into earlier (past) splits; TRAIN windows stay in TRAIN.
 */
struct WindowIndex {
  SplitTag split = SplitTag::Train;
  Index window = 0;
  Index horizon = 0;
  Index num_series = 0;
  Index first_end = 0;
  Index last_end = -1;

  Index per_series() const { return last_end >= first_end ? last_end - first_end + 1 : 0; }
  bool empty() const { return per_series() == 0; }
  std::vector<Index> end_times() const;
};

WindowIndex enumerate_windows(const SplitSpec& spec, Index num_series, SplitTag tag, Index w,
                              Index h);

struct WindowRef {
  Index series;
  Index end;
};

/// A column-batched set of windows: steps[s] is P x n holding step s of every window.
struct WindowBatch {
  std::vector<Eigen::MatrixXd> steps;
  Eigen::MatrixXd targets;  // P x n, empty when no horizon was requested
  std::vector<Index> series;

  Index size() const { return static_cast<Index>(series.size()); }
};

/// Standardized data plus split metadata; every read is routed through the audit.
class PreparedData {
 public:
  PreparedData(MtsDataset standardized, SplitSpec spec,
               std::shared_ptr<AccessAudit> audit = std::make_shared<AccessAudit>());

  Index num_series() const { return data_.num_series(); }
  Index length() const { return data_.length(); }
  Index components() const { return data_.components(); }
  const SplitSpec& split_spec() const { return spec_; }
  const std::vector<std::string>& names() const { return data_.names; }
  AccessAudit& audit() const { return *audit_; }
  std::shared_ptr<AccessAudit> audit_handle() const { return audit_; }

  /// Rows [begin, end) of series i (audited).
  Eigen::MatrixXd rows(Index series, Index begin, Index end) const;

  /// Gathers inputs for each window and, if h > 0, the targets at end + h.
  WindowBatch gather(std::span<const WindowRef> refs, Index w, Index h) const;

  /// Targets at end + h only (P x n).
  Eigen::MatrixXd targets(std::span<const WindowRef> refs, Index h) const;

  /// All windows of the given series in a WindowIndex, in series-major order.
  std::vector<WindowRef> refs(const WindowIndex& index, std::span<const Index> series) const;
  std::vector<WindowRef> refs(const WindowIndex& index) const;

  /// Unaudited access for serialization only.
  const MtsDataset& unaudited() const { return data_; }

 private:
  MtsDataset data_;
  SplitSpec spec_;
  std::shared_ptr<AccessAudit> audit_;
};

// ---- file formats -------------------------------------------------------

enum class DataFormat { Csv, Packed, Pems };

struct CsvOptions {
  bool header = false;
  char delimiter = ',';
};

/**
 * Loads a dataset. Csv: `path` is a directory with one file per series
 * (sorted by file name). Packed: `path` is a single MTS1 file. Pems: a wide
 * file of time x sensors that is cut into complete days (see load_pems_wide).
 */
MtsDataset load_dataset(const std::filesystem::path& path, DataFormat format,
                        const CsvOptions& options = {});

/// Parses one series file; empty cells and NaN are missing.
Eigen::MatrixXd read_series_csv(const std::filesystem::path& file, const CsvOptions& options);

void write_csv_dir(const MtsDataset& ds, const std::filesystem::path& dir);
void write_packed(const MtsDataset& ds, const std::filesystem::path& file);
MtsDataset read_packed(const std::filesystem::path& file);

/**
 * Wide sensor table (rows = time, columns = sensors) cut into daily series of
 * `day_length` rows. With `timestamp_column`, the first column holds an ISO
 * timestamp whose date part groups rows and only days with exactly
 * `day_length` rows are kept; otherwise rows are chunked and a trailing
 * partial chunk is dropped.
 */
MtsDataset load_pems_wide(const std::filesystem::path& file, Index day_length,
                          bool timestamp_column, const CsvOptions& options = {});

}  // namespace adapool

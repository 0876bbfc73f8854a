#pragma once

// Helpers shared by the clustering and baseline translation units.

#include "adapool/dataset.hpp"
#include "adapool/model.hpp"
#include "adapool/params.hpp"

#include <numeric>
#include <span>
#include <vector>

namespace adapool::detail {

inline std::vector<Index> all_series(Index n) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), Index{0});
  return v;
}

inline std::vector<Index> members_of(const std::vector<Index>& labels, Index k) {
  std::vector<Index> m;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == k) m.push_back(static_cast<Index>(i));
  return m;
}

inline TrainConfig reseeded(const TrainConfig& cfg, std::uint64_t salt) {
  TrainConfig c = cfg;
  c.seed = mix_seed(cfg.seed, salt);
  return c;
}

/// h = 1 training windows of the given series in the tagged region.
inline std::vector<WindowRef> member_windows(const PreparedData& data, SplitTag tag, Index w,
                                             std::span<const Index> members) {
  const auto index = enumerate_windows(data.split_spec(), data.num_series(), tag, w, 1);
  return data.refs(index, members);
}

}  // namespace adapool::detail

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ovlp/geom3d.hpp"

namespace ovlp {

/// IoU threshold used when none is configured.
double default_delta();
double default_epsilon();

struct FilterConfig {
  double delta = default_delta();    // positive iff IoU >= delta
  double epsilon = default_epsilon();  // mass spread over the non-argmax positives

  void validate() const;
};

/// Positive/negative partition of proposals against one ground truth, plus the
/// smoothed label. `weights` is a distribution: the argmax proposal carries
/// 1 - epsilon and the remaining K positives share epsilon; with K = 0 (or no
/// positive at all) the argmax carries everything.
struct FilterResult {
  std::vector<double> ious;
  std::vector<std::size_t> pos_indices;
  std::vector<std::size_t> neg_indices;
  std::size_t argmax_index = 0;
  std::vector<double> weights;
  std::size_t k_count = 0;

  std::size_t size() const { return ious.size(); }
  bool is_positive(std::size_t p) const;
};

FilterResult filter(std::span<const Aabb3> proposals, const Aabb3& gt, const FilterConfig& cfg);

// Same partition/weight rules applied to precomputed IoUs.
FilterResult filter_ious(std::vector<double> ious, const FilterConfig& cfg);

}  // namespace ovlp

#include "ovlp/iou_filter.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ovlp/error.hpp"

namespace ovlp {

double default_delta() { return 0.25; }
double default_epsilon() { return 0.1; }

void FilterConfig::validate() const {
  if (!(delta > 0.0 && delta <= 1.0)) reject("filter delta must lie in (0, 1], got " + std::to_string(delta));
  if (!(epsilon >= 0.0 && epsilon < 1.0)) reject("filter epsilon must lie in [0, 1), got " + std::to_string(epsilon));
}

bool FilterResult::is_positive(std::size_t p) const {
  return std::binary_search(pos_indices.begin(), pos_indices.end(), p);
}

FilterResult filter_ious(std::vector<double> ious, const FilterConfig& cfg) {
  cfg.validate();
  if (ious.empty()) reject("filter: proposal sequence is empty");
  FilterResult r;
  r.ious = std::move(ious);
  const std::size_t n = r.ious.size();
  for (std::size_t p = 0; p < n; ++p) {
    if (!(r.ious[p] >= 0.0 && r.ious[p] <= 1.0)) reject("filter: IoU outside [0, 1] at proposal " + std::to_string(p));
    if (r.ious[p] > r.ious[r.argmax_index]) r.argmax_index = p;
    (r.ious[p] >= cfg.delta ? r.pos_indices : r.neg_indices).push_back(p);
  }

  r.weights.assign(n, 0.0);
  const bool argmax_positive = r.ious[r.argmax_index] >= cfg.delta;
  r.k_count = argmax_positive ? r.pos_indices.size() - 1 : 0;
  if (r.k_count == 0) {
    r.weights[r.argmax_index] = 1.0;
  } else {
    const double share = cfg.epsilon / static_cast<double>(r.k_count);
    for (std::size_t p : r.pos_indices) r.weights[p] = share;
    r.weights[r.argmax_index] = 1.0 - cfg.epsilon;
  }
  return r;
}

FilterResult filter(std::span<const Aabb3> proposals, const Aabb3& gt, const FilterConfig& cfg) {
  if (proposals.empty()) reject("filter: proposal sequence is empty");
  std::vector<double> ious;
  ious.reserve(proposals.size());
  for (const Aabb3& b : proposals) ious.push_back(iou(b, gt));
  return filter_ious(std::move(ious), cfg);
}

}  // namespace ovlp

#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ovlp/geom3d.hpp"
#include "ovlp/synthworld.hpp"

namespace ovlp {

struct GroundingOutcome {
  Aabb3 predicted_box;  // box of the highest-scoring proposal
  Aabb3 gt_box;
  SplitTag split_tag = SplitTag::Unique;
};

/// Fraction per split; a split with no samples is absent.
struct SplitValues {
  double overall = 0.0;
  std::optional<double> unique;
  std::optional<double> multiple;
};

/// Fraction of outcomes whose predicted box reaches IoU >= k with the ground truth.
SplitValues acc_at_k(std::span<const GroundingOutcome> outcomes, double k);

struct GatedScore {
  double metric_value = 0.0;  // m_i
  double iou = 0.0;
  SplitTag split_tag = SplitTag::Unique;
};

/// (1/N) sum_i m_i * [IoU_i >= k].
double m_at_k_iou(std::span<const GatedScore> scores, double k);
SplitValues m_at_k_iou_by_split(std::span<const GatedScore> scores, double k);

/// Fraction of samples whose first k ranked answers hit the ground-truth set.
/// Lists shorter than k are treated as padded with misses.
double em_at_k(std::span<const std::vector<int>> ranked_answers, std::span<const std::set<int>> gt_answers,
               std::size_t k);

/// metric name -> {overall, unique, multiple}.
struct MetricReport {
  std::map<std::string, SplitValues> values;
  std::size_t samples = 0;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

std::string acc_key(double k);
std::string m_key(double k);
std::string em_key(std::size_t k);

}  // namespace ovlp

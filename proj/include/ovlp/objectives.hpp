#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ovlp/geom3d.hpp"
#include "ovlp/iou_filter.hpp"

namespace ovlp {

struct OidResult {
  double loss = 0.0;
  std::vector<BoxGrad> grads;  // one per proposal; zero where the weight is zero
};

/// IoU-guided detection loss: sum_p y_p * DIoU(b_p, gt) with y from the filter.
OidResult oid_loss(std::span<const Aabb3> proposals, const Aabb3& gt, const FilterResult& fr);

struct CrossEntropyResult {
  double loss = 0.0;
  std::vector<double> grad;  // w.r.t. the logits
  std::vector<double> probs;
};

/// -(1/n) sum_i target_i log softmax(scores)_i, n = number of classes.
/// The 1/n factor follows the head formulas literally, so the effective
/// step size shrinks as the candidate count grows.
CrossEntropyResult cross_entropy(std::span<const double> scores, std::span<const double> target);

std::vector<double> softmax(std::span<const double> scores);

enum class Term { Vg, Oid, Occ, Osc, Qa };
const char* term_name(Term t);

struct LossWeights {
  double w_vg = 1.0;
  double w_oid = 1.0;
  double w_occ = 1.0;
  double w_osc = 1.0;
  double w_qa = 1.0;

  double of(Term t) const;
  void validate() const;
};

/// Term values for one step; a missing value means the term is disabled (or
/// skipped for this batch) and contributes nothing.
struct TermValues {
  std::optional<double> vg, oid, occ, osc, qa;

  std::optional<double> get(Term t) const;
  void set(Term t, double v);
};

struct LossReport {
  double total = 0.0;
  std::map<std::string, double> per_term;
};

LossReport total_loss(const TermValues& terms, const LossWeights& weights);

inline constexpr Term kAllTerms[] = {Term::Vg, Term::Oid, Term::Occ, Term::Osc, Term::Qa};

}  // namespace ovlp

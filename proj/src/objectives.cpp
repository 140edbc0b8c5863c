#include "ovlp/objectives.hpp"

#include <cmath>
#include <string>

#include "ovlp/contrastive.hpp"
#include "ovlp/error.hpp"

namespace ovlp {

OidResult oid_loss(std::span<const Aabb3> proposals, const Aabb3& gt, const FilterResult& fr) {
  if (fr.weights.size() != proposals.size()) {
    reject("oid_loss: " + std::to_string(fr.weights.size()) + " weights for " + std::to_string(proposals.size()) +
           " proposals");
  }
  OidResult out;
  out.grads.assign(proposals.size(), BoxGrad{});
  for (std::size_t p = 0; p < proposals.size(); ++p) {
    const double y = fr.weights[p];
    if (y == 0.0) continue;
    out.loss += y * diou_loss(proposals[p], gt).loss;
    const BoxGrad g = diou_grad(proposals[p], gt);
    for (int i = 0; i < 6; ++i) out.grads[p][i] = y * g[i];
  }
  return out;
}

std::vector<double> softmax(std::span<const double> scores) {
  const double lse = log_sum_exp(scores);
  std::vector<double> p(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) p[i] = std::exp(scores[i] - lse);
  return p;
}

CrossEntropyResult cross_entropy(std::span<const double> scores, std::span<const double> target) {
  if (scores.empty()) reject("cross_entropy: empty score vector");
  if (target.size() != scores.size()) reject("cross_entropy: target length differs from score length");
  double mass = 0.0;
  for (double t : target) {
    if (!(t >= 0.0)) reject("cross_entropy: negative target entry");
    mass += t;
  }
  if (std::abs(mass - 1.0) > 1e-6) reject("cross_entropy: target sums to " + std::to_string(mass) + ", not 1");

  const double n = static_cast<double>(scores.size());
  const double lse = log_sum_exp(scores);
  CrossEntropyResult out;
  out.probs.resize(scores.size());
  out.grad.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double log_p = scores[i] - lse;
    out.probs[i] = std::exp(log_p);
    if (target[i] > 0.0) out.loss -= target[i] * log_p;
  }
  out.loss /= n;
  for (std::size_t i = 0; i < scores.size(); ++i) out.grad[i] = (out.probs[i] * mass - target[i]) / n;
  return out;
}

const char* term_name(Term t) {
  switch (t) {
    case Term::Vg: return "vg";
    case Term::Oid: return "oid";
    case Term::Occ: return "occ";
    case Term::Osc: return "osc";
    case Term::Qa: return "qa";
  }
  return "?";
}

double LossWeights::of(Term t) const {
  switch (t) {
    case Term::Vg: return w_vg;
    case Term::Oid: return w_oid;
    case Term::Occ: return w_occ;
    case Term::Osc: return w_osc;
    case Term::Qa: return w_qa;
  }
  return 0.0;
}

void LossWeights::validate() const {
  bool any = false;
  for (Term t : kAllTerms) {
    const double w = of(t);
    if (!(w >= 0.0) || !std::isfinite(w)) reject(std::string("loss weight for ") + term_name(t) + " must be >= 0");
    any = any || w > 0.0;
  }
  if (!any) reject("at least one loss weight must be positive");
}

std::optional<double> TermValues::get(Term t) const {
  switch (t) {
    case Term::Vg: return vg;
    case Term::Oid: return oid;
    case Term::Occ: return occ;
    case Term::Osc: return osc;
    case Term::Qa: return qa;
  }
  return std::nullopt;
}

void TermValues::set(Term t, double v) {
  switch (t) {
    case Term::Vg: vg = v; break;
    case Term::Oid: oid = v; break;
    case Term::Occ: occ = v; break;
    case Term::Osc: osc = v; break;
    case Term::Qa: qa = v; break;
  }
}

LossReport total_loss(const TermValues& terms, const LossWeights& weights) {
  LossReport r;
  for (Term t : kAllTerms) {
    const auto v = terms.get(t);
    if (!v) continue;
    r.per_term[term_name(t)] = *v;
    r.total += weights.of(t) * *v;
  }
  return r;
}

}  // namespace ovlp

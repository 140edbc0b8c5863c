#include "extended.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ovlp/error.hpp"

namespace ovlp::ext {

namespace {

Real dot(std::span<const Real> a, std::span<const Real> b) {
  Real s = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// log(sum_pos e^x) - log(sum_all e^x)
Real log_ratio(std::span<const Real> x, std::span<const char> in_pos) {
  Vec pos;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (in_pos[i]) pos.push_back(x[i]);
  return log_sum_exp(pos) - log_sum_exp(x);
}

std::vector<char> positives(const FilterResult& fr) {
  std::vector<char> in_pos(fr.size(), 0);
  for (std::size_t p : fr.pos_indices) in_pos[p] = 1;
  return in_pos;
}

}  // namespace

Vec widen(std::span<const double> x) { return Vec(x.begin(), x.end()); }

Vec mlp_forward(const Mlp& m, const ParamStore& store, std::span<const Real> input) {
  const MlpSpec& spec = m.spec();
  if (input.size() != spec.input_dim()) reject(m.prefix() + ": input dimension mismatch");
  Vec x(input.begin(), input.end());
  for (std::size_t l = 0; l < m.layers(); ++l) {
    const std::size_t in = spec.layer_dims[l], out = spec.layer_dims[l + 1];
    const std::vector<double>& w = store.at(m.weight_name(l)).value;
    const std::vector<double>& b = store.at(m.bias_name(l)).value;
    Vec z(out);
    for (std::size_t o = 0; o < out; ++o) {
      Real s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += static_cast<Real>(w[o * in + i]) * x[i];
      z[o] = s;
    }
    if (l + 1 < m.layers()) {
      for (Real& v : z) v = spec.nonlinearity == Nonlinearity::Tanh ? std::tanh(v) : std::max(0.0L, v);
    }
    x = std::move(z);
  }
  if (spec.output_normalize) {
    const Real norm = std::sqrt(dot(x, x));
    if (norm == 0.0L) reject(m.prefix() + ": cannot normalize a zero output");
    for (Real& v : x) v /= norm;
  }
  return x;
}

Real log_sum_exp(std::span<const Real> x) {
  if (x.empty()) return -std::numeric_limits<Real>::infinity();
  const Real m = *std::max_element(x.begin(), x.end());
  Real s = 0.0L;
  for (Real v : x) s += std::exp(v - m);
  return m + std::log(s);
}

Real similarity(std::span<const Real> u, std::span<const Real> v, const SimilarityConfig& cfg) {
  const Real uv = dot(u, v);
  const Real tau = cfg.temperature;
  if (cfg.kind == SimilarityKind::Dot) return uv / tau;
  return uv / (std::sqrt(dot(u, u)) * std::sqrt(dot(v, v)) * tau);
}

Real occ_sample(const std::vector<Vec>& h, const Vec& t, const FilterResult& fr, const SimilarityConfig& cfg) {
  const std::vector<char> in_pos = positives(fr);
  Vec fwd(h.size()), rev(h.size());
  for (std::size_t p = 0; p < h.size(); ++p) {
    fwd[p] = similarity(h[p], t, cfg);
    rev[p] = similarity(t, h[p], cfg);
  }
  return -0.5L * (log_ratio(fwd, in_pos) + log_ratio(rev, in_pos));
}

Real osc_sample(const std::vector<Vec>& h, const FilterResult& fr, const SimilarityConfig& cfg) {
  const std::vector<char> in_pos = positives(fr);
  Vec scores;
  std::vector<char> pos_pair;
  for (std::size_t p = 0; p < h.size(); ++p) {
    for (std::size_t q = 0; q < h.size(); ++q) {
      if (p == q) continue;
      scores.push_back(similarity(h[p], h[q], cfg));
      pos_pair.push_back(in_pos[p] && in_pos[q]);
    }
  }
  return -log_ratio(scores, pos_pair);
}

Real cross_entropy(std::span<const Real> scores, std::span<const double> target) {
  const Real lse = log_sum_exp(scores);
  Real loss = 0.0L;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (target[i] > 0.0) loss -= target[i] * (scores[i] - lse);
  return loss / static_cast<Real>(scores.size());
}

Box refine(const Aabb3& box, std::span<const Real> offsets) {
  Box out;
  for (int i = 0; i < 3; ++i) {
    out[i] = box.center[i] + box.size[i] * offsets[i];
    out[3 + i] = box.size[i] * std::exp(offsets[3 + i]);
  }
  return out;
}

Real diou_loss(const Box& pred, const Aabb3& gt) {
  Real inter = 1.0L, vp = 1.0L, vg = 1.0L, rho2 = 0.0L, c2 = 0.0L;
  for (int i = 0; i < 3; ++i) {
    const Real plo = pred[i] - 0.5L * pred[3 + i], phi = pred[i] + 0.5L * pred[3 + i];
    const Real glo = gt.center[i] - 0.5L * gt.size[i], ghi = gt.center[i] + 0.5L * gt.size[i];
    inter *= std::max(0.0L, std::min(phi, ghi) - std::max(plo, glo));
    vp *= pred[3 + i];
    vg *= gt.size[i];
    const Real d = pred[i] - gt.center[i];
    rho2 += d * d;
    const Real e = std::max(phi, ghi) - std::min(plo, glo);
    c2 += e * e;
  }
  const Real iou = inter > 0.0L ? std::clamp(inter / (vp + vg - inter), 0.0L, 1.0L) : 0.0L;
  return 1.0L - iou + rho2 / c2;
}

}  // namespace ovlp::ext

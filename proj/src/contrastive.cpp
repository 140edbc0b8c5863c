#include "ovlp/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ovlp/error.hpp"

namespace ovlp {

void SimilarityConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) reject("similarity temperature must be > 0");
}

double similarity(std::span<const double> u, std::span<const double> v, const SimilarityConfig& cfg) {
  cfg.validate();
  if (u.size() != v.size()) reject("similarity: dimension mismatch");
  const double uv = dot(u, v);
  if (cfg.kind == SimilarityKind::Dot) return uv / cfg.temperature;
  const double nu = std::sqrt(dot(u, u));
  const double nv = std::sqrt(dot(v, v));
  if (nu == 0.0 || nv == 0.0) reject("cosine similarity of a zero vector");
  return uv / (nu * nv * cfg.temperature);
}

void similarity_backward(std::span<const double> u, std::span<const double> v, const SimilarityConfig& cfg,
                         double scale, std::span<double> grad_u, std::span<double> grad_v) {
  const std::size_t d = u.size();
  if (cfg.kind == SimilarityKind::Dot) {
    const double k = scale / cfg.temperature;
    for (std::size_t i = 0; i < d; ++i) {
      grad_u[i] += k * v[i];
      grad_v[i] += k * u[i];
    }
    return;
  }
  const double uu = dot(u, u), vv = dot(v, v), uv = dot(u, v);
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  const double k = scale / (nu * nv * cfg.temperature);
  for (std::size_t i = 0; i < d; ++i) {
    grad_u[i] += k * (v[i] - uv / uu * u[i]);
    grad_v[i] += k * (u[i] - uv / vv * v[i]);
  }
}

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

void EmbeddingSet::validate() const {
  const std::size_t n = proposal_embeddings.rows;
  if (n == 0 || proposal_embeddings.cols == 0) reject("embedding set has no proposals");
  if (partition.size() != n) {
    reject("embedding set partition covers " + std::to_string(partition.size()) + " proposals, expected " +
           std::to_string(n));
  }
  if (partition.pos_indices.size() + partition.neg_indices.size() != n) reject("partition is not a partition");
}

namespace {

EmbeddingGrad zero_grad_like(const EmbeddingSet& s) {
  return {Matrix(s.proposal_embeddings.rows, s.proposal_embeddings.cols), std::vector<double>(s.text_embedding.size())};
}

// For scores x over `all` and a subset `pos`: returns log(sum_pos e^x) - log(sum_all e^x)
// and writes d/dx of its negation into dx.
double log_ratio(std::span<const double> x, std::span<const char> in_pos, std::span<double> dx) {
  std::vector<double> pos;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (in_pos[i]) pos.push_back(x[i]);
  const double lse_pos = log_sum_exp(pos);
  const double lse_all = log_sum_exp(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p_all = std::exp(x[i] - lse_all);
    const double p_pos = in_pos[i] ? std::exp(x[i] - lse_pos) : 0.0;
    dx[i] = p_all - p_pos;
  }
  return lse_pos - lse_all;
}

}  // namespace

std::optional<ContrastiveResult> occ_loss(std::span<const EmbeddingSet> batch, const SimilarityConfig& cfg) {
  cfg.validate();
  ContrastiveResult out;
  out.skipped.assign(batch.size(), true);
  std::vector<double> per_sample(batch.size(), 0.0);

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const EmbeddingSet& s = batch[b];
    s.validate();
    if (s.text_embedding.size() != s.proposal_embeddings.cols) reject("occ_loss: text/proposal dimension mismatch");
    out.grads.push_back(zero_grad_like(s));
    if (s.partition.pos_indices.empty()) continue;
    out.skipped[b] = false;
    ++out.used;
  }
  if (out.used == 0) return std::nullopt;
  const double inv_used = 1.0 / static_cast<double>(out.used);

  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (out.skipped[b]) continue;
    const EmbeddingSet& s = batch[b];
    const std::size_t n = s.proposal_embeddings.rows;
    std::vector<char> in_pos(n, 0);
    for (std::size_t p : s.partition.pos_indices) in_pos[p] = 1;
    std::span<const double> t = s.text_embedding;

    std::vector<double> fwd(n), rev(n), dfwd(n), drev(n);
    for (std::size_t p = 0; p < n; ++p) {
      fwd[p] = similarity(s.proposal_embeddings.row(p), t, cfg);
      rev[p] = similarity(t, s.proposal_embeddings.row(p), cfg);
    }
    const double loss = -0.5 * (log_ratio(fwd, in_pos, dfwd) + log_ratio(rev, in_pos, drev));
    per_sample[b] = loss;

    EmbeddingGrad& g = out.grads[b];
    for (std::size_t p = 0; p < n; ++p) {
      similarity_backward(s.proposal_embeddings.row(p), t, cfg, 0.5 * dfwd[p] * inv_used,
                          g.proposal_embeddings.row(p), g.text_embedding);
      similarity_backward(t, s.proposal_embeddings.row(p), cfg, 0.5 * drev[p] * inv_used, g.text_embedding,
                          g.proposal_embeddings.row(p));
    }
  }
  // Fixed summation order keeps the batch value reproducible.
  for (std::size_t b = 0; b < batch.size(); ++b)
    if (!out.skipped[b]) out.loss += per_sample[b];
  out.loss *= inv_used;
  return out;
}

std::optional<ContrastiveResult> osc_loss(std::span<const EmbeddingSet> batch, const SimilarityConfig& cfg) {
  cfg.validate();
  ContrastiveResult out;
  out.skipped.assign(batch.size(), true);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    batch[b].validate();
    out.grads.push_back(zero_grad_like(batch[b]));
    if (batch[b].partition.pos_indices.size() < 2) continue;
    out.skipped[b] = false;
    ++out.used;
  }
  if (out.used == 0) return std::nullopt;
  const double inv_used = 1.0 / static_cast<double>(out.used);

  std::vector<double> per_sample(batch.size(), 0.0);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (out.skipped[b]) continue;
    const EmbeddingSet& s = batch[b];
    const Matrix& h = s.proposal_embeddings;
    const std::size_t n = h.rows;
    std::vector<char> is_pos(n, 0);
    for (std::size_t p : s.partition.pos_indices) is_pos[p] = 1;

    // Ordered pairs p != q, row-major with the diagonal removed.
    std::vector<double> scores;
    std::vector<char> pos_pair;
    scores.reserve(n * (n - 1));
    pos_pair.reserve(n * (n - 1));
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = 0; q < n; ++q) {
        if (p == q) continue;
        scores.push_back(similarity(h.row(p), h.row(q), cfg));
        pos_pair.push_back(is_pos[p] && is_pos[q]);
      }
    }
    std::vector<double> dscores(scores.size());
    per_sample[b] = -log_ratio(scores, pos_pair, dscores);

    Matrix& gh = out.grads[b].proposal_embeddings;
    std::size_t k = 0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = 0; q < n; ++q) {
        if (p == q) continue;
        similarity_backward(h.row(p), h.row(q), cfg, dscores[k++] * inv_used, gh.row(p), gh.row(q));
      }
    }
  }
  for (std::size_t b = 0; b < batch.size(); ++b)
    if (!out.skipped[b]) out.loss += per_sample[b];
  out.loss *= inv_used;
  return out;
}

}  // namespace ovlp

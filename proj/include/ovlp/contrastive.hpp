#pragma once

#include <optional>
#include <span>
#include <vector>

#include "ovlp/iou_filter.hpp"
#include "ovlp/matrix.hpp"

namespace ovlp {

enum class SimilarityKind { Dot, Cosine };

struct SimilarityConfig {
  SimilarityKind kind = SimilarityKind::Dot;
  double temperature = 1.0;

  void validate() const;
};

/// dot: u.v / tau; cosine: u.v / (|u| |v| tau). Cosine rejects zero vectors.
double similarity(std::span<const double> u, std::span<const double> v, const SimilarityConfig& cfg);

/// Accumulates scale * d s(u, v) into grad_u and grad_v.
void similarity_backward(std::span<const double> u, std::span<const double> v, const SimilarityConfig& cfg,
                         double scale, std::span<double> grad_u, std::span<double> grad_v);

/// One (ground truth, description) sample: proposal embeddings H (one row per
/// proposal), the text embedding T and the IoU partition of the proposals.
struct EmbeddingSet {
  Matrix proposal_embeddings;
  std::vector<double> text_embedding;
  FilterResult partition;

  void validate() const;
};

struct EmbeddingGrad {
  Matrix proposal_embeddings;
  std::vector<double> text_embedding;
};

/// Batch loss (mean over samples that were not skipped) and the gradient of that
/// mean w.r.t. every embedding. `skipped[i]` marks samples excluded from the mean;
/// their gradients are zero.
struct ContrastiveResult {
  double loss = 0.0;
  std::size_t used = 0;
  std::vector<bool> skipped;
  std::vector<EmbeddingGrad> grads;
};

/// Cross-modal alignment: positives (IoU >= delta) pulled toward T against all
/// proposals of the same sample, averaged over both argument orders of s.
/// Samples with no positive are skipped; nullopt when every sample is skipped.
std::optional<ContrastiveResult> occ_loss(std::span<const EmbeddingSet> batch, const SimilarityConfig& cfg);

/// Self-contrast over ordered proposal pairs p != q: positive-positive pairs
/// against all pairs. Samples with fewer than two positives are skipped;
/// nullopt when every sample is skipped. text_embedding is unused.
std::optional<ContrastiveResult> osc_loss(std::span<const EmbeddingSet> batch, const SimilarityConfig& cfg);

/// log(sum(exp(x))) in the max-shifted form.
double log_sum_exp(std::span<const double> x);

}  // namespace ovlp

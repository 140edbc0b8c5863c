#pragma once

// Long-double forward evaluation of the loss terms. Gradient checks take their
// finite differences from these: in double, rounding of an O(1) loss value
// swamps partial derivatives near 1e-8 at a step of 1e-5.

#include <array>
#include <span>
#include <vector>

#include "ovlp/contrastive.hpp"
#include "ovlp/diffkit.hpp"
#include "ovlp/geom3d.hpp"
#include "ovlp/iou_filter.hpp"

namespace ovlp::ext {

using Real = long double;
using Vec = std::vector<Real>;

Vec widen(std::span<const double> x);
Vec mlp_forward(const Mlp& m, const ParamStore& store, std::span<const Real> input);

Real log_sum_exp(std::span<const Real> x);
Real similarity(std::span<const Real> u, std::span<const Real> v, const SimilarityConfig& cfg);

// Per-sample contrastive terms; rows of h are proposal embeddings.
Real occ_sample(const std::vector<Vec>& h, const Vec& t, const FilterResult& fr, const SimilarityConfig& cfg);
Real osc_sample(const std::vector<Vec>& h, const FilterResult& fr, const SimilarityConfig& cfg);

Real cross_entropy(std::span<const Real> scores, std::span<const double> target);

// Box as {cx, cy, cz, sx, sy, sz}.
using Box = std::array<Real, 6>;
Box refine(const Aabb3& box, std::span<const Real> offsets);
Real diou_loss(const Box& pred, const Aabb3& gt);

}  // namespace ovlp::ext

#pragma once

#include <array>
#include <cstdint>

namespace ovlp {

using Vec3 = std::array<double, 3>;

/// Axis-aligned 3D box stored as center + extent.
/// Construct through `Aabb3::make` to get the positive-extent check.
struct Aabb3 {
  Vec3 center{0.0, 0.0, 0.0};
  Vec3 size{1.0, 1.0, 1.0};

  static Aabb3 make(const Vec3& center, const Vec3& size);
  static Aabb3 from_corners(const Vec3& lo, const Vec3& hi);

  Vec3 min_corner() const;
  Vec3 max_corner() const;
  bool valid() const;

  friend bool operator==(const Aabb3&, const Aabb3&) = default;
};

// Throws Error(InvalidArgument) unless every extent is finite and > 0.
void require_valid(const Aabb3& box);

double volume(const Aabb3& box);
double intersection_volume(const Aabb3& a, const Aabb3& b);
double iou(const Aabb3& a, const Aabb3& b);
Aabb3 enclosing_box(const Aabb3& a, const Aabb3& b);
double center_distance_sq(const Aabb3& a, const Aabb3& b);

struct DiouBreakdown {
  double iou = 0.0;
  double center_dist_sq = 0.0;     // rho^2
  double enclosing_diag_sq = 0.0;  // c^2
  double loss = 0.0;
};

/// 1 - IoU + rho^2 / c^2, rho the center distance and c the diagonal of the
/// smallest box enclosing both.
DiouBreakdown diou_loss(const Aabb3& pred, const Aabb3& gt);

/// d(diou_loss)/d(pred) laid out as {center.x, center.y, center.z, size.x, size.y, size.z}.
///
/// The loss is piecewise smooth. Where a face of `pred` coincides with a face of
/// `gt` we take the one-sided derivative for `pred` moving inward: the overlap
/// term sees `pred` as the binding face and the enclosing-box term sees `gt`.
/// Zero-measure contact (touching faces) contributes no IoU gradient.
using BoxGrad = std::array<double, 6>;
BoxGrad diou_grad(const Aabb3& pred, const Aabb3& gt);

/// Monte-Carlo IoU: uniform samples in the enclosing box, membership counted
/// for a, b, and both. Deterministic for a fixed seed.
double iou_oracle(const Aabb3& a, const Aabb3& b, std::uint64_t samples, std::uint64_t seed);

}  // namespace ovlp

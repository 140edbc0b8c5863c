#include "ovlp/geom3d.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ovlp/error.hpp"
#include "ovlp/rng.hpp"

namespace ovlp {

Aabb3 Aabb3::make(const Vec3& center, const Vec3& size) {
  Aabb3 box{center, size};
  require_valid(box);
  return box;
}

Aabb3 Aabb3::from_corners(const Vec3& lo, const Vec3& hi) {
  Aabb3 box;
  for (int i = 0; i < 3; ++i) {
    box.center[i] = 0.5 * (lo[i] + hi[i]);
    box.size[i] = hi[i] - lo[i];
  }
  require_valid(box);
  return box;
}

Vec3 Aabb3::min_corner() const {
  return {center[0] - 0.5 * size[0], center[1] - 0.5 * size[1], center[2] - 0.5 * size[2]};
}

Vec3 Aabb3::max_corner() const {
  return {center[0] + 0.5 * size[0], center[1] + 0.5 * size[1], center[2] + 0.5 * size[2]};
}

bool Aabb3::valid() const {
  for (int i = 0; i < 3; ++i) {
    if (!std::isfinite(center[i]) || !std::isfinite(size[i]) || !(size[i] > 0.0)) return false;
  }
  return true;
}

void require_valid(const Aabb3& box) {
  if (box.valid()) return;
  std::ostringstream os;
  os.precision(17);
  os << "invalid box: center (" << box.center[0] << ", " << box.center[1] << ", " << box.center[2]
     << ") size (" << box.size[0] << ", " << box.size[1] << ", " << box.size[2]
     << "); extents must be finite and > 0";
  reject(os.str());
}

double volume(const Aabb3& box) {
  require_valid(box);
  return box.size[0] * box.size[1] * box.size[2];
}

namespace {

// Overlap length along one axis; zero for disjoint or touching intervals.
double overlap_1d(double alo, double ahi, double blo, double bhi) {
  return std::max(0.0, std::min(ahi, bhi) - std::max(alo, blo));
}

}  // namespace

double intersection_volume(const Aabb3& a, const Aabb3& b) {
  const Vec3 alo = a.min_corner(), ahi = a.max_corner();
  const Vec3 blo = b.min_corner(), bhi = b.max_corner();
  double v = 1.0;
  for (int i = 0; i < 3; ++i) v *= overlap_1d(alo[i], ahi[i], blo[i], bhi[i]);
  return v;
}

double iou(const Aabb3& a, const Aabb3& b) {
  const double va = volume(a);
  const double vb = volume(b);
  if (a == b) return 1.0;
  const double inter = intersection_volume(a, b);
  if (inter <= 0.0) return 0.0;
  return std::clamp(inter / (va + vb - inter), 0.0, 1.0);
}

Aabb3 enclosing_box(const Aabb3& a, const Aabb3& b) {
  require_valid(a);
  require_valid(b);
  if (a == b) return a;
  const Vec3 alo = a.min_corner(), ahi = a.max_corner();
  const Vec3 blo = b.min_corner(), bhi = b.max_corner();
  Vec3 lo, hi;
  for (int i = 0; i < 3; ++i) {
    lo[i] = std::min(alo[i], blo[i]);
    hi[i] = std::max(ahi[i], bhi[i]);
  }
  return Aabb3::from_corners(lo, hi);
}

double center_distance_sq(const Aabb3& a, const Aabb3& b) {
  double d = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double t = a.center[i] - b.center[i];
    d += t * t;
  }
  return d;
}

DiouBreakdown diou_loss(const Aabb3& pred, const Aabb3& gt) {
  DiouBreakdown out;
  out.iou = iou(pred, gt);
  out.center_dist_sq = center_distance_sq(pred, gt);
  const Aabb3 enc = enclosing_box(pred, gt);
  out.enclosing_diag_sq = enc.size[0] * enc.size[0] + enc.size[1] * enc.size[1] + enc.size[2] * enc.size[2];
  out.loss = 1.0 - out.iou + out.center_dist_sq / out.enclosing_diag_sq;
  return out;
}

BoxGrad diou_grad(const Aabb3& pred, const Aabb3& gt) {
  require_valid(pred);
  require_valid(gt);
  const Vec3 plo = pred.min_corner(), phi = pred.max_corner();
  const Vec3 glo = gt.min_corner(), ghi = gt.max_corner();

  Vec3 overlap{}, enc{};
  for (int i = 0; i < 3; ++i) {
    overlap[i] = overlap_1d(plo[i], phi[i], glo[i], ghi[i]);
    enc[i] = std::max(phi[i], ghi[i]) - std::min(plo[i], glo[i]);
  }
  const double inter = overlap[0] * overlap[1] * overlap[2];
  const double vp = pred.size[0] * pred.size[1] * pred.size[2];
  const double vg = gt.size[0] * gt.size[1] * gt.size[2];
  const double uni = vp + vg - inter;

  // Gradients w.r.t. the corners of pred, then mapped to (center, size).
  Vec3 d_lo{}, d_hi{}, d_size{};

  // -IoU term.
  if (inter > 0.0) {
    const double diou_dinter = (vp + vg) / (uni * uni);
    const double diou_dvp = -inter / (uni * uni);
    for (int i = 0; i < 3; ++i) {
      const double others = overlap[(i + 1) % 3] * overlap[(i + 2) % 3];
      // pred's face binds the overlap when it is inside or flush with gt's face.
      const double dinter_dhi = phi[i] <= ghi[i] ? others : 0.0;
      const double dinter_dlo = plo[i] >= glo[i] ? -others : 0.0;
      d_hi[i] -= diou_dinter * dinter_dhi;
      d_lo[i] -= diou_dinter * dinter_dlo;
      d_size[i] -= diou_dvp * pred.size[(i + 1) % 3] * pred.size[(i + 2) % 3];
    }
  }

  // rho^2 / c^2 term.
  double rho2 = 0.0, c2 = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double t = pred.center[i] - gt.center[i];
    rho2 += t * t;
    c2 += enc[i] * enc[i];
  }
  BoxGrad g{};
  for (int i = 0; i < 3; ++i) {
    // pred's face binds the enclosing box only when strictly outside gt's.
    const double dc2_dhi = phi[i] > ghi[i] ? 2.0 * enc[i] : 0.0;
    const double dc2_dlo = plo[i] < glo[i] ? -2.0 * enc[i] : 0.0;
    d_hi[i] -= rho2 / (c2 * c2) * dc2_dhi;
    d_lo[i] -= rho2 / (c2 * c2) * dc2_dlo;
    g[i] += 2.0 * (pred.center[i] - gt.center[i]) / c2;
  }

  // lo = c - s/2, hi = c + s/2
  for (int i = 0; i < 3; ++i) {
    g[i] += d_lo[i] + d_hi[i];
    g[3 + i] = d_size[i] + 0.5 * (d_hi[i] - d_lo[i]);
  }
  return g;
}

double iou_oracle(const Aabb3& a, const Aabb3& b, std::uint64_t samples, std::uint64_t seed) {
  if (samples == 0) reject("iou_oracle: samples must be >= 1");
  const Aabb3 enc = enclosing_box(a, b);
  const Vec3 lo = enc.min_corner();
  const Vec3 alo = a.min_corner(), ahi = a.max_corner();
  const Vec3 blo = b.min_corner(), bhi = b.max_corner();
  Rng rng(seed);
  std::uint64_t in_a = 0, in_b = 0, in_both = 0;
  for (std::uint64_t n = 0; n < samples; ++n) {
    Vec3 x;
    for (int i = 0; i < 3; ++i) x[i] = lo[i] + enc.size[i] * rng.uniform();
    bool ina = true, inb = true;
    for (int i = 0; i < 3; ++i) {
      ina = ina && x[i] >= alo[i] && x[i] <= ahi[i];
      inb = inb && x[i] >= blo[i] && x[i] <= bhi[i];
    }
    in_a += ina;
    in_b += inb;
    in_both += ina && inb;
  }
  const std::uint64_t uni = in_a + in_b - in_both;
  if (uni == 0) return 0.0;
  return static_cast<double>(in_both) / static_cast<double>(uni);
}

}  // namespace ovlp

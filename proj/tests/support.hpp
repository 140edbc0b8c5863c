#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "ovlp/geom3d.hpp"
#include "ovlp/rng.hpp"

namespace testing {

inline double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

inline ovlp::Aabb3 random_box(ovlp::Rng& rng, double span = 1.0) {
  ovlp::Vec3 c, s;
  for (int i = 0; i < 3; ++i) {
    c[i] = rng.uniform(-span, span);
    s[i] = rng.uniform(0.2, 1.5);
  }
  return ovlp::Aabb3::make(c, s);
}

// Relative check that tolerates finite-difference roundoff on near-zero entries.
inline bool fd_close(double analytic, double numeric, double rel, double abs_floor = 1e-9) {
  return std::abs(analytic - numeric) <= abs_floor || rel_err(analytic, numeric) <= rel;
}

// Face coordinates of a and b along each axis differ by at least `gap`.
inline bool faces_apart(const ovlp::Aabb3& a, const ovlp::Aabb3& b, double gap) {
  const ovlp::Vec3 alo = a.min_corner(), ahi = a.max_corner(), blo = b.min_corner(), bhi = b.max_corner();
  for (int i = 0; i < 3; ++i) {
    for (double x : {alo[i], ahi[i]}) {
      for (double y : {blo[i], bhi[i]}) {
        if (std::abs(x - y) < gap) return false;
      }
    }
  }
  return true;
}

// Central difference of f along coordinate i of x.
inline double central(const std::function<double(std::span<const double>)>& f, std::vector<double> x, std::size_t i,
                      double h = 1e-5) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double fp = f(x);
  x[i] = x0 - h;
  const double fm = f(x);
  return (fp - fm) / (2.0 * h);
}

}  // namespace testing

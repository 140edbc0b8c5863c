#include <numeric>

#include "doctest.h"
#include "ovlp/error.hpp"
#include "ovlp/iou_filter.hpp"
#include "support.hpp"

using namespace ovlp;

namespace {

FilterConfig cfg(double delta, double eps) {
  FilterConfig c;
  c.delta = delta;
  c.epsilon = eps;
  return c;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_SUITE("iou_filter") {
  TEST_CASE("defaults") {
    CHECK(default_delta() == 0.25);
    CHECK(FilterConfig{}.delta == 0.25);
    CHECK(FilterConfig{}.epsilon == 0.1);
  }

  TEST_CASE("hand examples") {
    const FilterResult r = filter_ious({0.8, 0.6, 0.5, 0.1}, cfg(0.25, 0.1));
    CHECK(r.pos_indices == std::vector<std::size_t>{0, 1, 2});
    CHECK(r.neg_indices == std::vector<std::size_t>{3});
    CHECK(r.k_count == 2);
    CHECK(r.argmax_index == 0);
    CHECK(r.weights[0] == doctest::Approx(0.9));
    CHECK(r.weights[1] == doctest::Approx(0.05));
    CHECK(r.weights[2] == doctest::Approx(0.05));
    CHECK(r.weights[3] == 0.0);

    const FilterResult single = filter_ious({0.8, 0.1}, cfg(0.25, 0.1));
    CHECK(single.k_count == 0);
    CHECK(single.weights == std::vector<double>{1.0, 0.0});

    const FilterResult none = filter_ious({0.1, 0.2, 0.05}, cfg(0.25, 0.1));
    CHECK(none.pos_indices.empty());
    CHECK(none.weights == std::vector<double>{0.0, 1.0, 0.0});

    const FilterResult flat = filter_ious({0.8, 0.6, 0.5, 0.1}, cfg(0.25, 0.0));
    CHECK(flat.weights == std::vector<double>{1.0, 0.0, 0.0, 0.0});
  }

  TEST_CASE("threshold is inclusive and ties go to the lowest index") {
    const FilterResult r = filter_ious({0.25, 0.7, 0.7}, cfg(0.25, 0.2));
    CHECK(r.is_positive(0));
    CHECK(r.argmax_index == 1);
    CHECK(r.weights[1] == doctest::Approx(0.8));
  }

  TEST_CASE("rejects bad input") {
    CHECK_THROWS_AS(filter_ious({}, cfg(0.25, 0.1)), Error);
    CHECK_THROWS_AS(filter_ious({0.5}, cfg(0.0, 0.1)), Error);
    CHECK_THROWS_AS(filter_ious({0.5}, cfg(1.5, 0.1)), Error);
    CHECK_THROWS_AS(filter_ious({0.5}, cfg(0.25, 1.0)), Error);
  }

  TEST_CASE("box filter uses geometric IoU") {
    const Aabb3 gt = Aabb3::make({0.5, 0.5, 0.5}, {1, 1, 1});
    const std::vector<Aabb3> props{Aabb3::make({1.0, 0.5, 0.5}, {1, 1, 1}), gt, Aabb3::make({4, 4, 4}, {1, 1, 1})};
    const FilterResult r = filter(props, gt, FilterConfig{});
    CHECK(r.ious[0] == doctest::Approx(1.0 / 3.0));
    CHECK(r.argmax_index == 1);
    CHECK(r.pos_indices == std::vector<std::size_t>{0, 1});
    CHECK(r.weights == std::vector<double>{0.1, 0.9, 0.0});
  }

  TEST_CASE("properties on random inputs") {
    Rng rng(31);
    for (int t = 0; t < 500; ++t) {
      const std::size_t n = 1 + rng.below(12);
      std::vector<double> ious(n);
      for (double& v : ious) v = rng.uniform() < 0.1 ? 0.0 : rng.uniform();
      const double delta = rng.uniform(0.01, 1.0), eps = rng.uniform(0.0, 0.99);
      const FilterResult r = filter_ious(ious, cfg(delta, eps));

      CHECK(std::abs(sum(r.weights) - 1.0) <= 1e-12);
      CHECK(r.pos_indices.size() + r.neg_indices.size() == n);
      for (std::size_t p = 0; p < n; ++p) {
        CHECK(r.weights[p] >= 0.0);
        CHECK(r.is_positive(p) == (ious[p] >= delta));
        if (r.weights[p] > 0.0) CHECK((p == r.argmax_index || r.is_positive(p)));
      }
      if (r.k_count >= 1) CHECK(r.weights[r.argmax_index] == doctest::Approx(1.0 - eps));

      // Raising delta never adds positives.
      const FilterResult higher = filter_ious(ious, cfg(std::min(1.0, delta + 0.1), eps));
      for (std::size_t p : higher.pos_indices) CHECK(r.is_positive(p));

      // A permutation permutes everything alike (IoUs are distinct almost surely).
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = n; i-- > 1;) std::swap(perm[i], perm[rng.below(i + 1)]);
      std::vector<double> permuted(n);
      for (std::size_t i = 0; i < n; ++i) permuted[i] = ious[perm[i]];
      const FilterResult rp = filter_ious(permuted, cfg(delta, eps));
      bool distinct = true;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) distinct = distinct && ious[i] != ious[j];
      if (distinct) {
        for (std::size_t i = 0; i < n; ++i) CHECK(rp.weights[i] == r.weights[perm[i]]);
      }
    }
  }

  TEST_CASE("delta of one keeps only exact matches") {
    const FilterResult r = filter_ious({0.999, 0.5}, cfg(1.0, 0.3));
    CHECK(r.pos_indices.empty());
    CHECK(r.weights == std::vector<double>{1.0, 0.0});
  }
}

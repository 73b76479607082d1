#include <random>

#include "coroseg/errors.hpp"
#include "coroseg/metrics.hpp"
#include "oracles.hpp"

// c10 logging defines CHECK-style macros that would shadow doctest's.
#undef CHECK
#undef CHECK_EQ
#undef CHECK_NE
#undef CHECK_LT
#undef CHECK_LE
#undef CHECK_GT
#undef CHECK_GE
#include <doctest.h>

using namespace coroseg;

namespace {

Mask voxels(Dims d, Spacing s, std::initializer_list<Index3> on) {
  Mask m(d, s);
  for (const auto& p : on) m(p[0], p[1], p[2]) = 1;
  return m;
}

}  // namespace

TEST_CASE("dice follows the overlap definition") {
  const Dims d{4, 4, 4};
  Mask a = voxels(d, {1, 1, 1}, {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}});
  Mask b = voxels(d, {1, 1, 1}, {{1, 0, 0}, {2, 0, 0}, {3, 0, 0}, {0, 1, 0}, {0, 2, 0}, {0, 3, 0}});
  CHECK(dice(a, b) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(dice(a, a) == 1.0);
  const Mask c = voxels(d, {1, 1, 1}, {{3, 3, 3}});
  CHECK(dice(a, c) == 0.0);
  const Mask none(d, {1, 1, 1});
  CHECK(dice(none, none) == 1.0);
  CHECK(dice(a, none) == 0.0);
  CHECK_THROWS_AS(dice(a, Mask({4, 4, 5}, {1, 1, 1})), ShapeError);
}

TEST_CASE("surface points") {
  SUBCASE("single voxel in millimetres") {
    const Mask m = voxels({6, 6, 6}, {0.5, 0.5, 1.0}, {{2, 3, 4}});
    const auto pts = surface_points(m);
    REQUIRE(pts.size() == 1);
    CHECK((pts[0] == Point3{1.0, 1.5, 4.0}));
  }
  SUBCASE("solid 3x3x3 block keeps all but the centre") {
    Mask m({5, 5, 5}, {1, 1, 1});
    for (int z = 1; z <= 3; ++z)
      for (int y = 1; y <= 3; ++y)
        for (int x = 1; x <= 3; ++x) m(x, y, z) = 1;
    const auto pts = surface_points(m);
    CHECK(pts.size() == 26);
    CHECK((std::find(pts.begin(), pts.end(), Point3{2, 2, 2}) == pts.end()));
    CHECK(point_set(m, PointSetMode::AllVoxels).size() == 27);
  }
  SUBCASE("voxels on the grid border count as boundary") {
    const Mask full({3, 3, 3}, {1, 1, 1}, 1);
    CHECK(surface_points(full).size() == 26);
  }
  SUBCASE("empty mask") { CHECK(surface_points(Mask({3, 3, 3}, {1, 1, 1})).empty()); }
}

TEST_CASE("hausdorff examples") {
  const Spacing s{0.5, 0.5, 0.625};
  const Mask a = voxels({8, 4, 4}, s, {{1, 1, 1}});
  const Mask b = voxels({8, 4, 4}, s, {{4, 1, 1}});
  CHECK(hausdorff(a, b) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(hd95(a, b) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(hausdorff(a, a) == 0.0);
  CHECK(hd95(a, a) == 0.0);
  const Mask none({8, 4, 4}, s);
  CHECK_THROWS_AS(hausdorff(a, none), UndefinedMetric);
  CHECK_THROWS_AS(hd95(none, a), UndefinedMetric);
  CHECK_THROWS_AS(hausdorff(a, voxels({8, 4, 4}, {0.5, 0.5, 1.0}, {{1, 1, 1}})), ValidationError);
  CHECK_THROWS_AS(hausdorff(a, Mask({8, 4, 5}, s)), ShapeError);
}

TEST_CASE("percentile uses linear interpolation between closest ranks") {
  CHECK((percentile_linear({1, 2, 3, 4}, 0.95) == doctest::Approx(3.85)));
  CHECK((percentile_linear({4, 1, 3, 2}, 0.5) == doctest::Approx(2.5)));
  CHECK((percentile_linear({7}, 0.95) == 7.0));
  CHECK((percentile_linear({0, 10}, 1.0) == 10.0));
}

TEST_CASE("directed distances match exhaustive search") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-5, 5);
  SurfacePointSet from(300), to(211);
  for (auto& p : from) p = {u(rng), u(rng), u(rng)};
  for (auto& p : to) p = {u(rng), u(rng), u(rng)};
  const auto fast = directed_distances(from, to);
  const auto slow = oracle::all_pairs_min(from, to);
  REQUIRE(fast.size() == slow.size());
  for (std::size_t i = 0; i < fast.size(); ++i) CHECK(fast[i] == slow[i]);
}

TEST_CASE("randomized masks agree with brute-force oracles") {
  std::mt19937_64 rng(2023);
  std::uniform_int_distribution<std::int64_t> extent(2, 12);
  std::uniform_real_distribution<double> spacing(0.2, 2.0);
  std::uniform_real_distribution<double> density(0.02, 0.6);
  for (int trial = 0; trial < 50; ++trial) {
    CAPTURE(trial);
    const Dims d{extent(rng), extent(rng), extent(rng)};
    const Spacing s{spacing(rng), spacing(rng), spacing(rng)};
    const Mask a = oracle::random_mask(d, s, density(rng), rng);
    const Mask b = oracle::random_mask(d, s, density(rng), rng);
    CHECK(std::abs(dice(a, b) - oracle::dice(a, b)) <= 1e-12);
    CHECK(std::abs(hausdorff(a, b) - oracle::hausdorff(a, b)) <= 1e-9);
    CHECK(std::abs(hd95(a, b) - oracle::hd95(a, b)) <= 1e-9);
  }
}

TEST_CASE("metric properties") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> spacing(0.3, 1.5);
  std::uniform_real_distribution<double> scale(0.1, 10.0);
  for (int trial = 0; trial < 30; ++trial) {
    const Dims d{10, 9, 8};
    const Spacing s{spacing(rng), spacing(rng), spacing(rng)};
    const Mask a = oracle::random_mask(d, s, 0.2, rng);
    const Mask b = oracle::random_mask(d, s, 0.3, rng);
    const double dab = dice(a, b), h = hausdorff(a, b), h95 = hd95(a, b);
    CHECK(dab == dice(b, a));
    CHECK(dab >= 0.0);
    CHECK(dab <= 1.0);
    CHECK(h == hausdorff(b, a));
    CHECK(h95 == hd95(b, a));
    CHECK(h95 >= 0.0);
    CHECK(h95 <= h);

    const double k = scale(rng);
    Mask as = a, bs = b;
    as.set_spacing({s.sx * k, s.sy * k, s.sz * k});
    bs.set_spacing(as.spacing());
    CHECK(dice(as, bs) == dab);
    CHECK(hausdorff(as, bs) == doctest::Approx(k * h).epsilon(1e-12));
    CHECK(hd95(as, bs) == doctest::Approx(k * h95).epsilon(1e-12));
  }
}

TEST_CASE("voxel-set mode includes interior voxels") {
  Mask a({7, 7, 7}, {1, 1, 1});
  for (int z = 1; z <= 5; ++z)
    for (int y = 1; y <= 5; ++y)
      for (int x = 1; x <= 5; ++x) a(x, y, z) = 1;
  const Mask b = voxels({7, 7, 7}, {1, 1, 1}, {{3, 3, 3}});
  // The far corner of the cube is sqrt(12) from the centre voxel in both modes,
  // but only the voxel-set mode lets the centre itself be matched exactly.
  CHECK(hausdorff(a, b) == doctest::Approx(std::sqrt(12.0)));
  CHECK(hausdorff(a, b, PointSetMode::AllVoxels) == doctest::Approx(std::sqrt(12.0)));
  const auto inward = directed_distances(point_set(b, PointSetMode::Surface), point_set(a, PointSetMode::Surface));
  CHECK(inward.front() == doctest::Approx(2.0));
  const auto inward_all = directed_distances(point_set(b, PointSetMode::AllVoxels), point_set(a, PointSetMode::AllVoxels));
  CHECK(inward_all.front() == 0.0);
}

TEST_CASE("evaluate_case records undefined distances instead of throwing") {
  const Mask truth = voxels({5, 5, 5}, {1, 1, 1}, {{2, 2, 2}});
  const Mask none({5, 5, 5}, {1, 1, 1});
  const MetricReport miss = evaluate_case("c1", none, truth);
  CHECK(miss.case_id == "c1");
  CHECK(miss.dice == 0.0);
  CHECK(miss.undefined());
  CHECK_FALSE(miss.hd.has_value());
  const MetricReport both_empty = evaluate_case("c2", none, none);
  CHECK(both_empty.dice == 1.0);
  CHECK(both_empty.undefined());
  const MetricReport hit = evaluate_case("c3", truth, truth);
  CHECK(hit.dice == 1.0);
  REQUIRE(hit.hd95.has_value());
  CHECK(*hit.hd95 == 0.0);
  CHECK(*hit.hd == 0.0);
}

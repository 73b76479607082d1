#include <random>

#include "coroseg/errors.hpp"
#include "coroseg/datapipe.hpp"
#include "coroseg/phantom.hpp"

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

/// Cube whose image value encodes the voxel index, with one labelled voxel.
PatchPair probe_patch(std::int64_t n, Index3 marked) {
  PatchPair pp;
  pp.image = Volume({n, n, n}, {1, 1, 1});
  pp.label = Mask({n, n, n}, {1, 1, 1});
  for (std::int64_t i = 0; i < pp.image.size(); ++i) pp.image[i] = static_cast<float>(i);
  pp.label(marked[0], marked[1], marked[2]) = 1;
  return pp;
}

}  // namespace

TEST_CASE("window_normalize clamps and rescales") {
  Volume v({3, 1, 1}, {0.4, 0.4, 0.625});
  v[0] = -50.0f;
  v[1] = 250.0f;
  v[2] = 600.0f;
  const Volume n = window_normalize(v);
  CHECK(n[0] == 0.0f);
  CHECK(n[1] == 0.5f);
  CHECK(n[2] == 1.0f);
  CHECK(n.dims() == v.dims());
  CHECK(n.spacing() == v.spacing());
}

TEST_CASE("window_normalize edge cases") {
  const Volume zeros({4, 4, 4}, {1, 1, 1});
  CHECK(window_normalize(zeros) == zeros);
  CHECK_THROWS_AS(window_normalize(zeros, 5.0, 5.0), ValidationError);
  CHECK_THROWS_AS(window_normalize(zeros, 6.0, 5.0), ValidationError);

  Rng rng(3);
  std::normal_distribution<float> noise(250.0f, 400.0f);
  Volume v({16, 16, 16}, {1, 1, 1});
  for (auto& x : v.storage()) x = noise(rng);
  const Volume once = window_normalize(v);
  for (float x : once.storage()) {
    CHECK(x >= 0.0f);
    CHECK(x <= 1.0f);
  }
  CHECK(window_normalize(once, 0.0, 1.0) == once);
}

TEST_CASE("sample_patch on an exactly 64^3 volume returns the unique window") {
  PhantomSpec s;
  s.seed = 4;
  const Phantom ph = generate_phantom(s);
  const Volume img = window_normalize(ph.image);
  Rng rng(0);
  for (int i = 0; i < 5; ++i) {
    const PatchPair pp = sample_patch(img, ph.label, rng);
    CHECK((pp.origin == Index3{0, 0, 0}));
    CHECK(pp.image == img);
    CHECK(pp.label == ph.label);
  }
}

TEST_CASE("sample_patch rejects volumes smaller than a patch") {
  const Volume img({64, 63, 64}, {1, 1, 1});
  const Mask m({64, 63, 64}, {1, 1, 1});
  Rng rng(0);
  CHECK_THROWS_AS(sample_patch(img, m, rng), ShapeError);
  CHECK_THROWS_AS(PatchSampler(Volume({64, 64, 64}, {1, 1, 1}), Mask({65, 64, 64}, {1, 1, 1})), ShapeError);
}

TEST_CASE("patches copy the right window") {
  Volume img({70, 66, 65}, {1, 1, 1});
  Mask m({70, 66, 65}, {1, 1, 1});
  for (std::int64_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i);
  const PatchPair pp = extract_patch(img, m, {3, 2, 1});
  CHECK((pp.image.dims() == Dims{64, 64, 64}));
  CHECK(pp.image(0, 0, 0) == img(3, 2, 1));
  CHECK(pp.image(63, 63, 63) == img(66, 65, 64));
  CHECK_THROWS_AS(extract_patch(img, m, {7, 0, 0}), ShapeError);
}

TEST_CASE("foreground bias yields mostly positive patches") {
  PhantomSpec s;
  s.seed = 11;
  s.dims = {128, 128, 128};
  const Phantom ph = generate_phantom(s);
  const Volume img = window_normalize(ph.image);
  const PatchSampler sampler(img, ph.label);
  Rng rng(5);
  int positive = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const PatchPair pp = sampler.draw(rng, 0.5);
    positive += count_foreground(pp.label) > 0 ? 1 : 0;
  }
  // The biased half alone contributes 0.5; the 99% binomial half-width at
  // n = 10^4 is about 0.013, so 0.45 leaves a wide margin.
  CHECK(static_cast<double>(positive) / draws >= 0.45);
}

TEST_CASE("foreground-biased draw on an empty mask falls back to uniform") {
  const Volume img({80, 64, 64}, {1, 1, 1});
  const Mask empty({80, 64, 64}, {1, 1, 1});
  Rng rng(1);
  const PatchPair pp = sample_patch(img, empty, rng, 1.0);
  CHECK(pp.fallback_uniform);
  CHECK(pp.origin[0] >= 0);
  CHECK(pp.origin[0] <= 16);
  Mask one = empty;
  one(40, 30, 30) = 1;
  CHECK_FALSE(sample_patch(img, one, rng, 1.0).fallback_uniform);
}

TEST_CASE("augment with zero probabilities is the identity") {
  const PatchPair pp = probe_patch(64, {3, 4, 5});
  AugmentConfig cfg;
  cfg.p_flip = 0.0;
  cfg.p_rot = 0.0;
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    const PatchPair out = augment(pp, cfg, rng);
    CHECK(out.image == pp.image);
    CHECK(out.label == pp.label);
  }
}

TEST_CASE("flipping an axis twice restores the patch") {
  const PatchPair pp = probe_patch(64, {1, 2, 3});
  for (int axis = 0; axis < 3; ++axis) {
    CHECK(flip_axis(flip_axis(pp.image, axis), axis) == pp.image);
    CHECK_FALSE(flip_axis(pp.image, axis) == pp.image);
  }
  AugmentConfig always;
  always.p_flip = 1.0;
  always.p_rot = 0.0;
  Rng rng(2);
  const PatchPair twice = augment(augment(pp, always, rng), always, rng);
  CHECK(twice.image == pp.image);
}

TEST_CASE("quarter turns compose like rotations") {
  const PatchPair pp = probe_patch(6, {0, 1, 2});
  for (int axis = 0; axis < 3; ++axis) {
    CHECK(rotate_axis(rotate_axis(pp.image, axis, 1), axis, 3) == pp.image);
    CHECK(rotate_axis(pp.image, axis, 4) == pp.image);
    const int b = (axis + 1) % 3, c = (axis + 2) % 3;
    // A half turn reverses both in-plane axes.
    CHECK(rotate_axis(pp.image, axis, 2) == flip_axis(flip_axis(pp.image, b), c));
    // The rotation axis itself is untouched.
    const auto r = rotate_axis(pp.image, axis, 1);
    for (std::int64_t i = 0; i < r.size(); ++i) {
      const auto src = pp.image.index_of(static_cast<std::int64_t>(r[i]));
      CHECK(src[axis] == r.index_of(i)[axis]);
    }
  }
}

TEST_CASE("augmentation keeps image and label aligned") {
  Rng rng(17);
  AugmentConfig cfg;
  cfg.p_flip = 0.5;
  cfg.p_rot = 0.5;
  std::uniform_int_distribution<std::int64_t> coord(0, 15);
  for (int trial = 0; trial < 200; ++trial) {
    const Index3 marked{coord(rng), coord(rng), coord(rng)};
    const PatchPair pp = probe_patch(16, marked);
    AugmentTrace trace;
    const PatchPair out = augment(pp, cfg, rng, &trace);
    CHECK(count_foreground(out.label) == 1);
    const Index3 moved = map_voxel(trace, marked, 16);
    CHECK(out.label(moved[0], moved[1], moved[2]) == 1);
    CHECK(out.image(moved[0], moved[1], moved[2]) == pp.image(marked[0], marked[1], marked[2]));
  }
}

TEST_CASE("augmentation frequencies match the configured probabilities") {
  const PatchPair pp = probe_patch(8, {0, 0, 0});
  AugmentConfig cfg;
  Rng rng(2024);
  std::array<int, 3> flips{}, rots{};
  std::array<int, 4> angles{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    AugmentTrace t;
    augment(pp, cfg, rng, &t);
    for (int a = 0; a < 3; ++a) {
      flips[a] += t.flipped[a];
      rots[a] += t.quarter_turns[a] != 0;
      angles[t.quarter_turns[a]]++;
    }
  }
  for (int a = 0; a < 3; ++a) {
    CHECK(flips[a] / double(n) == doctest::Approx(0.10).epsilon(0.1));
    CHECK(rots[a] / double(n) == doctest::Approx(0.10).epsilon(0.1));
  }
  const int rotated = angles[1] + angles[2] + angles[3];
  for (int k = 1; k <= 3; ++k) CHECK(angles[k] / double(rotated) == doctest::Approx(1.0 / 3).epsilon(0.15));
}

TEST_CASE("augment rejects invalid probabilities") {
  AugmentConfig cfg;
  cfg.p_flip = 1.5;
  Rng rng(0);
  CHECK_THROWS_AS(augment(probe_patch(4, {0, 0, 0}), cfg, rng), ValidationError);
}

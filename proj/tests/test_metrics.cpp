#include <random>

#include <gtest/gtest.h>

#include "symslice/data.hpp"
#include "symslice/grid.hpp"
#include "symslice/metrics.hpp"
#include "test_support.hpp"

using namespace symslice;

namespace {

// O(n) nearest neighbor with smallest-index tie-breaking.
std::size_t brute_nearest(const std::vector<Vec3>& pts, const Vec3& q) {
  std::size_t best = 0;
  double bd = (pts[0] - q).squaredNorm();
  for (std::size_t i = 1; i < pts.size(); ++i) {
    double d = (pts[i] - q).squaredNorm();
    if (d < bd) {
      bd = d;
      best = i;
    }
  }
  return best;
}

}  // namespace

TEST(OffsetsLoss, Examples) {
  Tensor t({2, 3}, {0.1, -0.2, 0.3, 0.0, 0.5, -0.5});
  EXPECT_EQ(offsets_loss(t, t).item(), 0.0);
  Tensor shifted({2, 3}, {0.35, 0.05, 0.55, 0.25, 0.75, -0.25});
  EXPECT_NEAR(offsets_loss(shifted, t).item(), 0.25, 1e-15);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::vector<double> a(50), b(50);
  double ref = 0;
  for (int i = 0; i < 50; ++i) {
    a[i] = g(rng);
    b[i] = g(rng);
    ref += std::abs(a[i] - b[i]);
  }
  EXPECT_NEAR(offsets_loss(Tensor({50}, a), Tensor({50}, b)).item(), ref / 50, 1e-12);
  test::expect_error(ErrorCode::ShapeMismatch, [] { offsets_loss(Tensor({2}, 0.0), Tensor({3}, 0.0)); });
}

TEST(Gte, Examples) {
  GroundTruth gt{{Plane{Vec3(0, 0.6, 0.8), 0.2}}, {}};
  EXPECT_NEAR(gte(gt.planes[0], gt), 0.0, 1e-30);
  EXPECT_NEAR(gte(Plane{-gt.planes[0].n, -0.2}, gt), 0.0, 1e-30);
  EXPECT_DOUBLE_EQ(gte(Plane{Vec3::UnitX(), 0.0}, GroundTruth{{Plane{Vec3::UnitY(), 0.0}}, {}}), 2.0);
  test::expect_error(ErrorCode::Degenerate, [&] { gte(Plane{Vec3::Zero(), 1.0}, gt); });
}

TEST(Gte, SignInvarianceAndRange) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10000; ++i) {
    Plane p = test::random_plane(rng, 2.0), q = test::random_plane(rng, 2.0);
    GroundTruth gq{{q}, {}}, gq_neg{{Plane{-q.n, -q.d}}, {}};
    double e = gte(p, gq);
    EXPECT_NEAR(e, gte(Plane{-p.n, -p.d}, gq), 1e-12);
    EXPECT_NEAR(e, gte(p, gq_neg), 1e-12);
    EXPECT_GE(e, 0.0);
    EXPECT_LE(e, 2.0 + 1e-12);  // sign minimization caps the [0, 4] range at 2
  }
}

TEST(Gte, ClosestOfTwoPlanesIsMinimum) {
  std::mt19937_64 rng(3);
  GroundTruth two{{Plane{Vec3::UnitX(), 0.0}, Plane{Vec3::UnitZ(), 0.0}}, {}};
  for (int i = 0; i < 1000; ++i) {
    Plane p = test::random_plane(rng, 0.3);
    double both = gte(p, two);
    EXPECT_EQ(both, std::min(gte_single(p, two.planes[0]), gte_single(p, two.planes[1])));
  }
}

TEST(GteLoss, MatchesScalarGteOnSolverOutput) {
  std::mt19937_64 rng(4);
  GroundTruth gt{{Plane{Vec3(0, 0.6, 0.8), 0.1}, Plane{Vec3::UnitX(), -0.05}}, {}};
  for (int i = 0; i < 200; ++i) {
    Vec4 beta = Vec4::Random().normalized();
    Tensor b(Shape{4}, std::vector<double>(beta.data(), beta.data() + 4));
    Plane p = plane_from_homogeneous(beta);
    EXPECT_NEAR(gte_loss(b, gt).item(), gte(p, gt), 1e-12);
  }
}

TEST(KdIndex, MatchesBruteForce) {
  std::mt19937_64 rng(5);
  std::vector<Vec3> pts;
  for (int i = 0; i < 2000; ++i) pts.push_back(test::random_vec(rng, 1.0));
  KdIndex index(pts);
  for (int i = 0; i < 1000; ++i) {
    Vec3 q = test::random_vec(rng, 1.2);
    EXPECT_EQ(index.nearest(q), brute_nearest(pts, q));
  }
}

TEST(KdIndex, TiesGoToSmallestIndex) {
  // Lattice points with duplicates: many equidistant candidates.
  std::vector<Vec3> pts;
  for (int rep = 0; rep < 3; ++rep)
    for (int x = -2; x <= 2; ++x)
      for (int y = -2; y <= 2; ++y) pts.emplace_back(x, y, 0);
  KdIndex index(pts);
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> u(-5, 5);
  for (int i = 0; i < 1000; ++i) {
    Vec3 q(u(rng) * 0.5, u(rng) * 0.5, u(rng) * 0.5);
    EXPECT_EQ(index.nearest(q), brute_nearest(pts, q));
  }
}

TEST(Sde, Examples) {
  EXPECT_DOUBLE_EQ(sde(Plane{Vec3::UnitX(), 0.0}, GroundTruth{{}, {Vec3(1, 0, 0)}}), 4.0);
  auto [cloud, gt] = gen_shape(ShapeRecipe{ShapeFamily::mirrored_blob, 1024, 0.0, 1});
  EXPECT_LT(sde(gt.planes[0], gt), 1e-12);
}

TEST(Sde, EqualsBruteForceOracle) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    GroundTruth gt;
    for (int i = 0; i < 300; ++i) gt.object_points.push_back(test::random_vec(rng, 0.5));
    Plane s = test::random_plane(rng, 0.2);
    // samples >= |O| with replacement; samples = |O| without replacement covers every point once
    double full = sde(s, gt, 300, 1);
    double ref = 0;
    for (const auto& p : gt.object_points) {
      Vec3 r = reflect_point(p, s);
      ref += (r - gt.object_points[brute_nearest(gt.object_points, r)]).squaredNorm();
    }
    EXPECT_NEAR(full, ref / 300, 1e-12);
  }
}

TEST(Sde, InvariantToRelabelingWhenCoveringAllPoints) {
  std::mt19937_64 rng(8);
  auto [cloud, gt] = gen_shape(ShapeRecipe{ShapeFamily::box_union, 512, 0.005, 2});
  Plane s = test::random_plane(rng, 0.1);
  GroundTruth shuffled = gt;
  std::shuffle(shuffled.object_points.begin(), shuffled.object_points.end(), rng);
  EXPECT_NEAR(sde(s, gt, 512, 3), sde(s, shuffled, 512, 9), 1e-12);
}

TEST(Sde, DecreasesTowardTrueSymmetry) {
  auto [cloud, gt] = gen_shape(ShapeRecipe{ShapeFamily::mirrored_blob, 2048, 0.0, 5});
  KdIndex index(gt.object_points);
  double prev = std::numeric_limits<double>::infinity();
  for (double deg : {12.0, 10.0, 8.0, 6.0, 4.0, 3.0, 2.0, 1.0, 0.5, 0.0}) {
    double t = deg * std::numbers::pi / 180.0;
    Plane s{Vec3(std::cos(t), std::sin(t), 0.0), 0.0};
    double v = sde(s, gt, index);
    EXPECT_LE(v, prev + 1e-12) << deg;
    prev = v;
  }
  EXPECT_LT(prev, 1e-12);
}

TEST(AngularError, Examples) {
  GroundTruth gt{{Plane{Vec3::UnitX(), 0.0}}, {}};
  EXPECT_EQ(angular_error(Plane{Vec3::UnitX(), 0.3}, gt), 0.0);
  EXPECT_NEAR(angular_error(Plane{Vec3::UnitY(), 0.0}, gt), 90.0, 1e-12);
  EXPECT_NEAR(angular_error(Plane{Vec3(1, 1, 0).normalized(), 0.0}, gt), 45.0, 1e-12);
  EXPECT_NEAR(angular_error(Plane{-Vec3::UnitX(), 0.0}, gt), 0.0, 1e-12);
}

#include <cstdio>
#include <filesystem>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "symslice/grid.hpp"
#include "test_support.hpp"

using namespace symslice;

namespace {

Cloud cloud_of(std::vector<Vec3> pts) { return Cloud{std::move(pts), CloudKind::full, {}}; }

Cloud random_unit_box_cloud(std::mt19937_64& rng, int n) {
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i) pts.push_back(test::random_vec(rng, 0.5));
  return cloud_of(pts);
}

}  // namespace

TEST(GridSpec, Validation) {
  EXPECT_NO_THROW(GridSpec{}.validate());
  test::expect_error(ErrorCode::InvalidSpec, [] { GridSpec{30, 32, 32, 8, 2}.validate(); });
  test::expect_error(ErrorCode::InvalidSpec, [] { GridSpec{8, 8, 8, 9, 1}.validate(); });
  test::expect_error(ErrorCode::InvalidSpec, [] { GridSpec{8, 8, 8, 2, 4}.validate(); });
  test::expect_error(ErrorCode::InvalidSpec, [] { GridSpec{8, 8, 8, 0, 1}.validate(); });
}

TEST(Normalize, TwoPointsHandValue) {
  auto out = normalize_cloud(cloud_of({Vec3(0, 0, 0), Vec3(1, 0, 0)}));
  EXPECT_NEAR(out.points[0].x(), -0.475, 1e-15);
  EXPECT_NEAR(out.points[1].x(), 0.475, 1e-15);
  EXPECT_EQ(out.norm.center, Vec3(0.5, 0, 0));
  EXPECT_NEAR(out.norm.scale, 1.0 / 0.95, 1e-15);
}

TEST(Normalize, IdempotentOnNormalizedCloud) {
  std::mt19937_64 rng(3);
  auto once = normalize_cloud(random_unit_box_cloud(rng, 500));
  auto twice = normalize_cloud(once);
  for (std::size_t i = 0; i < once.points.size(); ++i) {
    EXPECT_LT((once.points[i] - twice.points[i]).norm(), 1e-12);
  }
}

TEST(Normalize, Errors) {
  test::expect_error(ErrorCode::EmptyCloud, [] { normalize_cloud(Cloud{}); });
  test::expect_error(ErrorCode::ZeroExtent,
                     [] { normalize_cloud(cloud_of({Vec3(1, 2, 3), Vec3(1, 2, 3), Vec3(1, 2, 3)})); });
}

TEST(Normalize, RoundTripAndBounds) {
  std::mt19937_64 rng(4);
  std::vector<Vec3> pts;
  for (int i = 0; i < 1000; ++i) pts.push_back(test::random_vec(rng, 7.0) + Vec3(3, -2, 10));
  auto c = cloud_of(pts);
  auto n = normalize_cloud(c);
  auto back = denormalize_points(n);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_LT((back[i] - pts[i]).norm(), 1e-12);
    EXPECT_LE(n.points[i].cwiseAbs().maxCoeff(), 0.475 + 1e-15);
  }
}

TEST(Voxelize, CenterPointCell) {
  GridSpec spec{4, 4, 4, 2, 1};
  auto g = voxelize(cloud_of({Vec3::Zero()}), spec);
  EXPECT_EQ(g.at(2, 2, 2), 1);
  EXPECT_EQ(g.occupied(), 1u);
}

TEST(Voxelize, UpperBoundaryClampsToLastCell) {
  GridSpec spec{4, 4, 4, 2, 1};
  const double e = 1e-12;
  auto g = voxelize(cloud_of({Vec3(0.5 - e, 0.5 - e, 0.5 - e), Vec3(0.5, 0.5, 0.5)}), spec);
  EXPECT_EQ(g.at(3, 3, 3), 1);
  EXPECT_EQ(g.occupied(), 1u);
}

TEST(Voxelize, AxisConvention) {
  GridSpec spec{4, 8, 12, 2, 1};
  // x -> width, y -> height, z -> depth
  auto g = voxelize(cloud_of({Vec3(-0.49, 0.49, 0.0)}), spec);
  EXPECT_EQ(g.at(3, 4, 0), 1);
}

TEST(Voxelize, OutOfBox) {
  test::expect_error(ErrorCode::OutOfBox, [] { voxelize(cloud_of({Vec3(0.6, 0, 0)}), GridSpec{4, 4, 4, 1, 0}); });
  EXPECT_NO_THROW(voxelize(cloud_of({Vec3(0.5 + 1e-10, 0, 0)}), GridSpec{4, 4, 4, 1, 0}));
}

TEST(Voxelize, OccupiedCountMatchesBruteForce) {
  std::mt19937_64 rng(5);
  auto c = random_unit_box_cloud(rng, 10000);
  GridSpec spec{32, 32, 32, 8, 2};
  auto g = voxelize(c, spec);
  std::set<std::tuple<int, int, int>> unique;
  for (const auto& p : c.points) {
    int h = std::min(31, int(std::floor((p.y() + 0.5) * 32)));
    int d = std::min(31, int(std::floor((p.z() + 0.5) * 32)));
    int w = std::min(31, int(std::floor((p.x() + 0.5) * 32)));
    unique.insert({h, d, w});
  }
  EXPECT_EQ(g.occupied(), unique.size());
  for (auto [h, d, w] : unique) EXPECT_EQ(g.at(h, d, w), 1);
}

TEST(Voxelize, MirrorConsistencyForAxisPlanes) {
  std::mt19937_64 rng(6);
  auto c = random_unit_box_cloud(rng, 3000);
  GridSpec spec{16, 16, 16, 4, 1};
  auto g = voxelize(c, spec);
  for (int axis = 0; axis < 3; ++axis) {
    Plane s{Vec3::Unit(axis), 0.0};
    Cloud m;
    for (const auto& p : c.points) m.points.push_back(reflect_point(p, s));
    auto gm = voxelize(m, spec);
    for (int h = 0; h < 16; ++h)
      for (int d = 0; d < 16; ++d)
        for (int w = 0; w < 16; ++w) {
          int mh = axis == 1 ? 15 - h : h, md = axis == 2 ? 15 - d : d, mw = axis == 0 ? 15 - w : w;
          ASSERT_EQ(g.at(h, d, w), gm.at(mh, md, mw));
        }
  }
}

TEST(Slices, AnchorsForDefaultSpec) {
  auto anchors = slice_anchors(GridSpec{32, 32, 32, 8, 2});
  EXPECT_EQ(anchors, (std::vector<int>{2, 6, 10, 14, 18, 22, 26, 30}));
}

TEST(Slices, ShapesAndZeroContext) {
  std::mt19937_64 rng(8);
  GridSpec spec{32, 8, 8, 8, 0};
  auto g = voxelize(random_unit_box_cloud(rng, 500), spec);
  auto slices = make_slices(g);
  ASSERT_EQ(slices.size(), 8u);
  for (const auto& s : slices) {
    EXPECT_EQ(s.channels, 1);
    for (int d = 0; d < 8; ++d)
      for (int w = 0; w < 8; ++w) EXPECT_EQ(s.at(0, d, w), g.at(s.anchor, d, w));
  }
}

TEST(Slices, PaddingBelowGrid) {
  std::mt19937_64 rng(9);
  GridSpec spec{16, 8, 8, 4, 4};  // anchors 2, 6, 10, 14
  std::vector<Vec3> pts;
  for (int i = 0; i < 4000; ++i) pts.push_back(test::random_vec(rng, 0.5));
  auto g = voxelize(cloud_of(pts), spec);
  auto slices = make_slices(g);
  ASSERT_EQ(slices[0].anchor, 2);
  ASSERT_EQ(slices[0].channels, 9);
  for (int c = 0; c < 9; ++c) {
    int h = 2 - 4 + c;
    for (int d = 0; d < 8; ++d)
      for (int w = 0; w < 8; ++w) EXPECT_EQ(slices[0].at(c, d, w), h < 0 ? 0 : g.at(h, d, w));
  }
  EXPECT_GT(g.occupied(), 0u);
}

TEST(Slices, AnchorRowsReproduceGridChannels) {
  std::mt19937_64 rng(10);
  GridSpec spec{32, 32, 32, 8, 2};
  auto g = voxelize(random_unit_box_cloud(rng, 5000), spec);
  for (const auto& s : make_slices(g)) {
    for (int d = 0; d < 32; ++d)
      for (int w = 0; w < 32; ++w) ASSERT_EQ(s.at(spec.K, d, w), g.at(s.anchor, d, w));
  }
}

TEST(AnchorCoords, HandValue) {
  auto coords = anchor_world_coords(GridSpec{4, 4, 4, 2, 1}, 2, 1);
  ASSERT_EQ(coords.size(), 16u);
  Vec3 p = coords[2 * 4 + 2];
  EXPECT_NEAR(p.x(), 0.125, 1e-15);
  EXPECT_NEAR(p.y(), 0.125, 1e-15);
  EXPECT_NEAR(p.z(), 0.125, 1e-15);
}

TEST(AnchorCoords, OddBlockCenterIsZero) {
  GridSpec spec{4, 12, 12, 1, 0};
  auto coords = anchor_world_coords(spec, 0, 4);  // 3 x 3 blocks
  EXPECT_NEAR(coords[1 * 3 + 1].x(), 0.0, 1e-15);
  EXPECT_NEAR(coords[1 * 3 + 1].z(), 0.0, 1e-15);
}

TEST(AnchorCoords, StrideFourAveragesStrideOne) {
  GridSpec spec{32, 32, 32, 8, 2};
  for (int anchor : slice_anchors(spec)) {
    auto fine = anchor_world_coords(spec, anchor, 1);
    auto coarse = anchor_world_coords(spec, anchor, 4);
    ASSERT_EQ(coarse.size(), 64u);
    for (int u = 0; u < 8; ++u)
      for (int v = 0; v < 8; ++v) {
        Vec3 mean = Vec3::Zero();
        for (int du = 0; du < 4; ++du)
          for (int dv = 0; dv < 4; ++dv) mean += fine[(u * 4 + du) * 32 + v * 4 + dv];
        mean /= 16.0;
        EXPECT_LT((mean - coarse[u * 8 + v]).norm(), 1e-15);
      }
  }
}

TEST(GridDump, RoundTripAndHeader) {
  std::mt19937_64 rng(12);
  GridSpec spec{8, 12, 16, 2, 1};
  auto g = voxelize(random_unit_box_cloud(rng, 300), spec);
  auto path = (std::filesystem::temp_directory_path() / "symslice_grid_test.bin").string();
  write_grid_dump(g, path);
  EXPECT_EQ(std::filesystem::file_size(path), 16u + 8u * 12u * 16u);
  std::ifstream is(path, std::ios::binary);
  unsigned char head[16];
  is.read(reinterpret_cast<char*>(head), 16);
  EXPECT_EQ(std::string(reinterpret_cast<char*>(head), 4), "SYMG");
  EXPECT_EQ(head[4], 8);
  EXPECT_EQ(head[8], 12);
  EXPECT_EQ(head[12], 16);
  auto back = read_grid_dump(path, spec);
  EXPECT_EQ(back.values, g.values);
  EXPECT_EQ(back.spec, spec);
  std::filesystem::remove(path);
}

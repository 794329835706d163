#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "symslice/refine.hpp"
#include "test_support.hpp"

using namespace symslice;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

Box3D random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return Box3D{Vec3(20 * u(rng), 20 * u(rng), 1 + 0.2 * u(rng)), Vec3(4.5 + u(rng), 1.8 + 0.2 * u(rng), 1.5),
               kPi * u(rng)};
}

// Plane through the box center containing its heading and the vertical axis.
Plane mid_plane(const Box3D& b) {
  Vec3 n(-std::sin(b.yaw), std::cos(b.yaw), 0.0);
  return Plane{n, n.dot(b.center)};
}

}  // namespace

TEST(WrapAngle, Range) {
  EXPECT_EQ(wrap_angle(0.0), 0.0);
  EXPECT_NEAR(wrap_angle(kPi), kPi, 1e-15);
  EXPECT_NEAR(wrap_angle(-kPi), kPi, 1e-15);
  EXPECT_NEAR(wrap_angle(3 * kPi / 2), -kPi / 2, 1e-15);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int i = 0; i < 1000; ++i) {
    double a = u(rng), w = wrap_angle(a);
    EXPECT_GT(w, -kPi);
    EXPECT_LE(w, kPi);
    EXPECT_NEAR(std::remainder(a - w, 2 * kPi), 0.0, 1e-12);
  }
}

TEST(SimulateDetections, ZeroSigmaAndDeterminism) {
  std::mt19937_64 rng(2);
  std::vector<Box3D> gt;
  for (int i = 0; i < 50; ++i) gt.push_back(random_box(rng));
  auto same = simulate_detections(gt, 0.0, 0.0, 7);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    EXPECT_EQ(same[i].yaw, gt[i].yaw);
    EXPECT_EQ(same[i].center, gt[i].center);
  }
  auto a = simulate_detections(gt, 0.1, 0.1, 7), b = simulate_detections(gt, 0.1, 0.1, 7);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    EXPECT_EQ(a[i].yaw, b[i].yaw);
    EXPECT_EQ(a[i].center, b[i].center);
    EXPECT_EQ(a[i].size, gt[i].size);
  }
  test::expect_error(ErrorCode::Config, [&] { simulate_detections(gt, -1.0, 0.0, 1); });
}

TEST(SimulateDetections, HalfNormalYawMean) {
  std::vector<Box3D> gt(10000, Box3D{Vec3::Zero(), Vec3::Ones(), 0.3});
  const double sigma = 0.087;
  auto det = simulate_detections(gt, sigma, 0.0, 11);
  double mean = 0;
  for (const auto& b : det) mean += std::abs(wrap_angle(b.yaw - 0.3));
  mean /= double(det.size());
  EXPECT_NEAR(mean, sigma * std::sqrt(2.0 / kPi), 0.1 * sigma * std::sqrt(2.0 / kPi));
}

TEST(RefineBox, AlignedPlaneLeavesBoxUnchanged) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    Box3D b = random_box(rng);
    Box3D r = refine_box(b, mid_plane(b));
    EXPECT_NEAR(wrap_angle(r.yaw - b.yaw), 0.0, 1e-12);
    EXPECT_LT((r.center - b.center).norm(), 1e-12);
    EXPECT_EQ(r.size, b.size);
  }
}

TEST(RefineBox, YawTenDegreesOffWorldXPlane) {
  // plane y = 0 contains world x: headings 0 or pi
  Box3D b{Vec3::Zero(), Vec3(4, 2, 1.5), 10.0 * kPi / 180.0};
  Box3D r = refine_box(b, Plane{Vec3::UnitY(), 0.0});
  EXPECT_EQ(r.yaw, 0.0);
  EXPECT_LT(r.center.norm(), 1e-15);
  b.yaw = kPi - 0.17;  // the detector's front/back sense is kept
  EXPECT_NEAR(refine_box(b, Plane{Vec3::UnitY(), 0.0}).yaw, kPi, 1e-15);
}

TEST(RefineBox, OffsetPlaneShiftsCenterAlongNormal) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 1000; ++i) {
    Box3D b = random_box(rng);
    Plane s = mid_plane(b);
    Plane moved{s.n, s.d + 0.2};
    Box3D r = refine_box(b, moved);
    EXPECT_LT((r.center - (b.center + 0.2 * s.n)).norm(), 1e-12);
    EXPECT_NEAR(signed_distance(r.center, moved), 0.0, 1e-12);
    Box3D fixed = refine_box(b, moved, false);
    EXPECT_EQ(fixed.center, b.center);
  }
}

TEST(RefineBox, IdempotentAndCenterMovesAlongNormalOnly) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (int i = 0; i < 2000; ++i) {
    Box3D b = random_box(rng);
    Vec3 n = Vec3(g(rng), g(rng), 0.3 * g(rng)).normalized();
    if (Vec3(n.x(), n.y(), 0).norm() <= 0.1) continue;
    Plane s{n, n.dot(b.center) + 0.5 * g(rng)};
    Box3D r = refine_box(b, s), rr = refine_box(r, s);
    EXPECT_NEAR(wrap_angle(rr.yaw - r.yaw), 0.0, 1e-12);
    EXPECT_LT((rr.center - r.center).norm(), 1e-12);
    EXPECT_EQ(r.size, b.size);
    Vec3 u = Vec3(n.x(), n.y(), 0).normalized(), delta = r.center - b.center;
    EXPECT_LT((delta - delta.dot(u) * u).norm(), 1e-12);
    // heading lies in the plane's vertical direction
    EXPECT_NEAR(std::cos(r.yaw) * u.x() + std::sin(r.yaw) * u.y(), 0.0, 1e-12);
    EXPECT_LE(std::abs(wrap_angle(r.yaw - b.yaw)), kPi / 2 + 1e-12);
  }
}

TEST(RefineBox, NearHorizontalPlaneRejected) {
  Box3D b{Vec3::Zero(), Vec3::Ones(), 0.0};
  test::expect_error(ErrorCode::DegenerateNormal, [&] { refine_box(b, Plane{Vec3::UnitZ(), 0.0}); });
  Vec3 tilted = Vec3(0.09, 0.0, 1.0).normalized();
  test::expect_error(ErrorCode::DegenerateNormal, [&] { refine_box(b, Plane{tilted, 0.0}); });
  EXPECT_NO_THROW(refine_box(b, Plane{Vec3(0.2, 0.0, 1.0).normalized(), 0.0}));
}

TEST(OrientationError, Examples) {
  auto box = [](double yaw) { return Box3D{Vec3::Zero(), Vec3::Ones(), yaw}; };
  EXPECT_EQ(orientation_error({box(0.4)}, {box(0.4)}).mean_before, 0.0);
  EXPECT_NEAR(orientation_error({box(kPi + 0.4)}, {box(0.4)}).mean_before, 0.0, 1e-15);
  EXPECT_NEAR(orientation_error({box(0.3)}, {box(0.0)}).mean_before, 0.3, 1e-15);
  EXPECT_NEAR(orientation_error({box(-3.0)}, {box(3.0)}).mean_before, 2 * kPi - 6.0, 1e-12);
  test::expect_error(ErrorCode::LengthMismatch, [&] { orientation_error({box(0)}, {box(0), box(1)}); });
  RefinementReport r = orientation_error({box(0.2), box(0.4)}, {box(0.1), box(0.0)}, {box(0.0), box(0.0)});
  EXPECT_NEAR(r.mean_before, 0.3, 1e-15);
  EXPECT_NEAR(r.mean_after, 0.05, 1e-15);
  EXPECT_NEAR(r.relative_reduction(), 0.25 / 0.3, 1e-12);
}

TEST(OrientationError, FoldedRange) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int i = 0; i < 10000; ++i) {
    double e = folded_yaw_error(u(rng), u(rng));
    EXPECT_GE(e, 0.0);
    EXPECT_LE(e, kPi / 2 + 1e-12);
  }
}

TEST(BoxFrames, PlaneRoundTripIsIdentity) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    Box3D b = random_box(rng);
    Plane s = test::random_plane(rng, 5.0);
    Plane back = box_to_world_plane(world_to_box_plane(s, b), b);
    EXPECT_LT((back.n - s.n).norm(), 1e-10);
    EXPECT_NEAR(back.d, s.d, 1e-10);
    // membership: a point on s maps onto the box-frame plane
    Vec3 p = test::random_point_on(s, rng, 3.0);
    EXPECT_NEAR(signed_distance(b.to_box(p), world_to_box_plane(s, b)), 0.0, 1e-10);
  }
}

TEST(VehicleScene, PlanesAndBoxesAreConsistent) {
  VehicleScene scene = make_vehicle_scene(20, 1024, 0.0, 8);
  ASSERT_EQ(scene.gt_boxes.size(), 20u);
  for (std::size_t i = 0; i < scene.ids.size(); ++i) {
    const auto& b = scene.gt_boxes[i];
    GroundTruth gt{{scene.planes[i]}, scene.clouds[i]};
    EXPECT_LT(sde(scene.planes[i], gt, 1024, 1), 1e-20);  // exact mirror pairs
    // GT plane is the box's vertical mid plane, so oracle refinement is exact
    Box3D r = refine_box(b, scene.planes[i]);
    EXPECT_LT(folded_yaw_error(r.yaw, b.yaw), 1e-12);
    EXPECT_LT((r.center - b.center).norm(), 1e-9);
    EXPECT_EQ(crop_to_box(scene.clouds[i], b, 1.0 + 1e-9).size(), scene.clouds[i].size());
    EXPECT_GT(b.size.x(), b.size.y());
  }
}

TEST(Refinement, OraclePlanesRemoveOrientationError) {
  VehicleScene scene = make_vehicle_scene(200, 512, 0.0, 9);
  auto det = simulate_detections(scene.gt_boxes, 5.0 * kPi / 180.0, 0.1, 10);
  std::vector<Box3D> refined;
  for (std::size_t i = 0; i < det.size(); ++i) refined.push_back(refine_box(det[i], scene.planes[i]));
  RefinementReport r = orientation_error(det, refined, scene.gt_boxes);
  EXPECT_GT(r.mean_before, 0.05);
  EXPECT_LT(r.mean_after, 1e-12);
  EXPECT_NEAR(r.relative_reduction(), 1.0, 1e-10);
}

TEST(EstimatePlaneInBox, TooFewPoints) {
  ModelConfig cfg;
  cfg.grid = GridSpec{8, 8, 8, 2, 1};
  cfg.enc_channels = {4, 4, 4, 4};
  cfg.gru_hidden = 4;
  cfg.decoder_channels = {4, 4, 4, 4, 3};
  auto p = init_params(cfg);
  Box3D b{Vec3::Zero(), Vec3(4, 2, 1.5), 0.0};
  Cloud few;
  for (int i = 0; i < 30; ++i) few.points.emplace_back(0.01 * i, 0.0, 0.0);
  few.points.emplace_back(10.0, 0.0, 0.0);  // outside the box
  few.points.emplace_back(0.0, 0.0, 0.1);
  test::expect_error(ErrorCode::TooFewPoints, [&] { estimate_plane_in_box(few, b, p, cfg); });
  // 31 inside so far; one more is enough to run
  few.points.emplace_back(0.5, -0.3, 0.1);
  EXPECT_NO_THROW(estimate_plane_in_box(few, b, p, cfg));
}

TEST(BoxCsv, RoundTripAndErrors) {
  auto dir = fs::temp_directory_path() / "symslice_box_csv";
  fs::create_directories(dir);
  std::mt19937_64 rng(11);
  std::vector<Box3D> boxes;
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) {
    boxes.push_back(random_box(rng));
    ids.push_back("b" + std::to_string(i));
  }
  auto path = (dir / "boxes.csv").string();
  write_boxes(path, ids, boxes, std::vector<std::string>(10, "ok"));
  auto [rid, rb] = read_boxes(path);
  EXPECT_EQ(rid, ids);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    EXPECT_EQ(rb[i].center, boxes[i].center);
    EXPECT_EQ(rb[i].size, boxes[i].size);
    EXPECT_EQ(rb[i].yaw, boxes[i].yaw);
  }
  {
    std::ofstream os(path);
    os << "id,cx,cy,cz,l,w,h,yaw\na,0,0,0,1,1,1,zz\n";
  }
  test::expect_error(ErrorCode::ParseError, [&] { read_boxes(path); });
  {
    std::ofstream os(path);
    os << "id,cx,cy,cz,l,w,h\n";
  }
  test::expect_error(ErrorCode::ParseError, [&] { read_boxes(path); });
  fs::remove_all(dir);
}

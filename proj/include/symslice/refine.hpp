#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "symslice/csv.hpp"
#include "symslice/data.hpp"
#include "symslice/grid.hpp"
#include "symslice/network.hpp"

namespace symslice {

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  return a <= -std::numbers::pi ? a + 2.0 * std::numbers::pi : a;
}

/// Oriented box in a z-up world: size is (length along the heading, width, height).
struct Box3D {
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();
  double yaw = 0.0;

  void validate() const {
    if (!(size.minCoeff() > 0.0)) throw Error(ErrorCode::InvalidSpec, "box sizes must be positive");
  }
  Mat3 rotation() const { return Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix(); }
  Vec3 to_box(const Vec3& p) const { return rotation().transpose() * (p - center); }
  Vec3 to_world(const Vec3& q) const { return rotation() * q + center; }
};

/// Box frame (x heading, y left, z up) to network frame (x, y up, z = -box y).
/// Vehicles in the network frame are mirrored across z = 0.
inline Mat3 box_to_network() {
  Mat3 q;
  q << 1, 0, 0, 0, 0, 1, 0, -1, 0;
  return q;
}

inline Plane world_to_box_plane(const Plane& s, const Box3D& b) {
  return transform_plane(s, Rotation{b.rotation().transpose()}, -(b.rotation().transpose() * b.center), 1.0);
}

inline Plane box_to_world_plane(const Plane& s, const Box3D& b) {
  return transform_plane(s, Rotation{b.rotation()}, b.center, 1.0);
}

/// Seeded Gaussian noise on yaw and all center coordinates; sizes untouched.
inline std::vector<Box3D> simulate_detections(const std::vector<Box3D>& gt, double yaw_sigma, double center_sigma,
                                              std::uint64_t seed) {
  if (yaw_sigma < 0.0 || center_sigma < 0.0) throw Error(ErrorCode::Config, "detector sigmas must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Box3D> out = gt;
  for (auto& b : out) {
    double dyaw = g(rng) * yaw_sigma;
    Vec3 dc(g(rng), g(rng), g(rng));
    if (yaw_sigma > 0.0) b.yaw = wrap_angle(b.yaw + dyaw);
    if (center_sigma > 0.0) b.center += dc * center_sigma;
  }
  return out;
}

/// Rigidly moves b so that the plane s runs along its middle: the heading
/// becomes perpendicular to the ground projection of the plane normal (the
/// candidate nearest the current yaw wins, so the detector's front/back
/// sense is kept) and, with `translate`, the center slides along that
/// projected normal onto the plane. Throws DegenerateNormal for planes
/// whose normal is within about 5.7 degrees of vertical.
inline Box3D refine_box(const Box3D& b, const Plane& s, bool translate = true) {
  Vec3 ground(s.n.x(), s.n.y(), 0.0);
  const double g = ground.norm();
  if (!(g > 0.1)) throw Error(ErrorCode::DegenerateNormal, "symmetry plane is near horizontal");
  const Vec3 u = ground / g;
  const double normal_dir = std::atan2(u.y(), u.x());
  Box3D out = b;
  double best = std::numeric_limits<double>::infinity();
  for (double k : {-0.5, 0.5}) {
    double cand = wrap_angle(normal_dir + k * std::numbers::pi);
    double diff = std::abs(wrap_angle(cand - b.yaw));
    if (diff < best) {
      best = diff;
      out.yaw = cand;
    }
  }
  if (translate) {
    // horizontal distance from the center to the plane's trace at the center height
    double dist = (s.n.x() * b.center.x() + s.n.y() * b.center.y() - (s.d - s.n.z() * b.center.z())) / g;
    out.center = b.center - dist * u;
  }
  return out;
}

/// Points inside the box scaled by `inflate`, expressed in the box frame.
inline std::vector<Vec3> crop_to_box(const std::vector<Vec3>& points, const Box3D& b, double inflate = 1.1) {
  const Vec3 half = b.size * (inflate / 2.0);
  std::vector<Vec3> out;
  for (const auto& p : points) {
    Vec3 q = b.to_box(p);
    if (std::abs(q.x()) <= half.x() && std::abs(q.y()) <= half.y() && std::abs(q.z()) <= half.z()) out.push_back(q);
  }
  return out;
}

/// Crops the points to the (x1.1) box, runs the network in the box's frame
/// and returns the plane in world coordinates.
inline Plane estimate_plane_in_box(const Cloud& points, const Box3D& b, const ModelParams& params,
                                   const ModelConfig& cfg) {
  b.validate();
  std::vector<Vec3> local = crop_to_box(points.points, b);
  if (local.size() < 32) {
    throw Error(ErrorCode::TooFewPoints, std::to_string(local.size()) + " points inside the box, need 32");
  }
  const Mat3 q = box_to_network();
  Cloud net;
  for (const auto& p : local) net.points.push_back(q * p);
  Cloud norm = normalize_cloud(net);
  NoGradGuard guard;
  Plane in_norm = forward(norm, params, cfg).fit.plane;
  Plane in_net = transform_plane(in_norm, Rotation::identity(), norm.norm.center, norm.norm.scale);
  Plane in_box = transform_plane(in_net, Rotation{q.transpose()}, Vec3::Zero(), 1.0);
  return box_to_world_plane(in_box, b);
}

struct RefinementReport {
  std::vector<double> yaw_before, yaw_after, yaw_gt;
  std::vector<double> error_before, error_after;
  double mean_before = 0.0, mean_after = 0.0;

  /// (before - after) / before; 0 when there is nothing to improve.
  double relative_reduction() const { return mean_before > 0.0 ? (mean_before - mean_after) / mean_before : 0.0; }
};

/// Heading error folded by pi: min over k in {0, pi} of |wrap(pred - gt + k)|, in [0, pi/2].
inline double folded_yaw_error(double pred, double gt) {
  double e = std::abs(wrap_angle(pred - gt));
  return std::min(e, std::numbers::pi - e);
}

inline RefinementReport orientation_error(const std::vector<Box3D>& before, const std::vector<Box3D>& after,
                                          const std::vector<Box3D>& gt) {
  if (before.size() != gt.size() || after.size() != gt.size()) {
    throw Error(ErrorCode::LengthMismatch, "box lists differ in length");
  }
  RefinementReport r;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    r.yaw_before.push_back(before[i].yaw);
    r.yaw_after.push_back(after[i].yaw);
    r.yaw_gt.push_back(gt[i].yaw);
    r.error_before.push_back(folded_yaw_error(before[i].yaw, gt[i].yaw));
    r.error_after.push_back(folded_yaw_error(after[i].yaw, gt[i].yaw));
    r.mean_before += r.error_before.back();
    r.mean_after += r.error_after.back();
  }
  if (!gt.empty()) {
    r.mean_before /= double(gt.size());
    r.mean_after /= double(gt.size());
  }
  return r;
}

/// Single list: before and after are the same predictions.
inline RefinementReport orientation_error(const std::vector<Box3D>& pred, const std::vector<Box3D>& gt) {
  return orientation_error(pred, pred, gt);
}

// ---------------------------------------------------------------------------
// Simulated scenes

struct VehicleScene {
  std::vector<std::string> ids;
  std::vector<Box3D> gt_boxes;
  std::vector<std::vector<Vec3>> clouds;  ///< world coordinates
  std::vector<Plane> planes;              ///< ground-truth symmetry plane, world coordinates
};

/// Vehicle clouds placed on the ground at random positions and headings,
/// with tight ground-truth boxes.
inline VehicleScene make_vehicle_scene(int count, int point_count, double noise_sigma, std::uint64_t seed) {
  VehicleScene scene;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(-30.0, 30.0), yaw(-std::numbers::pi, std::numbers::pi);
  const Mat3 q = box_to_network();
  for (int i = 0; i < count; ++i) {
    auto [cloud, gt] = gen_shape(ShapeRecipe{ShapeFamily::vehicle, point_count, noise_sigma, rng()});
    std::vector<Vec3> local;
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    for (const auto& p : cloud.points) {
      local.push_back(q.transpose() * p);
      lo = lo.cwiseMin(local.back());
      hi = hi.cwiseMax(local.back());
    }
    const Vec3 mid = (lo + hi) / 2.0;
    Box3D box;
    box.size = hi - lo;
    box.yaw = wrap_angle(yaw(rng));
    box.center = Vec3(pos(rng), pos(rng), box.size.z() / 2.0);
    std::vector<Vec3> world;
    for (const auto& p : local) world.push_back(box.to_world(p - mid));
    Plane in_box = transform_plane(gt.planes.front(), Rotation{q.transpose()}, -mid, 1.0);
    char id[32];
    std::snprintf(id, sizeof(id), "car_%04d", i);
    scene.ids.push_back(id);
    scene.gt_boxes.push_back(box);
    scene.clouds.push_back(std::move(world));
    scene.planes.push_back(box_to_world_plane(in_box, box).canonical());
  }
  return scene;
}

// ---------------------------------------------------------------------------
// CSV I/O

inline void write_boxes(const std::string& path, const std::vector<std::string>& ids, const std::vector<Box3D>& boxes,
                        const std::vector<std::string>& status = {}) {
  if (ids.size() != boxes.size() || (!status.empty() && status.size() != boxes.size())) {
    throw Error(ErrorCode::LengthMismatch, "ids, boxes and status differ in length");
  }
  std::vector<std::string> header{"id", "cx", "cy", "cz", "l", "w", "h", "yaw"};
  if (!status.empty()) header.push_back("status");
  CsvWriter w(path, header);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& b = boxes[i];
    std::vector<std::string> row{ids[i],
                                 format_double(b.center.x()),
                                 format_double(b.center.y()),
                                 format_double(b.center.z()),
                                 format_double(b.size.x()),
                                 format_double(b.size.y()),
                                 format_double(b.size.z()),
                                 format_double(b.yaw)};
    if (!status.empty()) row.push_back(status[i]);
    w.row(row);
  }
}

inline std::pair<std::vector<std::string>, std::vector<Box3D>> read_boxes(const std::string& path) {
  CsvTable t = read_csv(path);
  const char* names[] = {"id", "cx", "cy", "cz", "l", "w", "h", "yaw"};
  int col[8];
  for (int k = 0; k < 8; ++k) {
    col[k] = t.column(names[k]);
    if (col[k] < 0) throw Error(ErrorCode::ParseError, path + ": missing column " + names[k]);
  }
  std::vector<std::string> ids;
  std::vector<Box3D> boxes;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    double v[8];
    for (int k = 1; k < 8; ++k) {
      if (!parse_double(t.rows[r][std::size_t(col[k])], v[k])) {
        throw Error(ErrorCode::ParseError, path + ":" + std::to_string(r + 2) + ": bad value for " + names[k]);
      }
    }
    Box3D b{Vec3(v[1], v[2], v[3]), Vec3(v[4], v[5], v[6]), v[7]};
    b.validate();
    ids.push_back(t.rows[r][std::size_t(col[0])]);
    boxes.push_back(b);
  }
  return {ids, boxes};
}

inline void write_report(const std::string& path, const std::vector<std::string>& ids, const RefinementReport& r,
                         const std::vector<std::string>& status) {
  if (ids.size() != r.yaw_gt.size() || status.size() != ids.size()) {
    throw Error(ErrorCode::LengthMismatch, "report rows differ in length");
  }
  CsvWriter w(path, {"id", "yaw_before", "yaw_after", "yaw_gt", "error_before", "error_after", "status"});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    w.row({ids[i], format_double(r.yaw_before[i]), format_double(r.yaw_after[i]), format_double(r.yaw_gt[i]),
           format_double(r.error_before[i]), format_double(r.error_after[i]), status[i]});
  }
  w.row({"mean", "", "", "", format_double(r.mean_before), format_double(r.mean_after), ""});
}

}  // namespace symslice

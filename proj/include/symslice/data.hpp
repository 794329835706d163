#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "symslice/csv.hpp"
#include "symslice/error.hpp"
#include "symslice/geometry.hpp"
#include "symslice/metrics.hpp"

namespace symslice {

enum class ShapeFamily { mirrored_blob, box_union, cylinder_cluster, bi_symmetric, vehicle };

inline std::string to_string(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::mirrored_blob: return "mirrored_blob";
    case ShapeFamily::box_union: return "box_union";
    case ShapeFamily::cylinder_cluster: return "cylinder_cluster";
    case ShapeFamily::bi_symmetric: return "bi_symmetric";
    case ShapeFamily::vehicle: return "vehicle";
  }
  return "unknown";
}

inline ShapeFamily parse_family(const std::string& s) {
  for (auto f : {ShapeFamily::mirrored_blob, ShapeFamily::box_union, ShapeFamily::cylinder_cluster,
                 ShapeFamily::bi_symmetric, ShapeFamily::vehicle}) {
    if (to_string(f) == s) return f;
  }
  throw Error(ErrorCode::Config, "unknown shape family '" + s + "'");
}

struct ShapeRecipe {
  ShapeFamily family = ShapeFamily::mirrored_blob;
  int point_count = 2048;
  double noise_sigma = 0.005;
  std::uint64_t seed = 0;
};

namespace detail {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline Vec3 unit_vector(Rng& rng) {
  std::normal_distribution<double> g;
  Vec3 v;
  do v = Vec3(g(rng), g(rng), g(rng));
  while (v.norm() < 1e-9);
  return v.normalized();
}

/// A surface (or volume, for blobs) that can be sampled with a relative weight.
struct Primitive {
  enum Kind { blob, box, cylinder } kind = blob;
  Vec3 center = Vec3::Zero();
  Vec3 extent = Vec3::Ones();  // blob sigmas, box half sizes, or (radius, half length, -)
  Mat3 frame = Mat3::Identity();

  double weight() const {
    switch (kind) {
      case blob: return extent.prod();
      case box: return 8.0 * (extent.x() * extent.y() + extent.y() * extent.z() + extent.x() * extent.z());
      case cylinder: return 2.0 * std::numbers::pi * extent.x() * 2.0 * extent.y();
    }
    return 1.0;
  }

  Vec3 sample(Rng& rng) const {
    std::normal_distribution<double> g;
    Vec3 local;
    switch (kind) {
      case blob: local = Vec3(g(rng) * extent.x(), g(rng) * extent.y(), g(rng) * extent.z()); break;
      case box: {
        const Vec3& e = extent;
        double areas[3] = {e.y() * e.z(), e.x() * e.z(), e.x() * e.y()};
        double r = uniform(rng, 0.0, areas[0] + areas[1] + areas[2]);
        int axis = r < areas[0] ? 0 : (r < areas[0] + areas[1] ? 1 : 2);
        local = Vec3(uniform(rng, -e.x(), e.x()), uniform(rng, -e.y(), e.y()), uniform(rng, -e.z(), e.z()));
        local[axis] = uniform(rng, 0.0, 1.0) < 0.5 ? -e[axis] : e[axis];
        break;
      }
      case cylinder: {
        double a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        local = Vec3(extent.x() * std::cos(a), uniform(rng, -extent.y(), extent.y()), extent.x() * std::sin(a));
        break;
      }
    }
    return frame * local + center;
  }
};

inline std::vector<Vec3> sample_mixture(const std::vector<Primitive>& prims, int count, Rng& rng) {
  std::vector<double> w;
  for (const auto& p : prims) w.push_back(p.weight());
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  std::vector<Vec3> out;
  out.reserve(std::size_t(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out.push_back(prims[pick(rng)].sample(rng));
  return out;
}

inline Mat3 random_frame(Rng& rng) {
  return Eigen::AngleAxisd(uniform(rng, 0.0, 2.0 * std::numbers::pi), unit_vector(rng)).toRotationMatrix();
}

inline std::vector<Primitive> family_primitives(ShapeFamily family, Rng& rng) {
  std::vector<Primitive> prims;
  auto off_center = [&](double xlo, double xhi, double spread) {
    return Vec3(uniform(rng, xlo, xhi), uniform(rng, -spread, spread), uniform(rng, -spread, spread));
  };
  switch (family) {
    case ShapeFamily::mirrored_blob: {
      int k = uniform_int(rng, 3, 6);
      for (int i = 0; i < k; ++i) {
        Primitive p{Primitive::blob, off_center(0.04, 0.28, 0.28),
                    Vec3(uniform(rng, 0.03, 0.1), uniform(rng, 0.03, 0.12), uniform(rng, 0.03, 0.1)), random_frame(rng)};
        prims.push_back(p);
      }
      break;
    }
    case ShapeFamily::box_union: {
      int k = uniform_int(rng, 2, 4);
      for (int i = 0; i < k; ++i) {
        Primitive p{Primitive::box, off_center(0.0, 0.22, 0.22),
                    Vec3(uniform(rng, 0.04, 0.18), uniform(rng, 0.04, 0.2), uniform(rng, 0.04, 0.18)), random_frame(rng)};
        prims.push_back(p);
      }
      break;
    }
    case ShapeFamily::cylinder_cluster: {
      int k = uniform_int(rng, 2, 4);
      for (int i = 0; i < k; ++i) {
        Primitive p{Primitive::cylinder, off_center(0.04, 0.25, 0.22),
                    Vec3(uniform(rng, 0.03, 0.1), uniform(rng, 0.08, 0.25), 0.0), random_frame(rng)};
        prims.push_back(p);
      }
      break;
    }
    case ShapeFamily::bi_symmetric: {
      int k = uniform_int(rng, 2, 4);
      for (int i = 0; i < k; ++i) {
        Vec3 c(uniform(rng, 0.04, 0.25), uniform(rng, -0.25, 0.25), uniform(rng, 0.04, 0.25));
        bool is_box = uniform(rng, 0.0, 1.0) < 0.5;
        Primitive p{is_box ? Primitive::box : Primitive::blob, c,
                    Vec3(uniform(rng, 0.04, 0.14), uniform(rng, 0.04, 0.18), uniform(rng, 0.04, 0.14)),
                    random_frame(rng)};
        prims.push_back(p);
      }
      break;
    }
    case ShapeFamily::vehicle: {
      // Car-like body in metres: x along the length, y up, z across the width.
      double length = uniform(rng, 3.8, 5.0), width = uniform(rng, 1.6, 2.0);
      double body_h = uniform(rng, 0.6, 0.9), clearance = uniform(rng, 0.25, 0.35);
      prims.push_back({Primitive::box, Vec3(0.0, clearance + body_h / 2, 0.0),
                       Vec3(length / 2, body_h / 2, width / 2), Mat3::Identity()});
      double cabin_len = length * uniform(rng, 0.4, 0.6), cabin_h = uniform(rng, 0.4, 0.6);
      double cabin_x = uniform(rng, -0.2, -0.05) * length;
      prims.push_back({Primitive::box, Vec3(cabin_x, clearance + body_h + cabin_h / 2, 0.0),
                       Vec3(cabin_len / 2, cabin_h / 2, width * 0.42), Mat3::Identity()});
      double radius = uniform(rng, 0.3, 0.38);
      double axle = length * uniform(rng, 0.3, 0.36);
      Mat3 wheel_frame;  // cylinder axis (local y) along world z
      wheel_frame << 1, 0, 0, 0, 0, -1, 0, 1, 0;
      for (double sx : {-1.0, 1.0}) {
        prims.push_back({Primitive::cylinder, Vec3(sx * axle + (sx > 0 ? 0.1 : 0.0), radius, width / 2 - 0.12),
                         Vec3(radius, 0.11, 0.0), wheel_frame});
      }
      break;
    }
  }
  return prims;
}

}  // namespace detail

/// Generates a symmetric cloud in its construction frame. Half of the points
/// (a quarter for bi_symmetric) are sampled and folded onto one side of each
/// symmetry plane, then mirrored, so pairs are exact before noise is added.
/// Symmetry planes: x = 0 (plus z = 0 for bi_symmetric); vehicles use z = 0.
inline std::pair<Cloud, GroundTruth> gen_shape(const ShapeRecipe& recipe) {
  if (recipe.point_count < 4 || recipe.noise_sigma < 0.0) {
    throw Error(ErrorCode::Config, "recipe needs point_count >= 4 and noise_sigma >= 0");
  }
  detail::Rng rng(recipe.seed);
  auto prims = detail::family_primitives(recipe.family, rng);
  std::vector<int> fold_axes;
  switch (recipe.family) {
    case ShapeFamily::bi_symmetric: fold_axes = {0, 2}; break;
    case ShapeFamily::vehicle: fold_axes = {2}; break;
    default: fold_axes = {0}; break;
  }
  const int copies = 1 << fold_axes.size();
  auto base = detail::sample_mixture(prims, recipe.point_count / copies, rng);
  for (auto& p : base)
    for (int a : fold_axes) p[a] = std::abs(p[a]);

  std::vector<Vec3> pts = base;
  for (int a : fold_axes) {
    std::size_t n = pts.size();
    for (std::size_t i = 0; i < n; ++i) {
      Vec3 q = pts[i];
      q[a] = -q[a];
      pts.push_back(q);
    }
  }
  if (recipe.noise_sigma > 0.0) {
    std::normal_distribution<double> g(0.0, recipe.noise_sigma);
    for (auto& p : pts) p += Vec3(g(rng), g(rng), g(rng));
  }
  GroundTruth gt;
  for (int a : fold_axes) gt.planes.push_back(Plane{Vec3::Unit(a), 0.0}.canonical());
  gt.object_points = pts;
  Cloud cloud{std::move(pts), CloudKind::full, NormRecord{}};
  return {std::move(cloud), std::move(gt)};
}

/// Uniform rotation over SO(3) from a seeded unit quaternion.
inline Rotation random_rotation(std::uint64_t seed) {
  detail::Rng rng(seed);
  double u1 = detail::uniform(rng, 0.0, 1.0), u2 = detail::uniform(rng, 0.0, 1.0), u3 = detail::uniform(rng, 0.0, 1.0);
  const double tau = 2.0 * std::numbers::pi;
  Eigen::Quaterniond q(std::sqrt(u1) * std::cos(tau * u3), std::sqrt(1.0 - u1) * std::sin(tau * u2),
                       std::sqrt(1.0 - u1) * std::cos(tau * u2), std::sqrt(u1) * std::sin(tau * u3));
  q.normalize();
  return Rotation{q.toRotationMatrix()};
}

/// Rigidly moves a cloud and its ground truth by p -> r p + t.
inline void apply_transform(Cloud& c, GroundTruth& gt, const Rotation& r, const Vec3& t = Vec3::Zero()) {
  for (auto& p : c.points) p = r * p + t;
  for (auto& p : gt.object_points) p = r * p + t;
  for (auto& s : gt.planes) s = transform_plane(s, r, t, 1.0).canonical();
}

/// Expresses planes and object points in the cloud's normalized frame.
inline GroundTruth normalize_ground_truth(const GroundTruth& gt, const NormRecord& rec) {
  GroundTruth out;
  for (const auto& s : gt.planes) {
    out.planes.push_back(transform_plane(s, Rotation::identity(), -rec.center / rec.scale, 1.0 / rec.scale).canonical());
  }
  for (const auto& p : gt.object_points) out.object_points.push_back(rec.apply(p));
  return out;
}

// ---------------------------------------------------------------------------
// Partial views

/// Camera looking at the origin from `eye`, field of view fitted to the
/// projected cloud. A point is visible if it lies within `depth_tolerance`
/// of the nearest depth in its own pixel and within `hole_tolerance` of the
/// nearest depth over the surrounding (2 splat_radius + 1)^2 pixels; the
/// second test stops far surfaces from showing through gaps between sparse
/// front points.
struct Viewpoint {
  Vec3 eye = Vec3(0.0, 0.0, 1.0);
  int image_size = 64;
  double depth_tolerance = 0.02;
  double hole_tolerance = 0.1;
  int splat_radius = 1;
};

/// Uniform direction on the sphere at twice the cloud radius.
inline Viewpoint random_viewpoint(std::uint64_t seed, double cloud_radius, int image_size = 64) {
  detail::Rng rng(seed);
  Viewpoint v;
  v.eye = detail::unit_vector(rng) * (2.0 * cloud_radius);
  v.image_size = image_size;
  return v;
}

inline double cloud_radius(const Cloud& c) {
  double r = 0.0;
  for (const auto& p : c.points) r = std::max(r, p.norm());
  return r;
}

/// Indices of the points visible from `v`, ascending.
inline std::vector<std::size_t> visible_indices(const std::vector<Vec3>& points, const Viewpoint& v) {
  if (v.image_size < 16) throw Error(ErrorCode::Config, "viewpoint image_size must be at least 16");
  const double dist = v.eye.norm();
  if (!(dist > 0.0)) throw Error(ErrorCode::Config, "viewpoint eye must not sit at the origin");
  const Vec3 fwd = -v.eye / dist;
  Vec3 hint = std::abs(fwd.y()) < 0.9 ? Vec3::UnitY() : Vec3::UnitX();
  const Vec3 right = fwd.cross(hint).normalized();
  const Vec3 up = right.cross(fwd);

  struct Proj {
    double depth, x, y;
  };
  std::vector<Proj> proj(points.size());
  double half = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < points.size(); ++i) {
    Vec3 rel = points[i] - v.eye;
    double z = rel.dot(fwd);
    proj[i] = {z, 0.0, 0.0};
    if (z <= 1e-9) continue;
    any = true;
    proj[i].x = rel.dot(right) / z;
    proj[i].y = rel.dot(up) / z;
    half = std::max({half, std::abs(proj[i].x), std::abs(proj[i].y)});
  }
  if (!any) throw Error(ErrorCode::EmptyResult, "no point lies in front of the viewpoint");
  half = half > 0.0 ? half * (1.0 + 1e-9) : 1.0;

  const int s = v.image_size;
  auto pixel = [&](const Proj& p) {
    int px = std::clamp(int(std::floor((p.x / half + 1.0) * 0.5 * s)), 0, s - 1);
    int py = std::clamp(int(std::floor((p.y / half + 1.0) * 0.5 * s)), 0, s - 1);
    return std::pair{px, py};
  };
  const std::size_t pixels = std::size_t(s) * s;
  std::vector<double> zbuf(pixels, std::numeric_limits<double>::infinity());
  for (const auto& p : proj) {
    if (p.depth <= 1e-9) continue;
    auto [px, py] = pixel(p);
    double& z = zbuf[std::size_t(py) * s + px];
    z = std::min(z, p.depth);
  }
  std::vector<double> near(pixels, std::numeric_limits<double>::infinity());
  for (int py = 0; py < s; ++py)
    for (int px = 0; px < s; ++px) {
      double& z = near[std::size_t(py) * s + px];
      for (int dy = -v.splat_radius; dy <= v.splat_radius; ++dy)
        for (int dx = -v.splat_radius; dx <= v.splat_radius; ++dx) {
          int qx = px + dx, qy = py + dy;
          if (qx < 0 || qy < 0 || qx >= s || qy >= s) continue;
          z = std::min(z, zbuf[std::size_t(qy) * s + qx]);
        }
    }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < proj.size(); ++i) {
    if (proj[i].depth <= 1e-9) continue;
    auto [px, py] = pixel(proj[i]);
    const std::size_t k = std::size_t(py) * s + px;
    if (proj[i].depth <= zbuf[k] + v.depth_tolerance && proj[i].depth <= near[k] + v.hole_tolerance) keep.push_back(i);
  }
  return keep;
}

/// Subset of a normalized cloud visible from `v`.
inline Cloud partial_view(const Cloud& c, const Viewpoint& v) {
  Cloud out;
  out.kind = CloudKind::partial;
  out.norm = c.norm;
  for (std::size_t i : visible_indices(c.points, v)) out.points.push_back(c.points[i]);
  if (out.points.empty()) throw Error(ErrorCode::EmptyResult, "partial view kept no points");
  return out;
}

// ---------------------------------------------------------------------------
// Cloud files

struct LoadOptions {
  int surface_samples = 0;  ///< OBJ faces: area-weighted samples instead of vertices when > 0
  std::uint64_t seed = 0;
};

namespace detail {

inline std::string lower_ext(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  for (auto& ch : ext) ch = char(std::tolower(static_cast<unsigned char>(ch)));
  return ext;
}

[[noreturn]] inline void parse_fail(const std::string& path, std::size_t line, const std::string& what) {
  throw Error(ErrorCode::ParseError, path + ":" + std::to_string(line) + ": " + what);
}

inline std::vector<Vec3> read_xyz(const std::string& path, std::istream& is) {
  std::vector<Vec3> pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tok;
    std::vector<double> vals;
    while (ss >> tok) {
      if (tok[0] == '#') break;
      double v;
      if (!parse_double(tok, v)) parse_fail(path, lineno, "bad number '" + tok + "'");
      vals.push_back(v);
    }
    if (vals.empty()) continue;
    if (vals.size() < 3) parse_fail(path, lineno, "expected at least 3 coordinates");
    pts.emplace_back(vals[0], vals[1], vals[2]);
  }
  return pts;
}

inline std::vector<Vec3> read_obj(const std::string& path, std::istream& is, const LoadOptions& opt) {
  std::vector<Vec3> verts;
  std::vector<std::array<std::size_t, 3>> tris;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      double c[3];
      for (double& x : c) {
        std::string tok;
        if (!(ss >> tok) || !parse_double(tok, x)) parse_fail(path, lineno, "malformed vertex");
      }
      verts.emplace_back(c[0], c[1], c[2]);
    } else if (tag == "f") {
      std::vector<std::size_t> idx;
      std::string tok;
      while (ss >> tok) {
        long v = 0;
        auto slash = tok.find('/');
        std::string head = tok.substr(0, slash);
        auto res = std::from_chars(head.data(), head.data() + head.size(), v);
        if (res.ec != std::errc() || v == 0) parse_fail(path, lineno, "bad face index '" + tok + "'");
        long resolved = v > 0 ? v - 1 : long(verts.size()) + v;
        if (resolved < 0 || resolved >= long(verts.size())) parse_fail(path, lineno, "face index out of range");
        idx.push_back(std::size_t(resolved));
      }
      if (idx.size() < 3) parse_fail(path, lineno, "face needs at least 3 vertices");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) tris.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  if (opt.surface_samples <= 0 || tris.empty()) return verts;

  std::vector<double> areas;
  for (const auto& t : tris) areas.push_back(0.5 * (verts[t[1]] - verts[t[0]]).cross(verts[t[2]] - verts[t[0]]).norm());
  if (std::all_of(areas.begin(), areas.end(), [](double a) { return a <= 0.0; })) {
    throw Error(ErrorCode::ParseError, path + ": all faces are degenerate");
  }
  Rng rng(opt.seed);
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  std::vector<Vec3> out;
  for (int i = 0; i < opt.surface_samples; ++i) {
    const auto& t = tris[pick(rng)];
    double u = uniform(rng, 0.0, 1.0), w = uniform(rng, 0.0, 1.0);
    if (u + w > 1.0) {
      u = 1.0 - u;
      w = 1.0 - w;
    }
    out.push_back(verts[t[0]] + u * (verts[t[1]] - verts[t[0]]) + w * (verts[t[2]] - verts[t[0]]));
  }
  return out;
}

inline std::size_t ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  return 0;
}

inline double ply_read_binary(const char* p, const std::string& t) {
  auto get = [&](auto v) {
    std::memcpy(&v, p, sizeof(v));
    return double(v);
  };
  if (t == "char" || t == "int8") return get(std::int8_t{});
  if (t == "uchar" || t == "uint8") return get(std::uint8_t{});
  if (t == "short" || t == "int16") return get(std::int16_t{});
  if (t == "ushort" || t == "uint16") return get(std::uint16_t{});
  if (t == "int" || t == "int32") return get(std::int32_t{});
  if (t == "uint" || t == "uint32") return get(std::uint32_t{});
  if (t == "float" || t == "float32") return get(float{});
  return get(double{});
}

inline std::vector<Vec3> read_ply(const std::string& path, std::istream& is) {
  struct Property {
    std::string name, type, count_type;  // count_type non-empty for list properties
  };
  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> props;
  };
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(is, line) || line.substr(0, 3) != "ply") parse_fail(path, 1, "missing 'ply' magic");
  std::string format;
  std::vector<Element> elements;
  for (;;) {
    if (!std::getline(is, line)) parse_fail(path, lineno, "header ended without end_header");
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "end_header") break;
    if (key == "comment" || key == "obj_info" || key.empty()) continue;
    if (key == "format") {
      std::string version;
      ss >> format >> version;
      if (format != "ascii" && format != "binary_little_endian") {
        if (format == "binary_big_endian") throw Error(ErrorCode::UnsupportedFormat, path + ": big-endian PLY");
        parse_fail(path, lineno, "unknown PLY format '" + format + "'");
      }
    } else if (key == "element") {
      Element e;
      if (!(ss >> e.name >> e.count)) parse_fail(path, lineno, "malformed element line '" + line + "'");
      elements.push_back(e);
    } else if (key == "property") {
      if (elements.empty()) parse_fail(path, lineno, "property before element");
      Property p;
      std::string type;
      ss >> type;
      if (type == "list") {
        ss >> p.count_type >> p.type >> p.name;
        if (!ply_type_size(p.count_type) || !ply_type_size(p.type)) parse_fail(path, lineno, "bad list property type");
      } else {
        p.type = type;
        ss >> p.name;
        if (!ply_type_size(p.type)) parse_fail(path, lineno, "unknown property type '" + type + "'");
      }
      if (p.name.empty()) parse_fail(path, lineno, "property without a name");
      elements.back().props.push_back(p);
    } else {
      parse_fail(path, lineno, "unexpected header line '" + line + "'");
    }
  }
  if (format.empty()) parse_fail(path, lineno, "missing format line");

  std::vector<Vec3> pts;
  for (const auto& e : elements) {
    int ix = -1, iy = -1, iz = -1;
    for (std::size_t k = 0; k < e.props.size(); ++k) {
      if (e.props[k].name == "x") ix = int(k);
      if (e.props[k].name == "y") iy = int(k);
      if (e.props[k].name == "z") iz = int(k);
    }
    const bool is_vertex = e.name == "vertex";
    if (is_vertex && (ix < 0 || iy < 0 || iz < 0)) parse_fail(path, lineno, "vertex element lacks x/y/z");
    for (std::size_t r = 0; r < e.count; ++r) {
      std::vector<double> vals(e.props.size(), 0.0);
      if (format == "ascii") {
        if (!std::getline(is, line)) parse_fail(path, lineno, "unexpected end of data");
        ++lineno;
        std::istringstream ss(line);
        for (std::size_t k = 0; k < e.props.size(); ++k) {
          std::string tok;
          if (!e.props[k].count_type.empty()) {
            double n;
            if (!(ss >> tok) || !parse_double(tok, n)) parse_fail(path, lineno, "bad list count");
            for (int j = 0; j < int(n); ++j) ss >> tok;
            continue;
          }
          if (!(ss >> tok) || !parse_double(tok, vals[k])) parse_fail(path, lineno, "bad value in " + e.name);
        }
      } else {
        for (std::size_t k = 0; k < e.props.size(); ++k) {
          const auto& p = e.props[k];
          char buf[8];
          if (!p.count_type.empty()) {
            if (!is.read(buf, std::streamsize(ply_type_size(p.count_type)))) parse_fail(path, lineno, "truncated binary data");
            auto n = std::size_t(ply_read_binary(buf, p.count_type));
            is.ignore(std::streamsize(n * ply_type_size(p.type)));
            continue;
          }
          if (!is.read(buf, std::streamsize(ply_type_size(p.type)))) parse_fail(path, lineno, "truncated binary data");
          vals[k] = ply_read_binary(buf, p.type);
        }
      }
      if (is_vertex) pts.emplace_back(vals[std::size_t(ix)], vals[std::size_t(iy)], vals[std::size_t(iz)]);
    }
    if (is_vertex) break;
  }
  return pts;
}

}  // namespace detail

/// Reads XYZ, OBJ or PLY (ascii / binary little-endian) by extension.
inline Cloud load_cloud(const std::string& path, const LoadOptions& opt = {}) {
  const std::string ext = detail::lower_ext(path);
  if (ext != ".xyz" && ext != ".obj" && ext != ".ply") {
    throw Error(ErrorCode::UnsupportedFormat, path + ": expected .xyz, .obj or .ply");
  }
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IO, "cannot open " + path);
  Cloud c;
  if (ext == ".xyz") c.points = detail::read_xyz(path, is);
  else if (ext == ".obj") c.points = detail::read_obj(path, is, opt);
  else c.points = detail::read_ply(path, is);
  if (c.points.empty()) throw Error(ErrorCode::EmptyCloud, path + " contains no points");
  return c;
}

inline void save_cloud_xyz(const std::string& path, const std::vector<Vec3>& points) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IO, "cannot open " + path + " for writing");
  for (const auto& p : points) {
    os << format_double(p.x()) << ' ' << format_double(p.y()) << ' ' << format_double(p.z()) << '\n';
  }
  if (!os) throw Error(ErrorCode::IO, "failed writing " + path);
}

/// ASCII PLY with the given vertices and polygon faces.
inline void save_ply(const std::string& path, const std::vector<Vec3>& vertices,
                     const std::vector<std::vector<std::size_t>>& faces = {}) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IO, "cannot open " + path + " for writing");
  os << "ply\nformat ascii 1.0\nelement vertex " << vertices.size()
     << "\nproperty double x\nproperty double y\nproperty double z\n";
  if (!faces.empty()) os << "element face " << faces.size() << "\nproperty list uchar int vertex_indices\n";
  os << "end_header\n";
  for (const auto& p : vertices) {
    os << format_double(p.x()) << ' ' << format_double(p.y()) << ' ' << format_double(p.z()) << '\n';
  }
  for (const auto& f : faces) {
    os << f.size();
    for (auto i : f) os << ' ' << i;
    os << '\n';
  }
  if (!os) throw Error(ErrorCode::IO, "failed writing " + path);
}

// ---------------------------------------------------------------------------
// Dataset manifests

struct ManifestEntry {
  std::string id;
  ShapeFamily family = ShapeFamily::mirrored_blob;
  std::uint64_t seed = 0;
  std::string split;
};

/// Round-robin families, seeds drawn from `seed`.
inline std::vector<ManifestEntry> make_manifest(int n_train, int n_val, int n_test,
                                                const std::vector<ShapeFamily>& families, std::uint64_t seed) {
  if (families.empty()) throw Error(ErrorCode::Config, "manifest needs at least one shape family");
  std::mt19937_64 rng(seed);
  std::vector<ManifestEntry> out;
  int counter = 0;
  auto add = [&](int count, const char* split) {
    for (int i = 0; i < count; ++i, ++counter) {
      char id[32];
      std::snprintf(id, sizeof(id), "%s_%05d", split, i);
      out.push_back({id, families[std::size_t(counter) % families.size()], rng(), split});
    }
  };
  add(n_train, "train");
  add(n_val, "val");
  add(n_test, "test");
  return out;
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  CsvWriter w(path, {"id", "family", "seed", "split"});
  for (const auto& e : entries) w.row({e.id, to_string(e.family), std::to_string(e.seed), e.split});
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  CsvTable t = read_csv(path);
  int ci = t.column("id"), cf = t.column("family"), cs = t.column("seed"), cp = t.column("split");
  if (ci < 0 || cf < 0 || cs < 0 || cp < 0) throw Error(ErrorCode::ParseError, path + ": manifest needs id,family,seed,split");
  std::vector<ManifestEntry> out;
  for (const auto& r : t.rows) {
    ManifestEntry e;
    e.id = r[std::size_t(ci)];
    e.family = parse_family(r[std::size_t(cf)]);
    auto res = std::from_chars(r[std::size_t(cs)].data(), r[std::size_t(cs)].data() + r[std::size_t(cs)].size(), e.seed);
    if (res.ec != std::errc()) throw Error(ErrorCode::ParseError, path + ": bad seed for " + e.id);
    e.split = r[std::size_t(cp)];
    out.push_back(e);
  }
  return out;
}

}  // namespace symslice

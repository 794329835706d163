#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "symslice/error.hpp"
#include "symslice/geometry.hpp"

// Axis convention used throughout: grid axis 0 is height (H) and maps to
// world y, axis 1 is depth (D) and maps to world z, axis 2 is width (W) and
// maps to world x.

namespace symslice {

struct GridSpec {
  int H = 32;
  int D = 32;
  int W = 32;
  int N = 8;  ///< number of slices
  int K = 2;  ///< context channels on each side of a slice anchor

  void validate() const {
    if (H <= 0 || D <= 0 || W <= 0 || N <= 0 || K < 0) {
      throw Error(ErrorCode::InvalidSpec, "grid dimensions and slice count must be positive");
    }
    if (N > H) throw Error(ErrorCode::InvalidSpec, "N exceeds H");
    if (2 * K + 1 > H) throw Error(ErrorCode::InvalidSpec, "2K+1 exceeds H");
    if (H % 4 != 0 || D % 4 != 0 || W % 4 != 0) {
      throw Error(ErrorCode::InvalidSpec, "H, D and W must be divisible by 4");
    }
  }

  int slice_channels() const { return 2 * K + 1; }
  std::size_t cells() const { return std::size_t(H) * D * W; }

  bool operator==(const GridSpec&) const = default;
};

/// Binary H x D x W occupancy, row-major (h, d, w).
struct OccupancyGrid {
  GridSpec spec;
  std::vector<std::uint8_t> values;

  std::uint8_t at(int h, int d, int w) const {
    return values[(std::size_t(h) * spec.D + d) * spec.W + w];
  }
  std::size_t occupied() const {
    std::size_t count = 0;
    for (auto v : values) count += v;
    return count;
  }
};

/// (2K+1) x D x W slab centered on an anchor channel; rows outside the grid are zero.
struct Slice {
  int anchor = 0;
  int channels = 1;
  int D = 0;
  int W = 0;
  std::vector<std::uint8_t> values;

  std::uint8_t at(int c, int d, int w) const {
    return values[(std::size_t(c) * D + d) * W + w];
  }
};

/// Centers the axis-aligned bounding box on the origin and scales the
/// largest extent to 0.95, so every coordinate lands in [-0.475, 0.475].
inline Cloud normalize_cloud(const Cloud& c) {
  if (c.points.empty()) throw Error(ErrorCode::EmptyCloud, "cannot normalize an empty cloud");
  Vec3 lo = c.points.front(), hi = c.points.front();
  for (const auto& p : c.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  double extent = (hi - lo).maxCoeff();
  if (!(extent > 0.0)) throw Error(ErrorCode::ZeroExtent, "all points coincide");
  NormRecord rec{(lo + hi) / 2.0, extent / 0.95};
  Cloud out;
  out.kind = c.kind;
  out.norm = rec;
  out.points.reserve(c.points.size());
  for (const auto& p : c.points) out.points.push_back(rec.apply(p));
  return out;
}

inline std::vector<Vec3> denormalize_points(const Cloud& c) {
  std::vector<Vec3> out;
  out.reserve(c.points.size());
  for (const auto& p : c.points) out.push_back(c.norm.invert(p));
  return out;
}

namespace detail {
inline int cell_index(double coord, int size) {
  int i = static_cast<int>(std::floor((coord + 0.5) * size));
  return std::clamp(i, 0, size - 1);
}
}  // namespace detail

/// Grid cell (h, d, w) containing a normalized point.
inline std::array<int, 3> voxel_of(const Vec3& p, const GridSpec& spec) {
  return {detail::cell_index(p.y(), spec.H), detail::cell_index(p.z(), spec.D),
          detail::cell_index(p.x(), spec.W)};
}

inline OccupancyGrid voxelize(const Cloud& c, const GridSpec& spec) {
  spec.validate();
  OccupancyGrid g{spec, std::vector<std::uint8_t>(spec.cells(), 0)};
  constexpr double slack = 1e-9;
  for (const auto& p : c.points) {
    if ((p.array().abs() > 0.5 + slack).any()) {
      throw Error(ErrorCode::OutOfBox, "point outside the unit box");
    }
    auto [h, d, w] = voxel_of(p, spec);
    g.values[(std::size_t(h) * spec.D + d) * spec.W + w] = 1;
  }
  return g;
}

/// Evenly spaced anchor channels round((i + 0.5) H / N), ascending.
inline std::vector<int> slice_anchors(const GridSpec& spec) {
  std::vector<int> anchors(spec.N);
  for (int i = 0; i < spec.N; ++i) {
    anchors[i] = static_cast<int>(std::lround((i + 0.5) * spec.H / spec.N));
    anchors[i] = std::clamp(anchors[i], 0, spec.H - 1);
  }
  return anchors;
}

/// Slices ordered bottom to top.
inline std::vector<Slice> make_slices(const OccupancyGrid& g) {
  const auto& spec = g.spec;
  spec.validate();
  const std::size_t plane = std::size_t(spec.D) * spec.W;
  std::vector<Slice> slices;
  for (int anchor : slice_anchors(spec)) {
    Slice s{anchor, spec.slice_channels(), spec.D, spec.W,
            std::vector<std::uint8_t>(plane * spec.slice_channels(), 0)};
    for (int c = 0; c < s.channels; ++c) {
      int h = anchor - spec.K + c;
      if (h < 0 || h >= spec.H) continue;
      std::copy_n(g.values.begin() + h * plane, plane, s.values.begin() + c * plane);
    }
    slices.push_back(std::move(s));
  }
  return slices;
}

/// Normalized-frame centers of the stride x stride voxel blocks on an
/// anchor channel's mid-height, row-major over (depth block, width block).
inline std::vector<Vec3> anchor_world_coords(const GridSpec& spec, int anchor, int stride) {
  if (stride <= 0 || spec.D % stride != 0 || spec.W % stride != 0) {
    throw Error(ErrorCode::InvalidSpec, "stride must divide D and W");
  }
  const int rows = spec.D / stride, cols = spec.W / stride;
  const double y = (anchor + 0.5) / spec.H - 0.5;
  std::vector<Vec3> out;
  out.reserve(std::size_t(rows) * cols);
  for (int u = 0; u < rows; ++u) {
    double z = (u * stride + stride / 2.0) / spec.D - 0.5;
    for (int v = 0; v < cols; ++v) {
      double x = (v * stride + stride / 2.0) / spec.W - 0.5;
      out.emplace_back(x, y, z);
    }
  }
  return out;
}

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline bool get_u32(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
      std::uint32_t(b[3]) << 24;
  return true;
}
}  // namespace detail

/// Debug dump: "SYMG", u32 H, D, W (little-endian), then H*D*W bytes.
inline void write_grid_dump(const OccupancyGrid& g, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IO, "cannot open " + path + " for writing");
  os.write("SYMG", 4);
  detail::put_u32(os, std::uint32_t(g.spec.H));
  detail::put_u32(os, std::uint32_t(g.spec.D));
  detail::put_u32(os, std::uint32_t(g.spec.W));
  os.write(reinterpret_cast<const char*>(g.values.data()), std::streamsize(g.values.size()));
  if (!os) throw Error(ErrorCode::IO, "failed writing " + path);
}

/// Reads a dump back; N and K are not stored and come from `slicing`.
inline OccupancyGrid read_grid_dump(const std::string& path, GridSpec slicing = {}) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IO, "cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "SYMG") {
    throw Error(ErrorCode::BadMagic, path + " is not a grid dump");
  }
  std::uint32_t h = 0, d = 0, w = 0;
  if (!detail::get_u32(is, h) || !detail::get_u32(is, d) || !detail::get_u32(is, w)) {
    throw Error(ErrorCode::IO, "truncated grid header in " + path);
  }
  OccupancyGrid g;
  g.spec = slicing;
  g.spec.H = int(h);
  g.spec.D = int(d);
  g.spec.W = int(w);
  g.values.resize(g.spec.cells());
  if (!is.read(reinterpret_cast<char*>(g.values.data()), std::streamsize(g.values.size()))) {
    throw Error(ErrorCode::IO, "truncated grid payload in " + path);
  }
  return g;
}

}  // namespace symslice

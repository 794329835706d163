#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "symslice/geometry.hpp"
#include "symslice/tensor.hpp"

namespace symslice {

/// Every valid symmetry plane of an object plus the point set O that
/// symmetry distances are measured against.
struct GroundTruth {
  std::vector<Plane> planes;
  std::vector<Vec3> object_points;
};

/// Static 3D k-d tree; nearest-neighbor ties resolve to the smallest index.
class KdIndex {
 public:
  explicit KdIndex(std::vector<Vec3> points) : points_(std::move(points)) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (!points_.empty()) build(0, order_.size());
  }

  std::size_t size() const { return points_.size(); }
  const Vec3& point(std::size_t i) const { return points_[i]; }

  /// Index of the nearest point to q.
  std::size_t nearest(const Vec3& q) const {
    Best best;
    if (!points_.empty()) search(0, order_.size(), q, best);
    return best.index;
  }

 private:
  struct Best {
    double dist2 = std::numeric_limits<double>::infinity();
    std::size_t index = std::numeric_limits<std::size_t>::max();
    void offer(double d2, std::size_t i) {
      if (d2 < dist2 || (d2 == dist2 && i < index)) {
        dist2 = d2;
        index = i;
      }
    }
  };

  // The subtree over order_[lo, hi) stores its split point at mid = (lo+hi)/2.
  void build(std::size_t lo, std::size_t hi) {
    if (hi - lo <= 1) {
      if (hi > lo) axes_[lo] = 0;
      return;
    }
    Vec3 mn = points_[order_[lo]], mx = mn;
    for (std::size_t i = lo; i < hi; ++i) {
      mn = mn.cwiseMin(points_[order_[i]]);
      mx = mx.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (mx - mn).maxCoeff(&axis);
    std::size_t mid = (lo + hi) / 2;
    std::nth_element(order_.begin() + std::ptrdiff_t(lo), order_.begin() + std::ptrdiff_t(mid),
                     order_.begin() + std::ptrdiff_t(hi), [&](std::size_t a, std::size_t b) {
                       double va = points_[a][axis], vb = points_[b][axis];
                       return va < vb || (va == vb && a < b);
                     });
    axes_[mid] = axis;
    build(lo, mid);
    build(mid + 1, hi);
  }

  void search(std::size_t lo, std::size_t hi, const Vec3& q, Best& best) const {
    if (lo >= hi) return;
    std::size_t mid = (lo + hi) / 2;
    std::size_t idx = order_[mid];
    best.offer((points_[idx] - q).squaredNorm(), idx);
    if (hi - lo == 1) return;
    int axis = axes_[mid];
    double delta = q[axis] - points_[idx][axis];
    bool left_first = delta <= 0.0;
    if (left_first) search(lo, mid, q, best);
    else search(mid + 1, hi, q, best);
    // <= keeps equal-distance candidates on the far side reachable for tie-breaking.
    if (delta * delta <= best.dist2) {
      if (left_first) search(mid + 1, hi, q, best);
      else search(lo, mid, q, best);
    }
  }

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<int> axes_ = std::vector<int>(points_.size(), 0);
};

/// Mean absolute difference between predicted and target offsets.
inline Tensor offsets_loss(const Tensor& pred, const Tensor& target) { return l1_mean(pred, target); }

/// (n, d) / ||(n, d)|| view of homogeneous solver output beta = (a, b, c, e).
inline Vec4 beta_to_unit4(const Vec4& beta) {
  Vec4 v(beta[0], beta[1], beta[2], -beta[3]);
  return v / v.norm();
}

/// Index of the ground-truth plane with the smallest GTE against `pred4`.
inline std::size_t closest_plane(const Vec4& pred4, const GroundTruth& gt) {
  std::size_t best = 0;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < gt.planes.size(); ++i) {
    Vec4 g = gt.planes[i].unit4();
    double e = std::min((pred4 - g).squaredNorm(), (pred4 + g).squaredNorm());
    if (e < best_err) {
      best_err = e;
      best = i;
    }
  }
  return best;
}

/// Sum of squared differences between unit (n, d) 4-vectors, minimized
/// over the ground-truth planes and over the sign of the prediction.
inline double gte(const Plane& pred, const GroundTruth& gt) {
  if (!(pred.n.norm() > 1e-6)) throw Error(ErrorCode::Degenerate, "predicted plane has no normal");
  if (gt.planes.empty()) throw Error(ErrorCode::Degenerate, "ground truth has no planes");
  Vec4 p = pred.unit4();
  double best = std::numeric_limits<double>::infinity();
  for (const auto& g : gt.planes) {
    Vec4 q = g.unit4();
    best = std::min({best, (p - q).squaredNorm(), (p + q).squaredNorm()});
  }
  return best;
}

/// GTE against one fixed plane.
inline double gte_single(const Plane& pred, const Plane& gt_plane) {
  return gte(pred, GroundTruth{{gt_plane}, {}});
}

/// Differentiable GTE on the solver output beta [4]; the closest plane and
/// sign are selected on the forward values.
inline Tensor gte_loss(const Tensor& beta, const GroundTruth& gt) {
  if (beta.shape() != Shape{4}) throw Error(ErrorCode::ShapeMismatch, "gte_loss expects beta [4]");
  Vec4 b(beta[0], beta[1], beta[2], beta[3]);
  if (!(b.head<3>().norm() > 1e-6)) throw Error(ErrorCode::Degenerate, "predicted plane has no normal");
  // beta has unit norm, so (n, d)/||(n, d)|| is beta with the last entry negated.
  Tensor pred4 = mul(beta, Tensor(Shape{4}, std::vector<double>{1.0, 1.0, 1.0, -1.0}));
  Vec4 p = beta_to_unit4(b);
  Vec4 target = gt.planes[closest_plane(p, gt)].unit4();
  if ((p + target).squaredNorm() < (p - target).squaredNorm()) target = -target;
  return sum(square(sub(pred4, Tensor(Shape{4}, std::vector<double>(target.data(), target.data() + 4)))));
}

/// Mean squared distance from reflected samples of O to their nearest
/// neighbor in O. Draws `samples` indices without replacement when
/// |O| >= samples, with replacement otherwise.
inline double sde(const Plane& pred, const GroundTruth& gt, const KdIndex& index, std::size_t samples = 1000,
                  std::uint64_t seed = 0) {
  const auto& pts = gt.object_points;
  if (pts.empty()) throw Error(ErrorCode::EmptyCloud, "SDE needs a non-empty object point set");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> picks;
  if (pts.size() >= samples) {
    std::vector<std::size_t> all(pts.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (std::size_t i = 0; i < samples; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, all.size() - 1);
      std::swap(all[i], all[pick(rng)]);
    }
    picks.assign(all.begin(), all.begin() + std::ptrdiff_t(samples));
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
    for (std::size_t i = 0; i < samples; ++i) picks.push_back(pick(rng));
  }
  double total = 0.0;
  for (std::size_t i : picks) {
    Vec3 r = reflect_point(pts[i], pred);
    total += (r - index.point(index.nearest(r))).squaredNorm();
  }
  return total / double(picks.size());
}

inline double sde(const Plane& pred, const GroundTruth& gt, std::size_t samples = 1000, std::uint64_t seed = 0) {
  KdIndex index(gt.object_points);
  return sde(pred, gt, index, samples, seed);
}

/// Smallest angle in degrees between the predicted normal and any
/// ground-truth normal, in [0, 90].
inline double angular_error(const Plane& pred, const GroundTruth& gt) {
  double best = 90.0;
  for (const auto& g : gt.planes) best = std::min(best, normal_angle_deg(pred.n, g.n));
  return best;
}

}  // namespace symslice

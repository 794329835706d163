#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "symslice/checkpoint.hpp"
#include "symslice/geometry.hpp"
#include "symslice/grid.hpp"
#include "symslice/tensor.hpp"

namespace symslice {

/// Architecture hyperparameters. The encoders are four 3x3 conv layers with
/// GN+ReLU whose 2nd and 4th layers use stride 2, giving features at 1/4 of
/// the grid's depth/width resolution.
struct ModelConfig {
  GridSpec grid;
  std::vector<int> enc_channels{16, 16, 16, 16};
  int gru_layers = 3;
  int gru_hidden = 32;
  int gru_kernel = 3;
  std::vector<int> decoder_channels{32, 32, 16, 16, 3};
  int gn_groups = 4;
  bool mask_empty_pixels = false;
  std::uint64_t seed = 0;

  void validate() const {
    grid.validate();
    if (enc_channels.size() != 4) throw Error(ErrorCode::InvalidSpec, "encoder needs exactly 4 conv layers");
    if (decoder_channels.size() != 5) throw Error(ErrorCode::InvalidSpec, "decoder needs exactly 5 conv layers");
    if (decoder_channels.back() != 3) throw Error(ErrorCode::InvalidSpec, "decoder must end in 3 offset channels");
    if (gru_layers < 1 || gru_hidden < 1) throw Error(ErrorCode::InvalidSpec, "need at least one GRU layer");
    if (gru_kernel % 2 == 0 || gru_kernel < 1) throw Error(ErrorCode::InvalidSpec, "GRU kernel must be odd");
    if (gn_groups < 1) throw Error(ErrorCode::InvalidSpec, "gn_groups must be positive");
    for (int c : enc_channels)
      if (c < 1) throw Error(ErrorCode::InvalidSpec, "encoder widths must be positive");
    for (int c : decoder_channels)
      if (c < 1) throw Error(ErrorCode::InvalidSpec, "decoder widths must be positive");
  }

  int feature_channels() const { return enc_channels.back(); }
  int rows() const { return grid.D / 4; }
  int cols() const { return grid.W / 4; }
  /// Number of plane-fit points, N (D/4) (W/4).
  int point_count() const { return grid.N * rows() * cols(); }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"H", c.grid.H},
                     {"D", c.grid.D},
                     {"W", c.grid.W},
                     {"N", c.grid.N},
                     {"K", c.grid.K},
                     {"enc_channels", c.enc_channels},
                     {"gru_layers", c.gru_layers},
                     {"gru_hidden", c.gru_hidden},
                     {"gru_kernel", c.gru_kernel},
                     {"decoder_channels", c.decoder_channels},
                     {"gn_groups", c.gn_groups},
                     {"mask_empty_pixels", c.mask_empty_pixels},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.grid.H = j.at("H");
  c.grid.D = j.at("D");
  c.grid.W = j.at("W");
  c.grid.N = j.at("N");
  c.grid.K = j.at("K");
  c.enc_channels = j.at("enc_channels").get<std::vector<int>>();
  c.gru_layers = j.at("gru_layers");
  c.gru_hidden = j.at("gru_hidden");
  c.gru_kernel = j.at("gru_kernel");
  c.decoder_channels = j.at("decoder_channels").get<std::vector<int>>();
  c.gn_groups = j.at("gn_groups");
  c.mask_empty_pixels = j.at("mask_empty_pixels");
  c.seed = j.at("seed");
}

/// Named parameter tensors; iteration order is the sorted name order.
class ModelParams {
 public:
  std::map<std::string, Tensor> tensors;

  const Tensor& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error(ErrorCode::ShapeMismatch, "missing parameter " + name);
    return it->second;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors) n += t.size();
    return n;
  }

  /// Deep copy with independent gradient buffers.
  ModelParams clone() const {
    ModelParams out;
    for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.detach(true));
    return out;
  }

  void zero_grad() {
    for (auto& [_, t] : tensors) t.zero_grad();
  }

  NamedTensors named() const { return NamedTensors(tensors.begin(), tensors.end()); }
};

namespace detail {

inline int groups_for(int channels, int requested) { return std::gcd(channels, requested); }

struct ParamFactory {
  ModelParams& params;
  std::mt19937_64 rng;

  void conv(const std::string& name, int out, int in, int k, double bias = 0.0) {
    const double bound = std::sqrt(1.0 / double(in * k * k));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(std::size_t(out) * in * k * k);
    for (auto& v : w) v = dist(rng);
    params.tensors.emplace(name + ".w", Tensor(Shape{out, in, k, k}, std::move(w), true));
    params.tensors.emplace(name + ".b", Tensor(Shape{out}, bias, true));
  }

  void norm(const std::string& name, int channels) {
    params.tensors.emplace(name + ".gamma", Tensor(Shape{channels}, 1.0, true));
    params.tensors.emplace(name + ".beta", Tensor(Shape{channels}, 0.0, true));
  }
};

}  // namespace detail

/// Weights ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in)), biases 0 (update gate +1),
/// GN gamma 1 and beta 0. Deterministic per cfg.seed.
inline ModelParams init_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p;
  detail::ParamFactory f{p, std::mt19937_64(cfg.seed)};
  const int k = 3;
  for (const char* enc : {"global", "slice"}) {
    int in = std::string(enc) == "global" ? cfg.grid.H : cfg.grid.slice_channels();
    for (int i = 0; i < 4; ++i) {
      std::string name = std::string(enc) + "." + std::to_string(i);
      f.conv(name, cfg.enc_channels[i], in, k);
      f.norm(name, cfg.enc_channels[i]);
      in = cfg.enc_channels[i];
    }
  }
  const int feat = cfg.feature_channels();
  for (int l = 0; l < cfg.gru_layers; ++l) {
    std::string name = "hinit." + std::to_string(l);
    f.conv(name, cfg.gru_hidden, feat, k);
    f.norm(name, cfg.gru_hidden);
  }
  for (int l = 0; l < cfg.gru_layers; ++l) {
    const int in = (l == 0 ? 2 * feat : cfg.gru_hidden) + cfg.gru_hidden;
    std::string name = "gru." + std::to_string(l);
    f.conv(name + ".z", cfg.gru_hidden, in, cfg.gru_kernel, 1.0);
    f.conv(name + ".r", cfg.gru_hidden, in, cfg.gru_kernel);
    f.conv(name + ".h", cfg.gru_hidden, in, cfg.gru_kernel);
  }
  int in = cfg.gru_hidden;
  for (int i = 0; i < 5; ++i) {
    std::string name = "decoder." + std::to_string(i);
    f.conv(name, cfg.decoder_channels[i], in, k);
    if (i < 4) f.norm(name, cfg.decoder_channels[i]);
    in = cfg.decoder_channels[i];
  }
  return p;
}

namespace detail {

inline Tensor conv_gn_relu(const Tensor& x, const ModelParams& p, const std::string& name, int stride,
                           int groups) {
  const Tensor& w = p.at(name + ".w");
  Tensor y = conv2d(x, w, p.at(name + ".b"), stride, w.dim(2) / 2);
  y = group_norm(y, groups_for(y.dim(0), groups), p.at(name + ".gamma"), p.at(name + ".beta"));
  return relu(y);
}

inline Tensor encode(const Tensor& x, const ModelParams& p, const ModelConfig& cfg, const std::string& prefix) {
  const int strides[4] = {1, 2, 1, 2};
  Tensor y = x;
  for (int i = 0; i < 4; ++i) y = conv_gn_relu(y, p, prefix + "." + std::to_string(i), strides[i], cfg.gn_groups);
  return y;
}

inline Tensor gate_conv(const Tensor& x, const ModelParams& p, const std::string& name) {
  const Tensor& w = p.at(name + ".w");
  return conv2d(x, w, p.at(name + ".b"), 1, w.dim(2) / 2);
}

inline void check_input(const Tensor& x, int channels, int rows, int cols, const char* what) {
  if (x.rank() != 3 || x.dim(0) != channels || x.dim(1) != rows || x.dim(2) != cols) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + " got " + shape_str(x.shape()) + ", expected " +
                                              shape_str({channels, rows, cols}));
  }
}

}  // namespace detail

inline Tensor grid_tensor(const OccupancyGrid& g) {
  std::vector<double> v(g.values.begin(), g.values.end());
  return Tensor(Shape{g.spec.H, g.spec.D, g.spec.W}, std::move(v));
}

inline Tensor slice_tensor(const Slice& s) {
  std::vector<double> v(s.values.begin(), s.values.end());
  return Tensor(Shape{s.channels, s.D, s.W}, std::move(v));
}

/// All H channels at once -> [C, D/4, W/4].
inline Tensor global_encode(const Tensor& grid, const ModelParams& p, const ModelConfig& cfg) {
  detail::check_input(grid, cfg.grid.H, cfg.grid.D, cfg.grid.W, "global_encode");
  return detail::encode(grid, p, cfg, "global");
}

/// One (2K+1)-channel slab -> [C, D/4, W/4]; weights shared by all slices.
inline Tensor slice_encode(const Tensor& slice, const ModelParams& p, const ModelConfig& cfg) {
  detail::check_input(slice, cfg.grid.slice_channels(), cfg.grid.D, cfg.grid.W, "slice_encode");
  return detail::encode(slice, p, cfg, "slice");
}

/// Per-layer initial hidden state: conv3x3 + GN + ReLU on the global features.
inline std::vector<Tensor> init_hidden(const Tensor& global_feat, const ModelParams& p, const ModelConfig& cfg) {
  detail::check_input(global_feat, cfg.feature_channels(), cfg.rows(), cfg.cols(), "init_hidden");
  std::vector<Tensor> h;
  for (int l = 0; l < cfg.gru_layers; ++l) {
    h.push_back(detail::conv_gn_relu(global_feat, p, "hinit." + std::to_string(l), 1, cfg.gn_groups));
  }
  return h;
}

/// One recurrent time step through the stacked ConvGRU:
///   z = sigmoid(conv[x, h]), r = sigmoid(conv[x, h]),
///   h~ = tanh(conv[x, r*h]), h' = (1 - z) h + z h~.
/// Layer l > 0 takes layer l-1's new hidden state as x.
inline std::vector<Tensor> gru_step(const Tensor& x, const std::vector<Tensor>& hidden, const ModelParams& p,
                                    const ModelConfig& cfg) {
  if (int(hidden.size()) != cfg.gru_layers) throw Error(ErrorCode::ShapeMismatch, "hidden state count mismatch");
  detail::check_input(x, 2 * cfg.feature_channels(), cfg.rows(), cfg.cols(), "gru_step");
  std::vector<Tensor> next;
  Tensor input = x;
  for (int l = 0; l < cfg.gru_layers; ++l) {
    const std::string name = "gru." + std::to_string(l);
    const Tensor& h = hidden[std::size_t(l)];
    detail::check_input(h, cfg.gru_hidden, cfg.rows(), cfg.cols(), "gru hidden");
    Tensor xh = concat({input, h}, 0);
    Tensor z = sigmoid(detail::gate_conv(xh, p, name + ".z"));
    Tensor r = sigmoid(detail::gate_conv(xh, p, name + ".r"));
    Tensor cand = tanh(detail::gate_conv(concat({input, mul(r, h)}, 0), p, name + ".h"));
    Tensor keep = add_scalar(scalar_mul(z, -1.0), 1.0);
    Tensor h_new = add(mul(keep, h), mul(z, cand));
    next.push_back(h_new);
    input = h_new;
  }
  return next;
}

/// Five 3x3 convs (GN+ReLU after the first four) -> per-pixel 3D offsets.
inline Tensor decode(const Tensor& h_top, const ModelParams& p, const ModelConfig& cfg) {
  detail::check_input(h_top, cfg.gru_hidden, cfg.rows(), cfg.cols(), "decode");
  Tensor y = h_top;
  for (int i = 0; i < 4; ++i) y = detail::conv_gn_relu(y, p, "decoder." + std::to_string(i), 1, cfg.gn_groups);
  return detail::gate_conv(y, p, "decoder.4");
}

/// Offsets predicted for every slice, bottom to top: [N, 3, D/4, W/4].
struct OffsetPrediction {
  Tensor offsets;
  std::vector<double> pixel_weights;  ///< per fit point, 1 unless masking is on
};

/// Runs both encoders and the recurrence. `order` permutes the slices fed
/// to the GRU (default bottom to top); offsets stay indexed by slice.
inline OffsetPrediction predict_offsets(const OccupancyGrid& g, const ModelParams& p, const ModelConfig& cfg,
                                        std::optional<std::vector<int>> order = std::nullopt) {
  cfg.validate();
  if (!(g.spec.H == cfg.grid.H && g.spec.D == cfg.grid.D && g.spec.W == cfg.grid.W)) {
    throw Error(ErrorCode::ShapeMismatch, "grid does not match model configuration");
  }
  OccupancyGrid grid = g;
  grid.spec = cfg.grid;
  auto slices = make_slices(grid);
  std::vector<int> seq(slices.size());
  std::iota(seq.begin(), seq.end(), 0);
  if (order) seq = *order;

  Tensor global = global_encode(grid_tensor(grid), p, cfg);
  std::vector<Tensor> hidden = init_hidden(global, p, cfg);
  std::vector<Tensor> per_slice(slices.size());
  for (int i : seq) {
    Tensor feat = slice_encode(slice_tensor(slices[std::size_t(i)]), p, cfg);
    hidden = gru_step(concat({feat, global}, 0), hidden, p, cfg);
    Tensor off = decode(hidden.back(), p, cfg);
    per_slice[std::size_t(i)] = reshape(off, Shape{1, 3, cfg.rows(), cfg.cols()});
  }

  OffsetPrediction out;
  out.offsets = concat(per_slice, 0);
  const int rows = cfg.rows(), cols = cfg.cols();
  out.pixel_weights.assign(std::size_t(cfg.point_count()), 1.0);
  if (cfg.mask_empty_pixels) {
    for (std::size_t s = 0; s < slices.size(); ++s) {
      const auto& sl = slices[s];
      for (int u = 0; u < rows; ++u)
        for (int v = 0; v < cols; ++v) {
          bool any = false;
          for (int c = 0; c < sl.channels && !any; ++c)
            for (int du = 0; du < 4 && !any; ++du)
              for (int dv = 0; dv < 4 && !any; ++dv) any = sl.at(c, u * 4 + du, v * 4 + dv) != 0;
          out.pixel_weights[(s * rows + u) * cols + v] = any ? 1.0 : 0.0;
        }
    }
  }
  return out;
}

/// Normalized-frame block centers for all slices as a constant [N, 3, D/4, W/4] tensor.
inline Tensor anchor_coords_tensor(const ModelConfig& cfg) {
  const int rows = cfg.rows(), cols = cfg.cols(), n = cfg.grid.N;
  std::vector<double> v(std::size_t(n) * 3 * rows * cols);
  auto anchors = slice_anchors(cfg.grid);
  for (int s = 0; s < n; ++s) {
    auto coords = anchor_world_coords(cfg.grid, anchors[std::size_t(s)], 4);
    for (int c = 0; c < 3; ++c)
      for (std::size_t k = 0; k < coords.size(); ++k) v[(std::size_t(s) * 3 + c) * rows * cols + k] = coords[k][c];
  }
  return Tensor(Shape{n, 3, rows, cols}, std::move(v));
}

/// Ground-truth offsets y = -(n.p - d) n at every block center.
inline Tensor offset_targets(const ModelConfig& cfg, const Plane& s) {
  Tensor coords = anchor_coords_tensor(cfg);
  const std::size_t plane_sz = std::size_t(cfg.rows()) * cfg.cols();
  std::vector<double> v(coords.size());
  for (int i = 0; i < cfg.grid.N; ++i) {
    for (std::size_t k = 0; k < plane_sz; ++k) {
      Vec3 p;
      for (int c = 0; c < 3; ++c) p[c] = coords[(std::size_t(i) * 3 + c) * plane_sz + k];
      Vec3 y = offset_target(p, s);
      for (int c = 0; c < 3; ++c) v[(std::size_t(i) * 3 + c) * plane_sz + k] = y[c];
    }
  }
  return Tensor(coords.shape(), std::move(v));
}

struct PlaneFit {
  Tensor homogeneous;  ///< [4, M] rows x, y, z, 1 (weighted)
  Tensor beta;         ///< [4] unit plane coefficients
  Plane plane;
  EigenInfo eigen;
  std::vector<Vec3> points;
};

/// Converts offsets to plane points P = block center + offset and solves
/// min ||A beta|| s.t. ||beta|| = 1 through the eigenvector layer.
inline PlaneFit plane_head(const Tensor& offsets, const ModelConfig& cfg, const std::vector<double>& weights = {}) {
  const int n = cfg.grid.N, rows = cfg.rows(), cols = cfg.cols();
  if (offsets.shape() != Shape{n, 3, rows, cols}) {
    throw Error(ErrorCode::ShapeMismatch, "plane_head expects offsets " + shape_str({n, 3, rows, cols}));
  }
  const int m = n * rows * cols;
  Tensor pts = add(offsets, anchor_coords_tensor(cfg));
  Tensor xyz = reshape(swap_leading_axes(pts), Shape{3, m});
  Tensor a_t = concat({xyz, Tensor(Shape{1, m}, 1.0)}, 0);
  if (!weights.empty()) {
    if (weights.size() != std::size_t(m)) throw Error(ErrorCode::ShapeMismatch, "plane_head weight count");
    std::vector<double> w(std::size_t(4) * m);
    for (int r = 0; r < 4; ++r) std::copy(weights.begin(), weights.end(), w.begin() + std::size_t(r) * m);
    a_t = mul(a_t, Tensor(Shape{4, m}, std::move(w)));
  }

  PlaneFit fit;
  fit.homogeneous = a_t;
  fit.beta = smallest_eigenvector(gram(a_t), &fit.eigen);
  fit.plane = plane_from_homogeneous(Vec4(fit.beta[0], fit.beta[1], fit.beta[2], fit.beta[3]));
  fit.points.reserve(std::size_t(m));
  auto v = xyz.data();
  for (int k = 0; k < m; ++k) fit.points.emplace_back(v[std::size_t(k)], v[std::size_t(m + k)], v[std::size_t(2 * m + k)]);
  return fit;
}

struct ForwardOutput {
  Tensor offsets;  ///< [N, 3, D/4, W/4]
  PlaneFit fit;
};

/// Full pipeline on a normalized cloud: grid, encoders, recurrence, decoder,
/// plane head. Differentiable from the plane and offsets to every parameter.
inline ForwardOutput forward(const Cloud& c, const ModelParams& p, const ModelConfig& cfg) {
  OffsetPrediction pred = predict_offsets(voxelize(c, cfg.grid), p, cfg);
  ForwardOutput out;
  out.offsets = pred.offsets;
  out.fit = plane_head(pred.offsets, cfg, cfg.mask_empty_pixels ? pred.pixel_weights : std::vector<double>{});
  return out;
}

/// Writes the checkpoint to `path` and the config as JSON to `path`.json.
inline void save_params(const std::string& path, const ModelParams& p, const ModelConfig& cfg) {
  save_tensors(path, p.named());
  std::ofstream os(path + ".json");
  if (!os) throw Error(ErrorCode::IO, "cannot write " + path + ".json");
  os << nlohmann::json(cfg).dump(2) << "\n";
}

inline ModelConfig load_model_config(const std::string& path) {
  std::ifstream is(path + ".json");
  if (!is) throw Error(ErrorCode::IO, "cannot open model config " + path + ".json");
  try {
    return nlohmann::json::parse(is).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Config, path + ".json: " + e.what());
  }
}

/// Loads parameters and checks them against the shapes `cfg` implies.
inline ModelParams load_params(const std::string& path, const ModelConfig& cfg) {
  ModelParams expected = init_params(cfg);
  ModelParams out;
  for (auto& [name, t] : load_tensors(path)) {
    auto it = expected.tensors.find(name);
    if (it == expected.tensors.end()) throw Error(ErrorCode::ShapeMismatch, "unexpected tensor " + name);
    if (it->second.shape() != t.shape()) {
      throw Error(ErrorCode::ShapeMismatch, name + " has shape " + shape_str(t.shape()) + ", expected " +
                                                shape_str(it->second.shape()));
    }
    t.set_requires_grad(true);
    out.tensors.emplace(name, t);
  }
  if (out.tensors.size() != expected.tensors.size()) {
    throw Error(ErrorCode::ShapeMismatch, "checkpoint is missing parameters");
  }
  return out;
}

}  // namespace symslice

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "symslice/csv.hpp"
#include "symslice/data.hpp"
#include "symslice/grid.hpp"
#include "symslice/metrics.hpp"
#include "symslice/network.hpp"

namespace symslice {

/// Everything a training or evaluation run needs. Every field has a default;
/// JSON configs may set any subset and unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  // optimizer (Adam)
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // schedule
  int epochs_phase1 = 30;
  int epochs_phase2 = 30;
  int batch_size = 8;
  double gte_weight = 1.0;
  std::string phase2_view = "full";  ///< "full" or "partial"
  // data
  int n_train = 500;
  int n_val = 100;
  int n_test = 100;
  std::vector<std::string> families{"mirrored_blob", "box_union", "cylinder_cluster", "bi_symmetric"};
  int point_count = 2048;
  double noise_sigma = 0.005;
  std::string augment = "so3";  ///< "so3", "yaw" or "none"
  double yaw_range_deg = 15.0;  ///< half-width of the yaw augmentation
  double translate_sigma = 0.0;  ///< ground-plane jitter before normalization (construction units)
  int image_size = 64;
  int sde_samples = 1000;
  // run
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out_dir = "run";
  std::string init_from;  ///< optional checkpoint to start from

  std::string checkpoint_path() const { return (std::filesystem::path(out_dir) / "model.bin").string(); }
  std::string log_path() const { return (std::filesystem::path(out_dir) / "train_log.csv").string(); }

  void validate() const {
    model.validate();
    if (!(lr > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
      throw Error(ErrorCode::Config, "invalid optimizer hyperparameters");
    }
    if (epochs_phase1 < 0 || epochs_phase2 < 0) throw Error(ErrorCode::Config, "epoch counts must be >= 0");
    if (batch_size < 1) throw Error(ErrorCode::Config, "batch_size must be >= 1");
    if (phase2_view != "full" && phase2_view != "partial") {
      throw Error(ErrorCode::Config, "phase2_view must be 'full' or 'partial'");
    }
    if (augment != "so3" && augment != "yaw" && augment != "none") {
      throw Error(ErrorCode::Config, "augment must be 'so3', 'yaw' or 'none'");
    }
    if (n_train < 0 || n_val < 0 || n_test < 0) throw Error(ErrorCode::Config, "split sizes must be >= 0");
    if (families.empty()) throw Error(ErrorCode::Config, "families must not be empty");
    for (const auto& f : families) parse_family(f);
    if (point_count < 4 || noise_sigma < 0.0) throw Error(ErrorCode::Config, "invalid point_count/noise_sigma");
    if (image_size < 16) throw Error(ErrorCode::Config, "image_size must be >= 16");
    if (sde_samples < 1) throw Error(ErrorCode::Config, "sde_samples must be >= 1");
    if (threads < 1) throw Error(ErrorCode::Config, "threads must be >= 1");
  }

  std::vector<ShapeFamily> family_list() const {
    std::vector<ShapeFamily> out;
    for (const auto& f : families) out.push_back(parse_family(f));
    return out;
  }
};

inline nlohmann::json run_config_to_json(const RunConfig& rc) {
  nlohmann::json j = rc.model;
  j["lr"] = rc.lr;
  j["beta1"] = rc.beta1;
  j["beta2"] = rc.beta2;
  j["epsilon"] = rc.epsilon;
  j["epochs_phase1"] = rc.epochs_phase1;
  j["epochs_phase2"] = rc.epochs_phase2;
  j["batch_size"] = rc.batch_size;
  j["gte_weight"] = rc.gte_weight;
  j["phase2_view"] = rc.phase2_view;
  j["n_train"] = rc.n_train;
  j["n_val"] = rc.n_val;
  j["n_test"] = rc.n_test;
  j["families"] = rc.families;
  j["point_count"] = rc.point_count;
  j["noise_sigma"] = rc.noise_sigma;
  j["augment"] = rc.augment;
  j["yaw_range_deg"] = rc.yaw_range_deg;
  j["translate_sigma"] = rc.translate_sigma;
  j["image_size"] = rc.image_size;
  j["sde_samples"] = rc.sde_samples;
  j["seed"] = rc.seed;
  j["threads"] = rc.threads;
  j["out_dir"] = rc.out_dir;
  j["init_from"] = rc.init_from;
  return j;
}

/// Overlays the keys of `j` onto `base`; any key not in the schema is an error.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {}) {
  if (!j.is_object()) throw Error(ErrorCode::Config, "run config must be a JSON object");
  const nlohmann::json known = run_config_to_json(base);
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw Error(ErrorCode::Config, "unknown config key '" + key + "'");
  }
  nlohmann::json merged = known;
  merged.update(j);
  RunConfig rc;
  try {
    rc.model = merged.get<ModelConfig>();
    rc.lr = merged.at("lr");
    rc.beta1 = merged.at("beta1");
    rc.beta2 = merged.at("beta2");
    rc.epsilon = merged.at("epsilon");
    rc.epochs_phase1 = merged.at("epochs_phase1");
    rc.epochs_phase2 = merged.at("epochs_phase2");
    rc.batch_size = merged.at("batch_size");
    rc.gte_weight = merged.at("gte_weight");
    rc.phase2_view = merged.at("phase2_view");
    rc.n_train = merged.at("n_train");
    rc.n_val = merged.at("n_val");
    rc.n_test = merged.at("n_test");
    rc.families = merged.at("families").get<std::vector<std::string>>();
    rc.point_count = merged.at("point_count");
    rc.noise_sigma = merged.at("noise_sigma");
    rc.augment = merged.at("augment");
    rc.yaw_range_deg = merged.at("yaw_range_deg");
    rc.translate_sigma = merged.at("translate_sigma");
    rc.image_size = merged.at("image_size");
    rc.sde_samples = merged.at("sde_samples");
    rc.seed = merged.at("seed");
    rc.threads = merged.at("threads");
    rc.out_dir = merged.at("out_dir");
    rc.init_from = merged.at("init_from");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Config, std::string("bad run config value: ") + e.what());
  }
  rc.validate();
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IO, "cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Config, path + ": " + e.what());
  }
  return run_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Samples

/// A network-ready cloud with ground truth expressed in the same normalized frame.
struct Sample {
  std::string id;
  Cloud cloud;     ///< normalized network input (full or partial)
  GroundTruth gt;  ///< planes and full object points, same frame as `cloud`
};

/// splitmix64 step; used to derive independent per-purpose seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Builds one sample: generate, rotate, normalize, optionally cut a partial
/// view and re-normalize. `variant` selects the augmentation draw (training
/// uses the epoch, evaluation a fixed value).
inline Sample make_sample(const ManifestEntry& e, const RunConfig& rc, bool partial, std::uint64_t variant) {
  auto [cloud, gt] = gen_shape(ShapeRecipe{e.family, rc.point_count, rc.noise_sigma, e.seed});
  const std::uint64_t aug = mix_seed(e.seed, variant);
  Rotation r = Rotation::identity();
  if (rc.augment == "so3") {
    r = random_rotation(aug);
  } else if (rc.augment == "yaw") {
    std::mt19937_64 rng(aug);
    double deg = std::uniform_real_distribution<double>(-rc.yaw_range_deg, rc.yaw_range_deg)(rng);
    r = Rotation::about_axis(Vec3::UnitY(), deg * std::numbers::pi / 180.0);
  }
  Vec3 t = Vec3::Zero();
  if (rc.translate_sigma > 0.0) {
    std::mt19937_64 rng(mix_seed(aug, 1));
    std::normal_distribution<double> g(0.0, rc.translate_sigma);
    t = Vec3(g(rng), 0.0, g(rng));
  }
  apply_transform(cloud, gt, r, t);
  Cloud norm = normalize_cloud(cloud);
  GroundTruth ngt = normalize_ground_truth(gt, norm.norm);
  Sample s{e.id, norm, ngt};
  if (partial) {
    Cloud view = partial_view(norm, random_viewpoint(mix_seed(aug, 2), cloud_radius(norm), rc.image_size));
    Cloud again = normalize_cloud(view);
    // compose both normalizations so the record maps to the original frame
    again.norm = NormRecord{norm.norm.invert(again.norm.center), norm.norm.scale * again.norm.scale};
    s.cloud = again;
    s.cloud.kind = CloudKind::partial;
    s.gt = normalize_ground_truth(gt, again.norm);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Losses

/// Offsets target for the ground-truth plane that best matches the current
/// prediction (objects may have several valid planes).
inline Tensor best_offsets_loss(const Tensor& offsets, const GroundTruth& gt, const ModelConfig& cfg) {
  Tensor best;
  double best_val = std::numeric_limits<double>::infinity();
  for (const auto& s : gt.planes) {
    Tensor target = offset_targets(cfg, s);
    NoGradGuard guard;
    double v = offsets_loss(offsets, target).item();
    if (!best.defined() || v < best_val) {
      best_val = v;
      best = target;
    }
  }
  return offsets_loss(offsets, best);
}

struct SampleMetrics {
  double offsets_loss = std::nan("");
  double gte = std::nan("");
  double sde = std::nan("");
  double angular_error = std::nan("");
  double eigengap = std::nan("");
  std::string status = "ok";
};

/// Plane metrics of a prediction against the sample's ground truth.
inline void fill_plane_metrics(SampleMetrics& m, const Plane& pred, const GroundTruth& gt, const RunConfig& rc,
                               std::uint64_t seed) {
  m.gte = gte(pred, gt);
  m.sde = sde(pred, gt, std::size_t(rc.sde_samples), seed);
  m.angular_error = angular_error(pred, gt);
}

// ---------------------------------------------------------------------------
// Adam

class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void reset() {
    m_.clear();
    v_.clear();
    step_ = 0;
  }

  /// One update from the gradients currently stored on `p`.
  void step(ModelParams& p) {
    ++step_;
    const double c1 = 1.0 - std::pow(b1_, double(step_)), c2 = 1.0 - std::pow(b2_, double(step_));
    for (auto& [name, t] : p.tensors) {
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) {
        m.assign(t.size(), 0.0);
        v.assign(t.size(), 0.0);
      }
      auto g = t.grad();
      auto w = t.mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
        v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
        w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  std::map<std::string, std::vector<double>> m_, v_;
  long step_ = 0;
};

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
  int epoch = 0;
  std::string split;
  double offsets_loss = 0, gte = 0, sde = 0, angular_error = 0;
  int phase = 1;
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  double s = 0;
  std::size_t n = 0;
  for (double x : v)
    if (std::isfinite(x)) s += x, ++n;
  return n ? s / double(n) : std::nan("");
}

inline std::vector<double> flat_grad(const ModelParams& p) {
  std::vector<double> out;
  out.reserve(p.scalar_count());
  for (const auto& [_, t] : p.tensors) out.insert(out.end(), t.grad().begin(), t.grad().end());
  return out;
}

inline void copy_values(const ModelParams& from, ModelParams& to) {
  for (auto& [name, t] : to.tensors) {
    auto src = from.at(name).data();
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
  }
}

/// Runs fn(i) for i in [0, n) on `threads` workers; fn(worker, i).
inline void parallel_for(int threads, std::size_t n, const std::function<void(int, std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(0, i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = std::size_t(w); i < n; i += std::size_t(threads)) fn(w, i);
      } catch (...) {
        errors[std::size_t(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Forward pass plus metrics for one sample; no gradients.
inline SampleMetrics evaluate_sample(const Sample& s, const ModelParams& p, const RunConfig& rc) {
  NoGradGuard guard;
  SampleMetrics m;
  OffsetPrediction pred = predict_offsets(voxelize(s.cloud, rc.model.grid), p, rc.model);
  m.offsets_loss = best_offsets_loss(pred.offsets, s.gt, rc.model).item();
  try {
    PlaneFit fit = plane_head(pred.offsets, rc.model, rc.model.mask_empty_pixels ? pred.pixel_weights
                                                                                 : std::vector<double>{});
    m.eigengap = fit.eigen.eigengap;
    fill_plane_metrics(m, fit.plane, s.gt, rc, mix_seed(rc.seed, 7));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EigengapTooSmall && e.code() != ErrorCode::Degenerate) throw;
    m.status = std::string(to_string(e.code()));
  }
  return m;
}

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
  std::optional<ModelParams> phase1_params;  ///< snapshot at the phase boundary when both phases run
  int skipped_gte_terms = 0;
  double seconds = 0.0;
};

/// Two-phase training: offsets loss on full clouds, then offsets loss plus
/// gte_weight * GTE on full or partial clouds. Per-sample gradients are
/// reduced in sample order, so results do not depend on `threads`.
/// Adam moments restart at the phase boundary.
inline TrainResult train(const RunConfig& rc, const std::vector<ManifestEntry>& manifest,
                         std::ostream* progress = nullptr) {
  rc.validate();
  auto t0 = std::chrono::steady_clock::now();
  std::vector<ManifestEntry> train_set, val_set;
  for (const auto& e : manifest) {
    if (e.split == "train") train_set.push_back(e);
    else if (e.split == "val") val_set.push_back(e);
  }
  if (train_set.empty() && rc.epochs_phase1 + rc.epochs_phase2 > 0) {
    throw Error(ErrorCode::Config, "manifest has no training samples");
  }

  TrainResult res;
  ModelConfig cfg = rc.model;
  res.params = rc.init_from.empty() ? init_params(cfg) : load_params(rc.init_from, cfg);
  const int workers = std::max(1, rc.threads);
  std::vector<ModelParams> worker_params;
  for (int w = 0; w < workers; ++w) worker_params.push_back(res.params.clone());

  Adam adam(rc.lr, rc.beta1, rc.beta2, rc.epsilon);
  const int total = rc.epochs_phase1 + rc.epochs_phase2;
  std::mt19937_64 order_rng(mix_seed(rc.seed, 11));

  for (int epoch = 1; epoch <= total; ++epoch) {
    const bool phase2 = epoch > rc.epochs_phase1;
    if (epoch == rc.epochs_phase1 + 1) {
      adam.reset();
      if (epoch > 1) res.phase1_params = res.params.clone();
    }
    const bool partial = phase2 && rc.phase2_view == "partial";
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), order_rng);

    std::vector<double> ep_off, ep_gte, ep_sde, ep_ang;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(rc.batch_size)) {
      const std::size_t n = std::min(order.size() - start, std::size_t(rc.batch_size));
      std::vector<std::vector<double>> grads(n);
      std::vector<SampleMetrics> metrics(n);
      std::vector<int> skipped(n, 0);
      for (auto& wp : worker_params) detail::copy_values(res.params, wp);
      detail::parallel_for(workers, n, [&](int w, std::size_t i) {
        ModelParams& p = worker_params[std::size_t(w)];
        p.zero_grad();
        const auto& e = train_set[order[start + i]];
        Sample s = make_sample(e, rc, partial, mix_seed(std::uint64_t(epoch), rc.seed));
        OffsetPrediction pred = predict_offsets(voxelize(s.cloud, cfg.grid), p, cfg);
        Tensor loss = best_offsets_loss(pred.offsets, s.gt, cfg);
        auto check_finite = [&](const Tensor& l) {
          if (std::isfinite(l.item())) return;
          throw Error(ErrorCode::NonFiniteLoss, "non-finite loss in epoch " + std::to_string(epoch) + " batch " +
                                                    std::to_string(start / std::size_t(rc.batch_size)) +
                                                    " (sample " + e.id + ")");
        };
        check_finite(loss);
        SampleMetrics& m = metrics[i];
        m.offsets_loss = loss.item();
        try {
          const auto weights = cfg.mask_empty_pixels ? pred.pixel_weights : std::vector<double>{};
          if (phase2) {
            PlaneFit fit = plane_head(pred.offsets, cfg, weights);
            Tensor g = gte_loss(fit.beta, s.gt);
            loss = add(loss, scalar_mul(g, rc.gte_weight));
            m.angular_error = angular_error(fit.plane, s.gt);
            m.gte = g.item();
          } else {
            NoGradGuard guard;
            PlaneFit fit = plane_head(pred.offsets.detach(), cfg, weights);
            m.angular_error = angular_error(fit.plane, s.gt);
            m.gte = gte(fit.plane, s.gt);
          }
        } catch (const Error& err) {
          if (err.code() != ErrorCode::EigengapTooSmall && err.code() != ErrorCode::Degenerate) throw;
          skipped[i] = 1;
        }
        check_finite(loss);
        loss.backward();
        grads[i] = detail::flat_grad(p);
      });

      // ordered reduction, averaged over the batch
      res.params.zero_grad();
      std::size_t off = 0;
      for (auto& [_, t] : res.params.tensors) {
        auto g = t.mutable_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t k = 0; k < g.size(); ++k) g[k] += grads[i][off + k];
        for (auto& x : g) x /= double(n);
        off += g.size();
      }
      adam.step(res.params);
      for (std::size_t i = 0; i < n; ++i) {
        res.skipped_gte_terms += skipped[i];
        ep_off.push_back(metrics[i].offsets_loss);
        ep_gte.push_back(metrics[i].gte);
        ep_ang.push_back(metrics[i].angular_error);
      }
    }
    res.log.push_back({epoch, "train", detail::mean_of(ep_off), detail::mean_of(ep_gte), std::nan(""),
                       detail::mean_of(ep_ang), phase2 ? 2 : 1});

    if (!val_set.empty()) {
      std::vector<SampleMetrics> vm(val_set.size());
      for (auto& wp : worker_params) detail::copy_values(res.params, wp);
      detail::parallel_for(workers, val_set.size(), [&](int w, std::size_t i) {
        Sample s = make_sample(val_set[i], rc, partial, 0);
        vm[i] = evaluate_sample(s, worker_params[std::size_t(w)], rc);
      });
      std::vector<double> o, g, sd, a;
      for (const auto& m : vm) {
        o.push_back(m.offsets_loss);
        g.push_back(m.gte);
        sd.push_back(m.sde);
        a.push_back(m.angular_error);
      }
      res.log.push_back({epoch, "val", detail::mean_of(o), detail::mean_of(g), detail::mean_of(sd),
                         detail::mean_of(a), phase2 ? 2 : 1});
    }
    if (progress) {
      const auto& last = res.log.back();
      *progress << "epoch " << epoch << "/" << total << (phase2 ? " phase2" : " phase1") << " " << last.split
                << " offsets=" << last.offsets_loss << " gte=" << last.gte << " angle=" << last.angular_error
                << std::endl;
    }
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline void write_train_log(const std::string& path, const std::vector<EpochLog>& log) {
  CsvWriter w(path, {"epoch", "split", "offsets_loss", "gte", "sde", "angular_error"});
  for (const auto& r : log) {
    w.row({std::to_string(r.epoch), r.split, format_double(r.offsets_loss), format_double(r.gte),
           format_double(r.sde), format_double(r.angular_error)});
  }
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalRow {
  std::string object_id;
  SampleMetrics m;
};

struct Summary {
  std::size_t count = 0;
  std::size_t failed = 0;
  double mean_gte = std::nan(""), median_gte = std::nan("");
  double mean_sde = std::nan(""), median_sde = std::nan("");
  double mean_angle = std::nan(""), median_angle = std::nan("");
};

inline double median_of(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return !std::isfinite(x); }), v.end());
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline Summary summarize(const std::vector<EvalRow>& rows) {
  Summary s;
  s.count = rows.size();
  std::vector<double> g, d, a;
  for (const auto& r : rows) {
    if (r.m.status != "ok") ++s.failed;
    g.push_back(r.m.gte);
    d.push_back(r.m.sde);
    a.push_back(r.m.angular_error);
  }
  if (rows.empty()) return s;
  s.mean_gte = detail::mean_of(g);
  s.median_gte = median_of(g);
  s.mean_sde = detail::mean_of(d);
  s.median_sde = median_of(d);
  s.mean_angle = detail::mean_of(a);
  s.median_angle = median_of(a);
  return s;
}

inline std::string summary_line(const Summary& s) {
  if (s.count == 0) return "count=0 no samples";
  return "count=" + std::to_string(s.count) + " failed=" + std::to_string(s.failed) +
         " gte_mean=" + format_double(s.mean_gte) + " gte_median=" + format_double(s.median_gte) +
         " sde_mean=" + format_double(s.mean_sde) + " sde_median=" + format_double(s.median_sde) +
         " angle_mean=" + format_double(s.mean_angle) + " angle_median=" + format_double(s.median_angle);
}

/// Predicts planes for every manifest entry of `split`.
inline std::vector<EvalRow> evaluate_split(const ModelParams& p, const RunConfig& rc,
                                           const std::vector<ManifestEntry>& manifest, const std::string& split,
                                           bool partial) {
  std::vector<ManifestEntry> entries;
  for (const auto& e : manifest)
    if (e.split == split) entries.push_back(e);
  std::vector<EvalRow> rows(entries.size());
  const int workers = std::max(1, rc.threads);
  std::vector<ModelParams> worker_params;
  for (int w = 0; w < workers; ++w) worker_params.push_back(w == 0 ? p : p.clone());
  detail::parallel_for(workers, entries.size(), [&](int w, std::size_t i) {
    Sample s = make_sample(entries[i], rc, partial, 0);
    rows[i] = {entries[i].id, evaluate_sample(s, worker_params[std::size_t(w)], rc)};
  });
  return rows;
}

/// Uses the ground-truth plane itself as the prediction; an upper bound.
inline std::vector<EvalRow> evaluate_oracle(const RunConfig& rc, const std::vector<ManifestEntry>& manifest,
                                            const std::string& split, bool partial) {
  std::vector<EvalRow> rows;
  for (const auto& e : manifest) {
    if (e.split != split) continue;
    Sample s = make_sample(e, rc, partial, 0);
    SampleMetrics m;
    m.offsets_loss = 0.0;
    fill_plane_metrics(m, s.gt.planes.front(), s.gt, rc, mix_seed(rc.seed, 7));
    rows.push_back({e.id, m});
  }
  return rows;
}

inline void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows) {
  CsvWriter w(path, {"object_id", "gte", "sde", "angular_error_deg", "eigengap", "status"});
  for (const auto& r : rows) {
    w.row({r.object_id, format_double(r.m.gte), format_double(r.m.sde), format_double(r.m.angular_error),
           format_double(r.m.eigengap), r.m.status});
  }
}

}  // namespace symslice

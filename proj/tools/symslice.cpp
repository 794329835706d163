// symslice command line: dataset generation, training, evaluation,
// single-cloud estimation, box refinement and the gradcheck harness.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "symslice/gradcheck_suite.hpp"
#include "symslice/refine.hpp"
#include "symslice/train.hpp"

using namespace symslice;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool deterministic = false;
};

std::string data_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("SYMSLICE_DATA_DIR"); env && *env) return env;
  return "data";
}

RunConfig resolve_config(const Globals& g) {
  RunConfig rc = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  if (g.seed) {
    rc.seed = *g.seed;
    rc.model.seed = *g.seed;
  }
  if (g.threads) rc.threads = *g.threads;
  if (g.deterministic) rc.threads = 1;
  rc.validate();
  return rc;
}

/// Manifest from <root>/manifest.csv when present, otherwise generated from the config.
std::vector<ManifestEntry> load_or_make_manifest(const RunConfig& rc, const std::string& root) {
  fs::path path = fs::path(root) / "manifest.csv";
  if (fs::exists(path)) return read_manifest(path.string());
  return make_manifest(rc.n_train, rc.n_val, rc.n_test, rc.family_list(), rc.seed);
}

void write_planes(const std::string& path, const std::vector<Plane>& planes) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IO, "cannot write " + path);
  for (const auto& s : planes)
    os << format_double(s.n.x()) << ' ' << format_double(s.n.y()) << ' ' << format_double(s.n.z()) << ' '
       << format_double(s.d) << '\n';
}

/// One plane per line: nx ny nz d.
std::vector<Plane> read_planes(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IO, "cannot open " + path);
  std::vector<Plane> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    double a, b, c, d;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (!(ls >> a >> b >> c >> d)) throw Error(ErrorCode::ParseError, path + ":" + std::to_string(lineno) + ": expected 'nx ny nz d'");
    Vec3 n(a, b, c);
    if (!(n.norm() > 0.0)) throw Error(ErrorCode::Degenerate, path + ":" + std::to_string(lineno) + ": zero normal");
    out.push_back(Plane{n / n.norm(), d / n.norm()});
  }
  if (out.empty()) throw Error(ErrorCode::ParseError, path + ": no planes");
  return out;
}

/// Corners of plane s clipped to the axis-aligned cube [-h, h]^3, in cyclic order.
std::vector<Vec3> clip_plane_to_cube(const Plane& s, double h) {
  std::vector<Vec3> pts;
  for (int axis = 0; axis < 3; ++axis) {
    int u = (axis + 1) % 3, v = (axis + 2) % 3;
    for (double su : {-h, h})
      for (double sv : {-h, h}) {
        // edge parallel to `axis` at (u, v) = (su, sv)
        double denom = s.n[axis];
        if (std::abs(denom) < 1e-15) continue;
        double t = (s.d - s.n[u] * su - s.n[v] * sv) / denom;
        if (t < -h || t > h) continue;
        Vec3 p;
        p[axis] = t;
        p[u] = su;
        p[v] = sv;
        pts.push_back(p);
      }
  }
  if (pts.size() < 3) return {};
  Vec3 c = Vec3::Zero();
  for (const auto& p : pts) c += p;
  c /= double(pts.size());
  Vec3 e1 = (pts[0] - c).normalized(), e2 = s.n.cross(e1);
  std::sort(pts.begin(), pts.end(), [&](const Vec3& a, const Vec3& b) {
    return std::atan2((a - c).dot(e2), (a - c).dot(e1)) < std::atan2((b - c).dot(e2), (b - c).dot(e1));
  });
  // drop duplicates from corners shared by several edges
  std::vector<Vec3> out;
  for (const auto& p : pts)
    if (out.empty() || (p - out.back()).norm() > 1e-12) out.push_back(p);
  if (out.size() > 1 && (out.front() - out.back()).norm() <= 1e-12) out.pop_back();
  return out;
}

Plane denormalize_plane(const Plane& s, const NormRecord& rec) {
  return transform_plane(s, Rotation::identity(), rec.center, rec.scale);
}

std::string plane_text(const Plane& s) {
  std::ostringstream os;
  os << "n=(" << format_double(s.n.x()) << "," << format_double(s.n.y()) << "," << format_double(s.n.z())
     << ") d=" << format_double(s.d);
  return os.str();
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Globals& g, const std::string& out_flag, bool export_clouds, int vehicles,
                 double yaw_sigma_deg, double center_sigma) {
  RunConfig rc = resolve_config(g);
  fs::path root = data_root(out_flag);
  fs::create_directories(root);
  auto manifest = make_manifest(rc.n_train, rc.n_val, rc.n_test, rc.family_list(), rc.seed);
  write_manifest((root / "manifest.csv").string(), manifest);
  std::cout << "wrote " << manifest.size() << " entries to " << (root / "manifest.csv").string() << "\n";
  if (export_clouds) {
    fs::create_directories(root / "clouds");
    for (const auto& e : manifest) {
      Sample s = make_sample(e, rc, false, 0);
      save_cloud_xyz((root / "clouds" / (e.id + ".xyz")).string(), s.cloud.points);
      write_planes((root / "clouds" / (e.id + ".planes")).string(), s.gt.planes);
    }
    std::cout << "exported clouds to " << (root / "clouds").string() << "\n";
  }
  if (vehicles > 0) {
    VehicleScene scene = make_vehicle_scene(vehicles, rc.point_count, rc.noise_sigma, rc.seed);
    auto det = simulate_detections(scene.gt_boxes, yaw_sigma_deg * std::numbers::pi / 180.0, center_sigma,
                                   mix_seed(rc.seed, 3));
    fs::path vdir = root / "vehicles";
    fs::create_directories(vdir);
    write_boxes((vdir / "gt_boxes.csv").string(), scene.ids, scene.gt_boxes);
    write_boxes((vdir / "detections.csv").string(), scene.ids, det);
    for (std::size_t i = 0; i < scene.ids.size(); ++i) {
      save_cloud_xyz((vdir / (scene.ids[i] + ".xyz")).string(), scene.clouds[i]);
      write_planes((vdir / (scene.ids[i] + ".planes")).string(), {scene.planes[i]});
    }
    std::cout << "wrote " << vehicles << " vehicles to " << vdir.string() << "\n";
  }
  return 0;
}

int cmd_train(const Globals& g, const std::string& data_flag, const std::string& out_flag) {
  RunConfig rc = resolve_config(g);
  if (!out_flag.empty()) rc.out_dir = out_flag;
  fs::create_directories(rc.out_dir);
  auto manifest = load_or_make_manifest(rc, data_root(data_flag));
  {
    std::ofstream os(fs::path(rc.out_dir) / "run_config.json");
    os << run_config_to_json(rc).dump(2) << "\n";
  }
  TrainResult res = train(rc, manifest, &std::cerr);
  save_params(rc.checkpoint_path(), res.params, rc.model);
  write_train_log(rc.log_path(), res.log);
  std::cout << "checkpoint " << rc.checkpoint_path() << "\nlog " << rc.log_path() << "\nseconds "
            << format_double(res.seconds) << "\nskipped_gte_terms " << res.skipped_gte_terms << "\n";
  return 0;
}

int cmd_eval(const Globals& g, const std::string& data_flag, const std::string& checkpoint, const std::string& split,
             bool partial, bool oracle, const std::string& out) {
  RunConfig rc = resolve_config(g);
  auto manifest = load_or_make_manifest(rc, data_root(data_flag));
  std::vector<EvalRow> rows;
  if (oracle) {
    rows = evaluate_oracle(rc, manifest, split, partial);
  } else {
    if (checkpoint.empty()) throw Error(ErrorCode::Config, "eval needs --checkpoint or --oracle");
    rc.model = load_model_config(checkpoint);
    rows = evaluate_split(load_params(checkpoint, rc.model), rc, manifest, split, partial);
  }
  if (!out.empty()) write_eval_csv(out, rows);
  std::cout << "split=" << split << (partial ? " view=partial " : " view=full ") << summary_line(summarize(rows))
            << "\n";
  return 0;
}

int cmd_estimate(const std::string& input, const std::string& checkpoint, const std::string& ply,
                 const std::string& gt_path, int surface_samples, std::uint64_t seed) {
  LoadOptions opt;
  if (surface_samples > 0) opt.surface_samples = surface_samples;
  opt.seed = seed;
  Cloud raw = load_cloud(input, opt);
  if (checkpoint.empty()) throw Error(ErrorCode::Config, "estimate needs --checkpoint");
  ModelConfig cfg = load_model_config(checkpoint);
  ModelParams params = load_params(checkpoint, cfg);
  Cloud norm = normalize_cloud(raw);
  ForwardOutput fwd;
  {
    NoGradGuard guard;
    fwd = forward(norm, params, cfg);
  }
  Plane world = denormalize_plane(fwd.fit.plane, norm.norm);
  std::string gte_text = "?", sde_text = "?";
  if (!gt_path.empty()) {
    GroundTruth gt{read_planes(gt_path), raw.points};
    GroundTruth ngt = normalize_ground_truth(gt, norm.norm);
    gte_text = format_double(gte(fwd.fit.plane, ngt));
    sde_text = format_double(sde(fwd.fit.plane, ngt, 1000, seed));
  }
  std::cout << plane_text(world) << " gte=" << gte_text << " sde=" << sde_text << "\n";
  if (!ply.empty()) {
    std::vector<Vec3> verts = raw.points;
    std::vector<std::size_t> face;
    for (const auto& p : clip_plane_to_cube(fwd.fit.plane, 0.5)) {
      face.push_back(verts.size());
      verts.push_back(norm.norm.invert(p));
    }
    std::vector<std::vector<std::size_t>> faces;
    if (!face.empty()) faces.push_back(face);
    save_ply(ply, verts, faces);
  }
  return 0;
}

int cmd_refine(const Globals& g, const std::string& boxes_path, const std::string& clouds_dir,
               const std::string& checkpoint, const std::string& gt_boxes_path, bool oracle, bool translate,
               const std::string& out, const std::string& report_path) {
  RunConfig rc = resolve_config(g);
  auto [ids, boxes] = read_boxes(boxes_path);
  std::optional<ModelParams> params;
  ModelConfig cfg;
  if (!oracle) {
    if (checkpoint.empty()) throw Error(ErrorCode::Config, "refine needs --checkpoint or --oracle-planes");
    cfg = load_model_config(checkpoint);
    params = load_params(checkpoint, cfg);
  }
  std::vector<Box3D> refined(boxes.size());
  std::vector<std::string> status(boxes.size(), "ok");
  std::vector<Plane> planes(boxes.size());
  detail::parallel_for(rc.threads, boxes.size(), [&](int, std::size_t i) {
    try {
      fs::path base = fs::path(clouds_dir) / ids[i];
      if (oracle) {
        planes[i] = read_planes(base.string() + ".planes").front();
      } else {
        Cloud c = load_cloud(base.string() + ".xyz");
        planes[i] = estimate_plane_in_box(c, boxes[i], *params, cfg);
      }
      refined[i] = refine_box(boxes[i], planes[i], translate);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::IO || e.code() == ErrorCode::ParseError) throw;
      refined[i] = boxes[i];
      status[i] = std::string(to_string(e.code()));
    }
  });
  write_boxes(out, ids, refined, status);
  std::cout << "wrote " << refined.size() << " boxes to " << out << "\n";
  if (!gt_boxes_path.empty()) {
    auto [gt_ids, gt] = read_boxes(gt_boxes_path);
    if (gt_ids != ids) throw Error(ErrorCode::LengthMismatch, "gt boxes do not match detections id for id");
    RefinementReport rep = orientation_error(boxes, refined, gt);
    if (!report_path.empty()) write_report(report_path, ids, rep, status);
    std::cout << "mAOE_before=" << format_double(rep.mean_before) << " mAOE_after=" << format_double(rep.mean_after)
              << " relative_reduction=" << format_double(rep.relative_reduction()) << "\n";
  }
  return 0;
}

int cmd_gradcheck(const Globals& g, int seeds, const std::string& out) {
  const std::uint64_t first = g.seed.value_or(0);
  std::ofstream file;
  if (!out.empty()) {
    file.open(out);
    if (!file) throw Error(ErrorCode::IO, "cannot write " + out);
  }
  std::ostream& os = out.empty() ? std::cout : file;
  os << "op,max_rel_err,tol,status" << (seeds > 1 ? ",seed" : "") << "\n";
  int failures = 0;
  for (int k = 0; k < seeds; ++k) {
    for (const auto& row : run_gradcheck_suite(first + std::uint64_t(k))) {
      os << row.op << "," << format_double(row.max_rel_err) << "," << format_double(row.tol) << "," << row.status;
      if (seeds > 1) os << "," << first + std::uint64_t(k);
      os << "\n";
      if (row.status == "FAIL") {
        ++failures;
        std::cerr << "FAIL " << row.op << " seed " << first + std::uint64_t(k) << ": " << row.reason << "\n";
      } else if (row.status == "SKIPPED") {
        std::cerr << "SKIPPED " << row.op << ": " << row.reason << "\n";
      }
    }
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"symslice: planar reflective symmetry estimation on point clouds"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON run config (unknown keys are rejected)");
  app.add_option("--seed", g.seed, "overrides the config seed (data, init and augmentation)");
  app.add_option("--threads", g.threads, "worker threads; results do not depend on this");
  app.add_flag("--deterministic", g.deterministic, "force single-threaded execution");

  std::string data_dir, out_dir, checkpoint, split = "test", out, ply, gt_path, report, boxes, clouds, gt_boxes;
  bool export_clouds = false, partial = false, oracle = false, no_translate = false;
  int vehicles = 0, surface_samples = 0, seeds = 1;
  double yaw_sigma_deg = 5.0, center_sigma = 0.1;
  std::string input;

  auto* gen = app.add_subcommand("gen-data", "write a dataset manifest (and optionally clouds)");
  gen->add_option("--out", data_dir, "dataset root (default $SYMSLICE_DATA_DIR or ./data)");
  gen->add_flag("--export-clouds", export_clouds, "also write <id>.xyz and <id>.planes per entry");
  gen->add_option("--vehicles", vehicles, "also write a vehicle scene with this many boxes");
  gen->add_option("--yaw-sigma-deg", yaw_sigma_deg, "simulated detector yaw noise");
  gen->add_option("--center-sigma", center_sigma, "simulated detector center noise (m)");

  auto* tr = app.add_subcommand("train", "two-phase training; writes model.bin and train_log.csv");
  tr->add_option("--data", data_dir, "dataset root holding manifest.csv");
  tr->add_option("--out", out_dir, "output directory (overrides out_dir)");

  auto* ev = app.add_subcommand("eval", "per-object metrics CSV and a summary line");
  ev->add_option("--data", data_dir, "dataset root holding manifest.csv");
  ev->add_option("--checkpoint", checkpoint, "model checkpoint");
  ev->add_option("--split", split, "train, val or test")->capture_default_str();
  ev->add_flag("--partial", partial, "evaluate on partial views");
  ev->add_flag("--oracle", oracle, "use the ground-truth plane as the prediction");
  ev->add_option("--out", out, "metrics CSV path");

  auto* es = app.add_subcommand("estimate", "estimate the symmetry plane of one cloud file");
  es->add_option("input", input, "cloud file (.xyz, .obj, .ply)")->required();
  es->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  es->add_option("--ply", ply, "write the cloud plus the clipped plane as PLY");
  es->add_option("--gt", gt_path, "ground-truth planes, one 'nx ny nz d' per line");
  es->add_option("--surface-sample", surface_samples, "OBJ faces: sample this many surface points");

  auto* rf = app.add_subcommand("refine", "refine detected boxes with estimated symmetry planes");
  rf->add_option("--boxes", boxes, "detections CSV (id,cx,cy,cz,l,w,h,yaw)")->required();
  rf->add_option("--clouds", clouds, "directory with <id>.xyz (and <id>.planes for --oracle-planes)")->required();
  rf->add_option("--checkpoint", checkpoint, "model checkpoint");
  rf->add_option("--gt-boxes", gt_boxes, "ground-truth boxes CSV for the orientation report");
  rf->add_flag("--oracle-planes", oracle, "use <id>.planes instead of the network");
  rf->add_flag("--no-translate", no_translate, "only rotate boxes");
  rf->add_option("--out", out, "refined boxes CSV")->required();
  rf->add_option("--report", report, "orientation report CSV (needs --gt-boxes)");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable operator");
  gc->add_option("--seeds", seeds, "number of consecutive seeds starting at --seed")->capture_default_str();
  gc->add_option("--out", out, "CSV path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_data(g, data_dir, export_clouds, vehicles, yaw_sigma_deg, center_sigma);
    if (*tr) return cmd_train(g, data_dir, out_dir);
    if (*ev) return cmd_eval(g, data_dir, checkpoint, split, partial, oracle, out);
    if (*es) return cmd_estimate(input, checkpoint, ply, gt_path, surface_samples, g.seed.value_or(0));
    if (*rf) return cmd_refine(g, boxes, clouds, checkpoint, gt_boxes, oracle, !no_translate, out, report);
    if (*gc) return cmd_gradcheck(g, seeds, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::IO ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

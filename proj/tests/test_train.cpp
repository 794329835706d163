#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "symslice/train.hpp"
#include "test_support.hpp"

using namespace symslice;
namespace fs = std::filesystem;

namespace {

RunConfig micro_run(std::uint64_t seed = 1) {
  RunConfig rc;
  rc.model.grid = GridSpec{8, 8, 8, 4, 1};
  rc.model.enc_channels = {4, 4, 4, 4};
  rc.model.gru_hidden = 4;
  rc.model.decoder_channels = {4, 4, 4, 4, 3};
  rc.model.seed = seed;
  rc.epochs_phase1 = 2;
  rc.epochs_phase2 = 1;
  rc.batch_size = 4;
  rc.n_train = 20;
  rc.n_val = 4;
  rc.n_test = 4;
  rc.point_count = 256;
  rc.sde_samples = 100;
  rc.lr = 1e-2;
  rc.seed = seed;
  return rc;
}

std::vector<ManifestEntry> manifest_for(const RunConfig& rc) {
  return make_manifest(rc.n_train, rc.n_val, rc.n_test, rc.family_list(), rc.seed);
}

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(RunConfig, DefaultsAndJsonRoundTrip) {
  RunConfig rc;
  EXPECT_NO_THROW(rc.validate());
  EXPECT_EQ(rc.lr, 1e-3);
  EXPECT_EQ(rc.beta1, 0.9);
  EXPECT_EQ(rc.beta2, 0.999);
  EXPECT_EQ(rc.epsilon, 1e-8);
  EXPECT_EQ(rc.epochs_phase1, 30);
  EXPECT_EQ(rc.epochs_phase2, 30);
  EXPECT_EQ(rc.batch_size, 8);
  EXPECT_EQ(rc.model.grid, (GridSpec{32, 32, 32, 8, 2}));
  RunConfig m = micro_run();
  m.phase2_view = "partial";
  RunConfig back = run_config_from_json(run_config_to_json(m));
  EXPECT_EQ(run_config_to_json(back), run_config_to_json(m));
  RunConfig partial = run_config_from_json(nlohmann::json{{"lr", 0.5}, {"H", 16}});
  EXPECT_EQ(partial.lr, 0.5);
  EXPECT_EQ(partial.model.grid.H, 16);
  EXPECT_EQ(partial.batch_size, 8);
}

TEST(RunConfig, RejectsUnknownAndInvalid) {
  test::expect_error(ErrorCode::Config, [] { run_config_from_json(nlohmann::json{{"learning_rate", 1.0}}); });
  test::expect_error(ErrorCode::Config, [] { run_config_from_json(nlohmann::json{{"lr", "fast"}}); });
  test::expect_error(ErrorCode::Config, [] { run_config_from_json(nlohmann::json{{"phase2_view", "side"}}); });
  test::expect_error(ErrorCode::Config, [] { run_config_from_json(nlohmann::json{{"batch_size", 0}}); });
  test::expect_error(ErrorCode::InvalidSpec, [] { run_config_from_json(nlohmann::json{{"H", 30}}); });
  test::expect_error(ErrorCode::IO, [] { load_run_config("/nonexistent/run.json"); });
}

TEST(MakeSample, GroundTruthFollowsAugmentation) {
  RunConfig rc = micro_run();
  rc.noise_sigma = 0.0;
  for (auto fam : {ShapeFamily::mirrored_blob, ShapeFamily::bi_symmetric}) {
    ManifestEntry e{"x", fam, 77, "train"};
    Sample a = make_sample(e, rc, false, 3), b = make_sample(e, rc, false, 4);
    EXPECT_GT((a.cloud.points[0] - b.cloud.points[0]).norm(), 1e-6);  // different rotation per variant
    for (const auto& s : a.gt.planes) {
      GroundTruth single{{s}, a.gt.object_points};
      EXPECT_LT(sde(s, single, 256, 1), 1e-20);
      // the network input itself is mirrored too
      GroundTruth in{{s}, a.cloud.points};
      EXPECT_LT(sde(s, in, 256, 1), 1e-20);
    }
  }
}

TEST(MakeSample, PartialIsSubsetInSameFrame) {
  RunConfig rc = micro_run();
  rc.point_count = 2048;
  ManifestEntry e{"x", ShapeFamily::box_union, 5, "val"};
  Sample full = make_sample(e, rc, false, 0), part = make_sample(e, rc, true, 0);
  EXPECT_EQ(part.cloud.kind, CloudKind::partial);
  EXPECT_LT(part.cloud.points.size(), full.cloud.points.size());
  EXPECT_EQ(part.gt.object_points.size(), full.gt.object_points.size());
  KdIndex index(part.gt.object_points);
  for (const auto& p : part.cloud.points) {
    EXPECT_LT((part.gt.object_points[index.nearest(p)] - p).norm(), 1e-12);
    EXPECT_LE(p.cwiseAbs().maxCoeff(), 0.5 + 1e-12);
  }
  // both normalizations compose to a map back to the generator frame
  auto [raw, gt] = gen_shape(ShapeRecipe{e.family, rc.point_count, rc.noise_sigma, e.seed});
  (void)raw;
  Rotation r = random_rotation(mix_seed(e.seed, 0));
  for (std::size_t i = 0; i < 10; ++i) {
    Vec3 back = part.cloud.norm.invert(part.gt.object_points[i]);
    EXPECT_LT((back - r * gt.object_points[i]).norm(), 1e-12);
  }
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  ModelParams p;
  p.tensors.emplace("w", Tensor(Shape{3}, std::vector<double>{1.0, 2.0, 3.0}, true));
  auto g = p.tensors.at("w").mutable_grad();
  g[0] = 0.5;
  g[1] = -4.0;
  g[2] = 0.0;
  Adam adam(0.1, 0.9, 0.999, 1e-8);
  adam.step(p);
  // bias-corrected m = g, v = g^2, so the update is lr * g / (|g| + eps)
  auto w = p.at("w").data();
  EXPECT_NEAR(w[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(w[1], 2.0 + 0.1 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_EQ(w[2], 3.0);
}

TEST(Train, MicroSmokeRunLossDecreases) {
  RunConfig rc = micro_run();
  auto t0 = std::chrono::steady_clock::now();
  TrainResult res = train(rc, manifest_for(rc));
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 60.0);
  std::vector<double> train_loss;
  for (const auto& r : res.log)
    if (r.split == "train") train_loss.push_back(r.offsets_loss);
  ASSERT_EQ(train_loss.size(), 3u);
  EXPECT_LT(train_loss[2], train_loss[0]);
  ASSERT_EQ(res.log.size(), 6u);
  EXPECT_EQ(res.log[1].split, "val");
  EXPECT_EQ(res.log[3].phase, 1);
  EXPECT_EQ(res.log[4].phase, 2);
  EXPECT_TRUE(std::isfinite(res.log[5].sde));
}

TEST(Train, DeterministicLogsAndThreadCountIndependent) {
  RunConfig rc = micro_run(4);
  auto dir = temp_dir("symslice_train_det");
  auto m = manifest_for(rc);
  write_train_log((dir / "a.csv").string(), train(rc, m).log);
  write_train_log((dir / "b.csv").string(), train(rc, m).log);
  rc.threads = 3;
  write_train_log((dir / "c.csv").string(), train(rc, m).log);
  std::string a = slurp((dir / "a.csv").string());
  EXPECT_EQ(a.rfind("epoch,split,offsets_loss,gte,sde,angular_error\n", 0), 0u);
  EXPECT_EQ(a, slurp((dir / "b.csv").string()));
  EXPECT_EQ(a, slurp((dir / "c.csv").string()));
  fs::remove_all(dir);
}

TEST(Train, ZeroPhaseOneStartsInPhaseTwo) {
  RunConfig rc = micro_run();
  rc.epochs_phase1 = 0;
  rc.epochs_phase2 = 1;
  TrainResult res = train(rc, manifest_for(rc));
  ASSERT_FALSE(res.log.empty());
  EXPECT_EQ(res.log.front().epoch, 1);
  EXPECT_EQ(res.log.front().phase, 2);
}

TEST(Train, InitFromCheckpointContinues) {
  RunConfig rc = micro_run();
  auto dir = temp_dir("symslice_train_init");
  auto m = manifest_for(rc);
  rc.epochs_phase2 = 0;
  TrainResult first = train(rc, m);
  save_params((dir / "p1.bin").string(), first.params, rc.model);
  RunConfig cont = rc;
  cont.init_from = (dir / "p1.bin").string();
  cont.epochs_phase1 = 0;
  cont.epochs_phase2 = 0;
  TrainResult same = train(cont, m);
  for (const auto& [name, t] : first.params.tensors) {
    auto a = t.data(), b = same.params.at(name).data();
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin())) << name;
  }
  fs::remove_all(dir);
}

TEST(Train, NonFiniteLossNamesBatch) {
  RunConfig rc = micro_run();
  auto dir = temp_dir("symslice_train_nan");
  ModelParams p = init_params(rc.model);
  for (auto& v : p.tensors.at("decoder.4.b").mutable_data()) v = std::nan("");
  save_params((dir / "nan.bin").string(), p, rc.model);
  rc.init_from = (dir / "nan.bin").string();
  try {
    train(rc, manifest_for(rc));
    FAIL() << "expected NonFiniteLoss";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteLoss);
    EXPECT_NE(std::string(e.what()).find("batch 0"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(Evaluate, OracleOnNoiselessShapesIsExact) {
  RunConfig rc = micro_run();
  rc.noise_sigma = 0.0;
  auto rows = evaluate_oracle(rc, manifest_for(rc), "test", false);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.m.gte, 0.0);
    EXPECT_LT(r.m.sde, 1e-20);
  }
  Summary s = summarize(rows);
  EXPECT_EQ(s.count, 4u);
  EXPECT_EQ(s.median_gte, 0.0);
}

TEST(Evaluate, EmptySplitHasMarker) {
  Summary s = summarize({});
  EXPECT_EQ(s.count, 0u);
  EXPECT_NE(summary_line(s).find("no samples"), std::string::npos);
  RunConfig rc = micro_run();
  EXPECT_TRUE(evaluate_split(init_params(rc.model), rc, manifest_for(rc), "nope", false).empty());
}

TEST(Evaluate, MedianAndCsv) {
  EXPECT_EQ(median_of({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median_of({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_EQ(median_of({std::nan(""), 5.0}), 5.0);
  RunConfig rc = micro_run();
  auto rows = evaluate_split(init_params(rc.model), rc, manifest_for(rc), "val", false);
  ASSERT_EQ(rows.size(), 4u);
  auto dir = temp_dir("symslice_eval_csv");
  write_eval_csv((dir / "e.csv").string(), rows);
  CsvTable t = read_csv((dir / "e.csv").string());
  EXPECT_EQ(t.header, (std::vector<std::string>{"object_id", "gte", "sde", "angular_error_deg", "eigengap", "status"}));
  EXPECT_EQ(t.rows.size(), 4u);
  fs::remove_all(dir);
}

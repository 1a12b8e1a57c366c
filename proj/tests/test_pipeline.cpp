#include <doctest.h>

#include <atomic>

#include "test_util.hpp"
#include "tpose/config.hpp"
#include "tpose/gradcheck.hpp"
#include "tpose/io.hpp"
#include "tpose/pipeline.hpp"

using namespace tpose;
using namespace tpose::test;

namespace {

SceneConfig small_scene() {
  SceneConfig c;
  c.K = Intrinsics{320, 320, 159.5, 119.5, 320, 240};
  return c;
}

PipelineConfig small_pipeline() {
  PipelineConfig p;
  p.patch_size = 64;
  p.points = 256;
  p.embedding.random_width = 32;
  return p;
}

Dataset small_dataset(const TempDir& dir, std::size_t n) {
  const SceneConfig c = small_scene();
  std::vector<SceneFrame> frames;
  for (std::size_t i = 0; i < n; ++i) frames.push_back(generate_scene(c, frame_seed(3, i)));
  write_dataset(frames, dir.str(), 3, c.templates);
  return open_dataset(dir.str());
}

LinearDecoderModel random_model(const PipelineConfig& cfg) {
  LinearDecoderModel m(concat_width(cfg.embedding));
  m.weight() = MatX::Random(kDecoderOutputs, m.input_width()) * 0.01;
  return m;
}

}  // namespace

TEST_CASE("estimator kind names") {
  CHECK(parse_estimator_kind("oracle") == EstimatorKind::Oracle);
  CHECK(parse_estimator_kind("noisy") == EstimatorKind::Noisy);
  CHECK(std::string(estimator_kind_name(EstimatorKind::Noisy)) == "noisy");
  CHECK_THROWS_AS(parse_estimator_kind("gt"), Error);
}

TEST_CASE("prediction records round trip through JSON lines") {
  Rng rng(1);
  PredictionRecord ok;
  ok.frame = 4;
  ok.instance = 2;
  ok.category = CategoryLabel(5);
  ok.estimate = InstanceEstimate{random_pose(rng), random_scale(rng)};
  PredictionRecord failed;
  failed.frame = 5;
  failed.instance = 1;
  failed.error = "empty mask";
  const auto back = records_from_jsonl(records_to_jsonl({ok, failed}));
  REQUIRE(back.size() == 2);
  CHECK(back[0].frame == 4);
  CHECK(back[0].category == CategoryLabel(5));
  REQUIRE(back[0].estimate);
  CHECK((back[0].estimate->pose.translation - ok.estimate->pose.translation).norm() < 1e-15);
  CHECK((back[0].estimate->pose.rotation.matrix() - ok.estimate->pose.rotation.matrix()).norm() < 1e-12);
  CHECK(!back[1].estimate);
  CHECK(back[1].error == "empty mask");
  CHECK(!back[0].time_ms);
  CHECK(ok.to_json().find("time_ms") == std::string::npos);
}

TEST_CASE("malformed records raise SchemaMismatch") {
  for (const char* bad : {"{", "{\"frame\": 1}", "[1, 2]", "{\"frame\": 0, \"instance\": 1, \"category\": \"mug\", \"status\": \"ok\"}"}) {
    try {
      PredictionRecord::from_json(bad);
      FAIL("expected SchemaMismatch for " << bad);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::SchemaMismatch);
    }
  }
  CHECK(records_from_jsonl("").empty());
}

TEST_CASE("recover_estimate") {
  DecoderOutput out;
  out.axes = AxisPrediction(Vec3(1, 0.1, 0), 1.0, Vec3(0, 0, 1), 1.0);
  out.translation_residual = Vec3(0.01, 0, 0);
  out.scale_residual = Vec3(0, 0, -1.0);
  const InstanceEstimate e = recover_estimate(out, Vec3(0, 0, 1), Vec3(0.1, 0.1, 0.2), SymmetryClass::none());
  CHECK((e.pose.translation - Vec3(0.01, 0, 1)).norm() < 1e-15);
  CHECK(e.scale.extents().z() == 1e-3);
  const Mat3 R = e.pose.rotation.matrix();
  CHECK((R.transpose() * R - Mat3::Identity()).norm() < 1e-12);

  // Axial: z kept exactly, even when the decoded x is parallel to it.
  out.axes = AxisPrediction(Vec3(0, 0, 1), 1.0, Vec3(0, 0.6, 0.8), 1.0);
  const InstanceEstimate a = recover_estimate(out, Vec3::Zero(), Vec3::Ones(), SymmetryClass::axial());
  CHECK((a.pose.rotation.z_axis() - Vec3(0, 0.6, 0.8)).norm() < 1e-12);
  out.axes = AxisPrediction(Vec3(0, 0.6, 0.8), 1.0, Vec3(0, 0.6, 0.8), 1.0);
  const InstanceEstimate b = recover_estimate(out, Vec3::Zero(), Vec3::Ones(), SymmetryClass::axial());
  CHECK((b.pose.rotation.z_axis() - Vec3(0, 0.6, 0.8)).norm() < 1e-12);
}

TEST_CASE("parallel_for covers every index and rethrows the lowest failure") {
  std::vector<int> hits(100, 0);
  parallel_for(100, 4, [&](std::size_t i) { ++hits[i]; });
  for (int h : hits) CHECK(h == 1);
  try {
    parallel_for(50, 3, [](std::size_t i) {
      if (i == 7 || i == 30) throw Error(ErrorCode::InvalidArgument, std::to_string(i));
    });
    FAIL("expected a throw");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find('7') != std::string::npos);
  }
}

TEST_CASE("annotations scored against themselves give 100") {
  TempDir dir("pipe_self");
  const Dataset ds = small_dataset(dir, 4);
  std::vector<PredictionRecord> records;
  for (std::size_t i = 0; i < ds.frames.size(); ++i)
    for (const auto& a : load_frame(ds, i).instances) {
      PredictionRecord r;
      r.frame = i;
      r.instance = a.id;
      r.category = a.category;
      r.estimate = InstanceEstimate{a.pose, a.scale};
      records.push_back(r);
    }
  const PoseEvaluation ev = evaluate_predictions(ds, records_from_jsonl(records_to_jsonl(records)), {});
  CHECK(ev.missing == 0);
  for (double p : ev.report.mean.percent) CHECK(p == 100.0);

  records.pop_back();
  CHECK(evaluate_predictions(ds, records, {}).missing == 1);
  PredictionRecord stray;
  stray.frame = 99;
  records.push_back(stray);
  CHECK_THROWS_AS(evaluate_predictions(ds, records, {}), Error);
}

TEST_CASE("prediction is deterministic and independent of the job count") {
  TempDir dir("pipe_det");
  const Dataset ds = small_dataset(dir, 3);
  const PipelineConfig cfg = small_pipeline();
  const LinearDecoderModel m = random_model(cfg);
  const auto a = records_to_jsonl(predict_dataset(ds, m, cfg, {}, 1));
  const auto b = records_to_jsonl(predict_dataset(ds, m, cfg, {}, 3));
  CHECK(a == b);
  CHECK(!a.empty());
}

TEST_CASE("replaying a dump reproduces the predictions") {
  TempDir dir("pipe_dump");
  const Dataset ds = small_dataset(dir, 2);
  const PipelineConfig cfg = small_pipeline();
  const LinearDecoderModel m = random_model(cfg);
  PredictOptions opt;
  opt.dump_directory = dir / "dump";
  const auto direct = predict_dataset(ds, m, cfg, opt, 1);
  CHECK(std::filesystem::exists(dir / "dump/frame_000000/inst_01_cloud.csv"));
  const auto replay = predict_from_dump(dir / "dump", ds.K, m, ds.priors, cfg);
  CHECK(records_to_jsonl(replay) == records_to_jsonl(direct));
}

TEST_CASE("stage evaluation and the grid") {
  TempDir dir("pipe_grid");
  const Dataset ds = small_dataset(dir, 2);
  PipelineConfig cfg = small_pipeline();
  const StageEvaluation oracle = evaluate_stages(ds, cfg, 1);
  CHECK(oracle.depth.mae < 5e-4);
  CHECK(oracle.normals.mae < 1e-3);
  cfg.depth = cfg.normals = EstimatorKind::Noisy;
  const StageEvaluation noisy = evaluate_stages(ds, cfg, 1);
  CHECK(noisy.depth.mae > 0.02);
  CHECK(noisy.normals.mae > 0.1);

  const auto grid = evaluate_grid(ds, random_model(cfg), cfg, {}, 1);
  REQUIRE(grid.size() == 4);
  CHECK(grid[0].label() == "GT/GT");
  CHECK(grid[1].label() == "GT/EST");
  CHECK(grid[2].label() == "EST/GT");
  CHECK(grid[3].label() == "EST/EST");
  CHECK(grid_to_csv(grid).find("\nEST,EST,") != std::string::npos);
  CHECK(grid_to_markdown(grid).find("| GT | GT |") != std::string::npos);
}

TEST_CASE("config print and apply round trip") {
  HarnessConfig a;
  a.set("seed", "99");
  a.set("estimator.depth", "noisy");
  a.set("loss.alpha", "-3.5");
  a.set("camera.fx", "612.25");
  a.set("train.precondition", "false");
  HarnessConfig b;
  b.apply(a.print());
  CHECK(b.print() == a.print());
  CHECK(b.hash() == a.hash());
  CHECK(b.seed == 99);
  CHECK(b.pipeline.depth == EstimatorKind::Noisy);
  CHECK(b.train.loss.alpha == -3.5);
  CHECK(b.scene.K.fx == 612.25);
  CHECK(!b.train.precondition);
  CHECK(HarnessConfig{}.hash() != a.hash());
  CHECK(HarnessConfig::keys().size() > 40);
}

TEST_CASE("config errors") {
  HarnessConfig c;
  CHECK_THROWS_AS(c.set("no.such.key", "1"), Error);
  CHECK_THROWS_AS(c.set("seed", "abc"), Error);
  CHECK_THROWS_AS(c.set("train.precondition", "maybe"), Error);
  CHECK_THROWS_AS(c.apply("seed 4\n"), Error);
  c.apply("# comment\n\nseed = 4  # trailing\n");
  CHECK(c.seed == 4);
  c.set("loss.alpha", "1.0");
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_THROWS_AS(HarnessConfig::load("/nonexistent/x.cfg"), Error);
}

TEST_CASE("gradcheck passes and catches an injected fault") {
  GradcheckOptions opt;
  const auto results = run_gradcheck(opt);
  CHECK(results.size() >= 7);
  for (const auto& r : results) {
    CHECK(r.trials >= 100);
    CHECK_MESSAGE(r.passed(), r.name << " worst " << r.worst);
  }
  opt.fault = InjectedFault::AxisSign;
  bool caught = false;
  for (const auto& r : run_gradcheck(opt))
    if (r.name == "axis_loss") caught = !r.passed();
  CHECK(caught);
  CHECK(gradcheck_summary(results).find("axis_loss") != std::string::npos);
}

#include <doctest.h>

#include <fstream>

#include "test_util.hpp"
#include "tpose/estimators.hpp"
#include "tpose/io.hpp"
#include "tpose/pipeline.hpp"

using namespace tpose;
using namespace tpose::test;

namespace {

SceneFrame test_frame(std::uint64_t seed) {
  SceneConfig c;
  c.K = Intrinsics{320, 320, 159.5, 119.5, 320, 240};
  return generate_scene(c, seed);
}

PipelineConfig small_pipeline() {
  PipelineConfig p;
  p.patch_size = 64;
  p.points = 256;
  p.embedding.random_width = 32;
  return p;
}

std::vector<TrainingSample> samples_from(const std::vector<SceneFrame>& frames, const PipelineConfig& cfg) {
  std::vector<TrainingSample> out;
  for (const auto& f : frames) {
    const auto depth = oracle_depth_completer(f);
    const auto normals = oracle_normal_estimator(f);
    for (const auto& a : f.instances) {
      const InstanceStages st = run_front_end(f, a, *depth, *normals, cfg);
      TrainingSample s;
      s.pooled = st.pooled;
      s.translation_prior = st.translation_prior;
      s.scale_prior = a.scale.extents() * 1.1;
      s.target.pose = a.pose;
      s.target.scale = a.scale.extents();
      s.target.symmetry = a.symmetry;
      out.push_back(std::move(s));
    }
  }
  return out;
}

GeneralizedPointCloud random_cloud(Rng& rng, std::size_t n) {
  GeneralizedPointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    std::array<double, kFeatureWidth> row{};
    for (double& x : row) x = rng.uniform();
    row[kDepth] = rng.uniform(0.5, 1.5);
    c.rows.push_back(row);
    c.source_pixels.push_back({static_cast<int>(rng.below(320)), static_cast<int>(rng.below(240))});
    c.patch_indices.push_back(static_cast<std::uint32_t>(i));
  }
  return c;
}

}  // namespace

TEST_CASE("oracle completer returns gt inside the mask and raw outside") {
  const SceneFrame f = test_frame(1);
  const auto c = oracle_depth_completer(f);
  const DepthMap& d = c->frame_depth();
  for (std::size_t i = 0; i < d.size(); ++i)
    CHECK(d.depth[i] == (f.transparency.bits[i] ? f.depth_gt.depth[i] : f.depth_raw.depth[i]));
  const auto n = oracle_normal_estimator(f);
  CHECK(n->frame_normals().normals == f.normals_gt.normals);
}

TEST_CASE("noisy completer without bias has half-normal errors") {
  const SceneFrame f = test_frame(2);
  NoisyDepthConfig cfg;
  cfg.sigma = 0.04;
  cfg.bias = 0.0;
  const auto c = noisy_depth_completer(f, cfg, 7);
  const DepthMap& d = c->frame_depth();
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!f.transparency.bits[i]) {
      CHECK(d.depth[i] == f.depth_raw.depth[i]);
      continue;
    }
    CHECK(d.depth[i] >= 0.01);
    sum += std::abs(d.depth[i] - f.depth_gt.depth[i]);
    ++n;
  }
  REQUIRE(n > 2000);
  CHECK(sum / n == doctest::Approx(0.04 * std::sqrt(2.0 / kPi)).epsilon(0.05));
  CHECK(noisy_depth_completer(f, cfg, 7)->frame_depth().depth == d.depth);
  CHECK(noisy_depth_completer(f, cfg, 8)->frame_depth().depth != d.depth);
}

TEST_CASE("vMF draws concentrate as expected") {
  Rng rng(3);
  const Vec3 mean = Vec3(1, 2, -2).normalized();
  for (double kappa : {5.0, 88.3, 1000.0}) {
    double sum_cos = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      const Vec3 s = sample_vmf(mean, kappa, rng);
      CHECK(std::abs(s.norm() - 1.0) < 1e-12);
      sum_cos += s.dot(mean);
    }
    // E[cos] = coth(kappa) - 1 / kappa.
    const double expect = 1.0 / std::tanh(kappa) - 1.0 / kappa;
    CHECK(sum_cos / n == doctest::Approx(expect).epsilon(5e-3));
  }
}

TEST_CASE("noisy normals stay unit and face the camera") {
  const SceneFrame f = test_frame(4);
  const auto est = noisy_normal_estimator(f, 88.3, 11);
  const NormalMap& n = est->frame_normals();
  double sum = 0;
  std::size_t count = 0;
  for (int v = 0; v < f.K.height; ++v)
    for (int u = 0; u < f.K.width; ++u) {
      if (!f.normals_gt.valid(u, v)) {
        CHECK(!n.valid(u, v));
        continue;
      }
      CHECK(std::abs(n.at(u, v).norm() - 1.0) < 1e-12);
      CHECK(n.at(u, v).dot(ray_direction(f.K, u, v)) <= 0.0);
      if (f.transparency.at(u, v)) {
        sum += std::acos(std::clamp(n.at(u, v).dot(f.normals_gt.at(u, v)), -1.0, 1.0));
        ++count;
      }
    }
  CHECK(sum / count == doctest::Approx(0.1334).epsilon(0.05));
  CHECK(noisy_normal_estimator(f, 0.0, 11)->frame_normals().normals == f.normals_gt.normals);
}

TEST_CASE("embedding shapes and statistics") {
  Rng rng(5);
  const Intrinsics K{320, 320, 159.5, 119.5, 320, 240};
  const GeneralizedPointCloud cloud = random_cloud(rng, 100);
  EmbeddingConfig cfg;
  cfg.random_width = 16;
  const Embedding e = reference_embedding(cloud, CategoryLabel(3), K, cfg);
  CHECK(e.per_point.rows() == 100);
  CHECK(e.per_point.cols() == kPointFeatureWidth);
  CHECK(e.global.size() == global_width(cfg));
  CHECK(global_width(cfg) == 3 * kPointFeatureWidth + 2 * 16);
  CHECK(e.concat_width() == concat_width(cfg));
  CHECK(e.one_hot[3] == 1.0);
  // Centered coordinates.
  for (int c = kFeatureWidth; c < kPointFeatureWidth; ++c) CHECK(std::abs(e.per_point.col(c).mean()) < 1e-12);
  // Mean block equals column means, max block the column maxima.
  for (int c = 0; c < kPointFeatureWidth; ++c) {
    CHECK(e.global[c] == doctest::Approx(e.per_point.col(c).mean()).epsilon(1e-12));
    CHECK(e.global[kPointFeatureWidth + c] == e.per_point.col(c).maxCoeff());
  }
  VecX mean = VecX::Zero(e.concat_width());
  for (int p = 0; p < 100; ++p) mean += e.concat_row(p);
  CHECK((mean / 100.0 - e.pooled()).norm() < 1e-12);
  const Embedding again = reference_embedding(cloud, CategoryLabel(3), K, cfg);
  CHECK(again.pooled() == e.pooled());
  CHECK_THROWS_AS(reference_embedding(GeneralizedPointCloud{}, CategoryLabel(0), K, cfg), Error);
}

TEST_CASE("zero decoder decodes canonical axes") {
  LinearDecoderModel m(20);
  CHECK(m.parameter_count() == 14 * 21);
  const DecoderOutput out = m.decode(VecX::Random(20));
  CHECK(out.translation_residual == Vec3::Zero());
  CHECK(out.axes.a_x == Vec3::UnitX());
  CHECK(out.axes.a_z == Vec3::UnitZ());
  CHECK(out.axes.c_x == doctest::Approx(std::log(2.0)));
  CHECK(out.scale_residual == Vec3::Zero());
  try {
    m.decode(VecX::Zero(19));
    FAIL("expected WidthMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::WidthMismatch);
  }
}

TEST_CASE("standardization") {
  LinearDecoderModel m(3);
  std::vector<VecX> xs{VecX::Constant(3, 1.0), VecX::Constant(3, 3.0)};
  xs[0][2] = xs[1][2] = 5.0;
  m.set_standardization(xs);
  CHECK(m.feature_mean()[0] == 2.0);
  CHECK(m.feature_scale()[0] == 1.0);
  CHECK(m.feature_scale()[2] == 1.0);
  CHECK(m.standardize(xs[1])[0] == 1.0);
  CHECK(m.standardize(xs[1])[2] == 0.0);
}

TEST_CASE("softplus") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)));
  CHECK(softplus(50.0) == doctest::Approx(50.0));
  CHECK(softplus(-50.0) > 0.0);
  CHECK(std::isfinite(softplus(1000.0)));
}

TEST_CASE("decoder output gradient matches finite differences") {
  Rng rng(6);
  LinearDecoderModel m(8);
  m.weight() = MatX::Random(kDecoderOutputs, 8) * 0.3;
  m.bias() = VecX::Random(kDecoderOutputs) * 0.3;
  const LossConfig loss;
  for (int trial = 0; trial < 20; ++trial) {
    TrainingSample s;
    s.pooled = VecX::Random(8);
    s.translation_prior = random_vec(rng, 0.1) + Vec3(0, 0, 1);
    s.scale_prior = Vec3(0.1, 0.1, 0.2);
    s.target.pose = random_pose(rng);
    s.target.scale = Vec3(0.1, 0.12, 0.2);
    MatX gw;
    VecX gb;
    sample_loss(m, s, loss, &gw, &gb);
    const double h = 1e-6;
    VecX num(kDecoderOutputs);
    for (int k = 0; k < kDecoderOutputs; ++k) {
      LinearDecoderModel p = m, q = m;
      p.bias()[k] += h;
      q.bias()[k] -= h;
      num[k] = (sample_loss(p, s, loss, nullptr, nullptr).total - sample_loss(q, s, loss, nullptr, nullptr).total) / (2 * h);
    }
    CHECK((num - gb).norm() <= 1e-4 * std::max(num.norm(), gb.norm()) + 1e-12);
  }
}

TEST_CASE("training: lr 0 leaves the parameters unchanged, training is deterministic") {
  const PipelineConfig cfg = small_pipeline();
  const auto data = samples_from({test_frame(7), test_frame(8)}, cfg);
  REQUIRE(data.size() >= 2);
  LinearDecoderModel base(concat_width(cfg.embedding));
  std::vector<VecX> xs;
  for (const auto& s : data) xs.push_back(s.pooled);
  base.set_standardization(xs);

  TrainConfig frozen;
  frozen.learning_rate = 0.0;
  frozen.epochs = 5;
  LinearDecoderModel a = base;
  const TrainResult r = train_reference(a, data, frozen);
  CHECK(r.curve.size() == 5);
  CHECK(a.weight() == base.weight());
  CHECK(a.bias() == base.bias());

  TrainConfig t;
  t.epochs = 30;
  t.batch_size = 2;
  LinearDecoderModel b = base, c = base;
  train_reference(b, data, t);
  train_reference(c, data, t);
  CHECK(b.weight() == c.weight());
  CHECK(b.bias() == c.bias());
  CHECK(b.weight() != base.weight());
}

TEST_CASE("training overfits a single sample") {
  const PipelineConfig cfg = small_pipeline();
  auto data = samples_from({test_frame(9)}, cfg);
  data.resize(1);
  LinearDecoderModel m(concat_width(cfg.embedding));
  m.set_standardization({data[0].pooled});
  TrainConfig t;
  t.epochs = 1000;
  const TrainResult r = train_reference(m, data, t);
  CHECK(r.curve.back().total < 0.05 * r.curve.front().total);
  const DecoderOutput out = m.decode(data[0].pooled);
  const InstanceEstimate est =
      recover_estimate(out, data[0].translation_prior, data[0].scale_prior, data[0].target.symmetry);
  CHECK((est.pose.translation - data[0].target.pose.translation).norm() < 0.01);
  CHECK(rotation_error(est.pose.rotation, data[0].target.pose.rotation, data[0].target.symmetry) < 5.0);
}

TEST_CASE("diverging training throws") {
  const PipelineConfig cfg = small_pipeline();
  const auto data = samples_from({test_frame(10)}, cfg);
  LinearDecoderModel m(concat_width(cfg.embedding));
  TrainConfig t;
  t.learning_rate = 1e300;
  t.precondition = false;
  t.lr_decay = 1.0;
  t.epochs = 50;
  try {
    train_reference(m, data, t);
    FAIL("expected DivergedLoss");
  } catch (const Error& e) {
    CHECK_MESSAGE(e.code() == ErrorCode::DivergedLoss, std::string(e.what()));
  }
}

TEST_CASE("checkpoint round trip") {
  TempDir dir("ckpt");
  CheckpointInfo info;
  info.embedding.random_width = 0;
  const int w = concat_width(info.embedding);
  LinearDecoderModel m(w);
  m.weight() = MatX::Random(kDecoderOutputs, w);
  m.bias() = VecX::Random(kDecoderOutputs);
  m.set_standardization(VecX::Random(w), VecX::Constant(w, 2.0));
  info.seed = 42;
  info.config_hash = "0123456789abcdef";
  save_checkpoint(dir / "a.ckpt", m, info);
  CheckpointInfo back_info;
  const LinearDecoderModel back = load_checkpoint(dir / "a.ckpt", &back_info);
  CHECK(back_info.seed == 42);
  CHECK(back_info.config_hash == info.config_hash);
  CHECK(back_info.embedding.random_width == 0);
  CHECK((back.weight() - m.weight()).cwiseAbs().maxCoeff() < 1e-6);
  save_checkpoint(dir / "b.ckpt", back, back_info);
  CHECK(io::read_text(dir / "a.ckpt") == io::read_text(dir / "b.ckpt"));

  std::ofstream(dir / "bad.ckpt") << "NOTACKPT";
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), Error);
  try {
    load_checkpoint(dir / "missing.ckpt");
    FAIL("expected IoFailure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IoFailure);
  }
}

TEST_CASE("swapping the depth completer changes only depth-derived columns") {
  const SceneFrame f = test_frame(12);
  const PipelineConfig cfg = small_pipeline();
  const auto oracle = oracle_depth_completer(f);
  const auto noisy = noisy_depth_completer(f, NoisyDepthConfig{}, 3);
  const auto normals = oracle_normal_estimator(f);
  const auto& a = f.instances.front();
  const InstanceStages x = run_front_end(f, a, *oracle, *normals, cfg);
  const InstanceStages y = run_front_end(f, a, *noisy, *normals, cfg);
  REQUIRE(x.cloud.size() == y.cloud.size());
  CHECK(x.cloud.patch_indices == y.cloud.patch_indices);
  bool depth_differs = false;
  for (std::size_t i = 0; i < x.cloud.size(); ++i)
    for (int c = 0; c < kFeatureWidth; ++c) {
      if (c == kDepth) depth_differs |= x.cloud.rows[i][c] != y.cloud.rows[i][c];
      else CHECK(x.cloud.rows[i][c] == y.cloud.rows[i][c]);
    }
  CHECK(depth_differs);
  CHECK(x.translation_prior != y.translation_prior);
}

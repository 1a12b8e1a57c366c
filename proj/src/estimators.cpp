#include "tpose/estimators.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <optional>

#include <Eigen/Cholesky>

#include <json.hpp>

#include "tpose/io.hpp"

namespace tpose {

namespace {

class MapDepthCompleter final : public DepthCompleter {
 public:
  MapDepthCompleter(std::string name, DepthMap map) : name_(std::move(name)), map_(std::move(map)) {}
  std::string name() const override { return name_; }
  const DepthMap& frame_depth() const override { return map_; }

 private:
  std::string name_;
  DepthMap map_;
};

class MapNormalEstimator final : public NormalEstimator {
 public:
  MapNormalEstimator(std::string name, NormalMap map) : name_(std::move(name)), map_(std::move(map)) {}
  std::string name() const override { return name_; }
  const NormalMap& frame_normals() const override { return map_; }

 private:
  std::string name_;
  NormalMap map_;
};

double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

/// Fixed random projection of the point rows.
struct RandomBlock {
  MatX A;  // width × kPointFeatureWidth
  VecX c;
};

RandomBlock random_block(const EmbeddingConfig& config) {
  RandomBlock rb;
  rb.A.resize(config.random_width, kPointFeatureWidth);
  rb.c.resize(config.random_width);
  Rng rng(config.seed);
  const double s = 1.0 / std::sqrt(static_cast<double>(kPointFeatureWidth));
  for (int i = 0; i < config.random_width; ++i) {
    for (int j = 0; j < kPointFeatureWidth; ++j) rb.A(i, j) = s * rng.normal();
    rb.c(i) = rng.normal();
  }
  return rb;
}

/// d loss / d y from the loss gradient at the prediction built from y.
VecX output_gradient(const VecX& y, const PoseLossGradient& g) {
  VecX dy = VecX::Zero(kDecoderOutputs);
  dy.segment<3>(kSlotT) = g.translation;
  dy.segment<3>(kSlotS) = g.scale;
  const Vec3 rx = y.segment<3>(kSlotAx);
  const Vec3 rz = y.segment<3>(kSlotAz);
  const Vec3 ax = rx.normalized();
  const Vec3 az = rz.normalized();
  dy.segment<3>(kSlotAx) = (g.axis_x - ax * ax.dot(g.axis_x)) / rx.norm();
  dy.segment<3>(kSlotAz) = (g.axis_z - az * az.dot(g.axis_z)) / rz.norm();
  dy(kSlotCx) = g.conf_x * sigmoid(y(kSlotCx));
  dy(kSlotCz) = g.conf_z * sigmoid(y(kSlotCz));
  return dy;
}

DecoderOutput output_from_affine(const VecX& y) {
  DecoderOutput out;
  out.translation_residual = y.segment<3>(kSlotT);
  out.axes = AxisPrediction(y.segment<3>(kSlotAx), softplus(y(kSlotCx)), y.segment<3>(kSlotAz), softplus(y(kSlotCz)));
  out.scale_residual = y.segment<3>(kSlotS);
  return out;
}

/// Loss at affine output y and, optionally, d loss / d y.
LossReport output_loss(const VecX& y, const TrainingSample& s, const LossConfig& loss, VecX* dy) {
  const PosePrediction pred = to_pose_prediction(output_from_affine(y), s.translation_prior, s.scale_prior);
  LossReport r = total_pose_loss(pred, s.target, loss, dy != nullptr);
  if (dy) *dy = output_gradient(y, *r.gradient);
  return r;
}

void accumulate(LossReport& sum, const LossReport& r) {
  sum.translation += r.translation;
  sum.axis_x += r.axis_x;
  sum.axis_z += r.axis_z;
  sum.angular += r.angular;
  sum.conf_x += r.conf_x;
  sum.conf_z += r.conf_z;
  sum.scale += r.scale;
  sum.total += r.total;
}

void scale_report(LossReport& r, double k) {
  r.translation *= k;
  r.axis_x *= k;
  r.axis_z *= k;
  r.angular *= k;
  r.conf_x *= k;
  r.conf_z *= k;
  r.scale *= k;
  r.total *= k;
}

constexpr char kMagic[8] = {'T', 'P', 'O', 'S', 'E', 'C', 'K', '1'};

void put_floats(std::string& buf, const double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const float f = static_cast<float>(data[i]);
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int b = 0; b < 4; ++b) buf.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
  }
}

void get_floats(const std::string& buf, std::size_t& pos, double* out, std::size_t n) {
  if (pos + 4 * n > buf.size()) throw Error(ErrorCode::SchemaMismatch, "checkpoint payload truncated");
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + b])) << (8 * b);
    out[i] = static_cast<double>(std::bit_cast<float>(bits));
    pos += 4;
  }
}

}  // namespace

DepthMap DepthCompleter::complete(const PatchBundle& b) const {
  const DepthMap& full = frame_depth();
  DepthMap out(b.size, b.size);
  for (std::size_t i = 0; i < out.size(); ++i) out.depth[i] = full.at(b.source_u[i], b.source_v[i]);
  return out;
}

NormalMap NormalEstimator::estimate(const PatchBundle& b) const {
  const NormalMap& full = frame_normals();
  NormalMap out(b.size, b.size);
  for (std::size_t i = 0; i < out.size(); ++i) out.normals[i] = full.at(b.source_u[i], b.source_v[i]);
  return out;
}

std::unique_ptr<DepthCompleter> oracle_depth_completer(const SceneFrame& frame) {
  DepthMap d = frame.depth_raw;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (frame.transparency.bits[i]) d.depth[i] = frame.depth_gt.depth[i];
  return std::make_unique<MapDepthCompleter>("oracle", std::move(d));
}

std::unique_ptr<DepthCompleter> noisy_depth_completer(const SceneFrame& frame, const NoisyDepthConfig& config,
                                                      std::uint64_t seed) {
  if (!(config.sigma >= 0.0) || !(config.bias >= 0.0) || !(config.bias_period > 0.0))
    throw Error(ErrorCode::InvalidArgument, "noisy depth needs sigma >= 0, bias >= 0, period > 0");
  Rng rng(seed);
  const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double k = 2.0 * std::numbers::pi / config.bias_period;
  const double ku = k * std::cos(dir), kv = k * std::sin(dir);

  DepthMap d = frame.depth_raw;
  for (int v = 0; v < d.height; ++v)
    for (int u = 0; u < d.width; ++u) {
      const std::size_t i = d.index(u, v);
      if (!frame.transparency.bits[i]) continue;
      const double noise = rng.normal();
      const double bias = config.bias * std::sin(ku * u + kv * v + phase);
      d.depth[i] = std::max(0.01, frame.depth_gt.depth[i] + bias + config.sigma * noise);
    }
  return std::make_unique<MapDepthCompleter>("noisy", std::move(d));
}

std::unique_ptr<NormalEstimator> oracle_normal_estimator(const SceneFrame& frame) {
  return std::make_unique<MapNormalEstimator>("oracle", frame.normals_gt);
}

Vec3 sample_vmf(const Vec3& mean, double kappa, Rng& rng) {
  // Wood (1994) specialized to the 2-sphere, where the cosine has a closed
  // form inverse CDF.
  const double xi = rng.uniform();
  const double w = 1.0 + std::log(xi + (1.0 - xi) * std::exp(-2.0 * kappa)) / kappa;
  const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const Vec3 e1 = mean.unitOrthogonal();
  const Vec3 e2 = mean.cross(e1);
  const double s = std::sqrt(std::max(0.0, 1.0 - w * w));
  return (w * mean + s * (std::cos(phi) * e1 + std::sin(phi) * e2)).normalized();
}

std::unique_ptr<NormalEstimator> noisy_normal_estimator(const SceneFrame& frame, double kappa, std::uint64_t seed) {
  NormalMap n = frame.normals_gt;
  if (kappa > 0.0) {
    Rng rng(seed);
    const Intrinsics& K = frame.K;
    for (int v = 0; v < n.height; ++v)
      for (int u = 0; u < n.width; ++u) {
        Vec3& p = n.at(u, v);
        if (p.isZero(0.0)) continue;
        p = sample_vmf(p, kappa, rng);
        const Vec3 ray = Vec3((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0).normalized();
        const double d = p.dot(ray);
        if (d > 0.0) p = (p - 2.0 * d * ray).normalized();
      }
  }
  return std::make_unique<MapNormalEstimator>("noisy", std::move(n));
}

VecX Embedding::concat_row(int p) const {
  VecX row(concat_width());
  row << per_point.row(p).transpose(), global, Eigen::Map<const VecX>(one_hot.data(), kNumCategories);
  return row;
}

VecX Embedding::pooled() const {
  VecX row(concat_width());
  row << per_point.colwise().mean().transpose(), global, Eigen::Map<const VecX>(one_hot.data(), kNumCategories);
  return row;
}

int global_width(const EmbeddingConfig& config) { return 3 * kPointFeatureWidth + 2 * config.random_width; }

int concat_width(const EmbeddingConfig& config) {
  return kPointFeatureWidth + global_width(config) + kNumCategories;
}

Embedding reference_embedding(const GeneralizedPointCloud& cloud, const CategoryLabel& category, const Intrinsics& K,
                              const EmbeddingConfig& config) {
  if (cloud.empty()) throw Error(ErrorCode::EmptyCloud, "embedding of an empty cloud");
  if (config.random_width < 0) throw Error(ErrorCode::InvalidArgument, "random width must be >= 0");
  const int n = static_cast<int>(cloud.size());

  Embedding e;
  e.per_point.resize(n, kPointFeatureWidth);
  const Vec3 centroid = translation_prior(cloud, K);
  for (int p = 0; p < n; ++p) {
    for (int j = 0; j < kFeatureWidth; ++j) e.per_point(p, j) = cloud.rows[p][j];
    const auto& px = cloud.source_pixels[p];
    const Vec3 x = backproject(K, px[0], px[1], cloud.depth(p)) - centroid;
    e.per_point.block<1, 3>(p, kFeatureWidth) = x.transpose();
  }

  const VecX mean = e.per_point.colwise().mean().transpose();
  const VecX max = e.per_point.colwise().maxCoeff().transpose();
  const VecX var = (e.per_point.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();

  e.global.resize(global_width(config));
  e.global.segment(0, kPointFeatureWidth) = mean;
  e.global.segment(kPointFeatureWidth, kPointFeatureWidth) = max;
  e.global.segment(2 * kPointFeatureWidth, kPointFeatureWidth) = var;

  if (config.random_width > 0) {
    const RandomBlock rb = random_block(config);
    MatX x = e.per_point;
    x.rightCols<3>() *= 10.0;
    const MatX h = ((x * rb.A.transpose()).rowwise() + rb.c.transpose()).cwiseMax(0.0);
    e.global.segment(3 * kPointFeatureWidth, config.random_width) = h.colwise().maxCoeff().transpose();
    e.global.segment(3 * kPointFeatureWidth + config.random_width, config.random_width) =
        h.colwise().mean().transpose();
  }
  e.one_hot = category.one_hot();
  return e;
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

LinearDecoderModel::LinearDecoderModel(int input_width)
    : weight_(MatX::Zero(kDecoderOutputs, input_width)),
      bias_(VecX::Zero(kDecoderOutputs)),
      mean_(VecX::Zero(input_width)),
      scale_(VecX::Ones(input_width)) {
  if (input_width <= 0) throw Error(ErrorCode::InvalidArgument, "decoder input width must be positive");
}

void LinearDecoderModel::set_standardization(const std::vector<VecX>& inputs) {
  if (inputs.empty()) throw Error(ErrorCode::InvalidArgument, "standardization needs samples");
  const int d = input_width();
  VecX mean = VecX::Zero(d);
  for (const VecX& x : inputs) {
    if (x.size() != d) throw Error(ErrorCode::WidthMismatch, "sample width differs from the decoder");
    mean += x;
  }
  mean /= static_cast<double>(inputs.size());
  VecX var = VecX::Zero(d);
  for (const VecX& x : inputs) var += (x - mean).array().square().matrix();
  var /= static_cast<double>(inputs.size());
  VecX scale = var.cwiseSqrt();
  for (int i = 0; i < d; ++i)
    if (!(scale(i) > 1e-9)) scale(i) = 1.0;
  set_standardization(std::move(mean), std::move(scale));
}

void LinearDecoderModel::set_standardization(VecX mean, VecX scale) {
  if (mean.size() != input_width() || scale.size() != input_width())
    throw Error(ErrorCode::WidthMismatch, "standardization width differs from the decoder");
  mean_ = std::move(mean);
  scale_ = std::move(scale);
}

VecX LinearDecoderModel::standardize(const VecX& pooled) const {
  if (pooled.size() != input_width())
    throw Error(ErrorCode::WidthMismatch, "decoder expects width " + std::to_string(input_width()) + ", got " +
                                              std::to_string(pooled.size()));
  return (pooled - mean_).cwiseQuotient(scale_);
}

VecX LinearDecoderModel::affine(const VecX& pooled) const {
  VecX y = weight_ * standardize(pooled) + bias_;
  y(kSlotAx) += 1.0;
  y(kSlotAz + 2) += 1.0;
  return y;
}

DecoderOutput LinearDecoderModel::decode(const VecX& pooled) const { return output_from_affine(affine(pooled)); }

PosePrediction to_pose_prediction(const DecoderOutput& out, const Vec3& translation_prior, const Vec3& scale_prior) {
  PosePrediction p;
  p.translation = apply_translation_residual(translation_prior, out.translation_residual);
  p.axis_x = out.axes.a_x;
  p.conf_x = out.axes.c_x;
  p.axis_z = out.axes.a_z;
  p.conf_z = out.axes.c_z;
  p.scale = scale_prior + out.scale_residual;
  return p;
}

VecX decoder_output_gradient(const LinearDecoderModel& model, const VecX& pooled, const PoseLossGradient& g) {
  return output_gradient(model.affine(pooled), g);
}

LossReport sample_loss(const LinearDecoderModel& model, const TrainingSample& s, const LossConfig& loss, MatX* grad_w,
                       VecX* grad_b) {
  const VecX z = model.standardize(s.pooled);
  const VecX y = model.affine(s.pooled);
  VecX dy;
  const bool want = grad_w || grad_b;
  LossReport r = output_loss(y, s, loss, want ? &dy : nullptr);
  if (grad_w) *grad_w = dy * z.transpose();
  if (grad_b) *grad_b = dy;
  return r;
}

TrainResult train_reference(LinearDecoderModel& model, const std::vector<TrainingSample>& data,
                            const TrainConfig& config, const std::function<void(int, const LossReport&)>& on_epoch) {
  if (data.empty()) throw Error(ErrorCode::InvalidArgument, "training set is empty");
  if (config.epochs < 0 || !(config.learning_rate >= 0.0) || !(config.lr_decay > 0.0))
    throw Error(ErrorCode::InvalidArgument, "training needs epochs >= 0, lr >= 0 and lr_decay > 0");
  config.loss.validate();

  const int n = static_cast<int>(data.size());
  const int d = model.input_width();
  MatX Z(n, d);
  for (int i = 0; i < n; ++i) Z.row(i) = model.standardize(data[i].pooled).transpose();

  std::optional<Eigen::LDLT<MatX>> precond;
  if (config.precondition) {
    if (!(config.ridge > 0.0)) throw Error(ErrorCode::InvalidArgument, "preconditioning needs ridge > 0");
    MatX C = Z.transpose() * Z / static_cast<double>(n);
    const double lambda = config.ridge * std::max(C.trace() / d, 1e-12);
    C.diagonal().array() += lambda;
    precond.emplace(C);
  }
  auto step_w = [&](const MatX& grad) -> MatX {
    if (!precond) return grad;
    return precond->solve(grad.transpose()).transpose();
  };

  TrainResult result;
  double lr = config.learning_rate;
  MatX dY(n, kDecoderOutputs);
  Rng rng(config.seed);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  const int batch = config.batch_size > 0 ? std::min(config.batch_size, n) : n;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    MatX Y = Z * model.weight().transpose();
    Y.rowwise() += model.bias().transpose();
    Y.col(kSlotAx).array() += 1.0;
    Y.col(kSlotAz + 2).array() += 1.0;
    if (!Y.allFinite())
      throw Error(ErrorCode::DivergedLoss, "decoder outputs are not finite at epoch " + std::to_string(epoch));

    LossReport mean;
    for (int i = 0; i < n; ++i) {
      VecX dy;
      LossReport r;
      try {
        r = output_loss(Y.row(i).transpose(), data[i], config.loss, &dy);
      } catch (const Error& e) {
        // Outputs too large to normalize after an update.
        if (epoch == 0 || e.code() != ErrorCode::InvalidArgument) throw;
        throw Error(ErrorCode::DivergedLoss, "epoch " + std::to_string(epoch) + ": " + e.what());
      }
      accumulate(mean, r);
      dY.row(i) = dy.transpose();
    }
    scale_report(mean, 1.0 / n);
    if (!std::isfinite(mean.total))
      throw Error(ErrorCode::DivergedLoss, "total loss is not finite at epoch " + std::to_string(epoch));
    result.curve.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);

    if (lr != 0.0 && batch == n) {
      model.weight() -= lr * step_w(dY.transpose() * Z / static_cast<double>(n));
      model.bias() -= lr * (dY.colwise().sum().transpose() / static_cast<double>(n));
    } else if (lr != 0.0) {
      // Seeded shuffle, then one step per mini-batch.
      for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i) + 1)]);
      for (int start = 0; start < n; start += batch) {
        const int m = std::min(batch, n - start);
        MatX gw = MatX::Zero(kDecoderOutputs, d);
        VecX gb = VecX::Zero(kDecoderOutputs);
        for (int k = 0; k < m; ++k) {
          const int i = order[start + k];
          const VecX y = model.affine(data[i].pooled);
          VecX dy;
          output_loss(y, data[i], config.loss, &dy);
          gw += dy * Z.row(i);
          gb += dy;
        }
        model.weight() -= (lr / m) * step_w(gw);
        model.bias() -= (lr / m) * gb;
      }
    }
    if (!model.weight().allFinite() || !model.bias().allFinite())
      throw Error(ErrorCode::DivergedLoss, "parameters became non-finite at epoch " + std::to_string(epoch));
    lr *= config.lr_decay;
  }
  return result;
}

void save_checkpoint(const std::string& path, const LinearDecoderModel& model, const CheckpointInfo& info) {
  const int d = model.input_width();
  nlohmann::ordered_json h;
  h["format"] = "tpose-decoder/1";
  h["input_width"] = d;
  h["outputs"] = static_cast<int>(kDecoderOutputs);
  h["parameters"] = model.parameter_count();
  h["embedding"] = {{"random_width", info.embedding.random_width}, {"seed", info.embedding.seed}};
  h["seed"] = info.seed;
  h["config_hash"] = info.config_hash;
  h["tensors"] = {{{"name", "feature_mean"}, {"shape", {d}}},
                  {{"name", "feature_scale"}, {"shape", {d}}},
                  {{"name", "weight"}, {"shape", {static_cast<int>(kDecoderOutputs), d}}},
                  {{"name", "bias"}, {"shape", {static_cast<int>(kDecoderOutputs)}}}};
  const std::string header = h.dump();

  std::string buf(kMagic, sizeof(kMagic));
  const auto len = static_cast<std::uint32_t>(header.size());
  for (int b = 0; b < 4; ++b) buf.push_back(static_cast<char>((len >> (8 * b)) & 0xff));
  buf += header;
  put_floats(buf, model.feature_mean().data(), d);
  put_floats(buf, model.feature_scale().data(), d);
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = model.weight();
  put_floats(buf, w.data(), static_cast<std::size_t>(w.size()));
  put_floats(buf, model.bias().data(), kDecoderOutputs);
  io::write_text(path, buf);
}

LinearDecoderModel load_checkpoint(const std::string& path, CheckpointInfo* info) {
  const std::string buf = io::read_text(path);
  if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw Error(ErrorCode::SchemaMismatch, path + ": not a decoder checkpoint");
  std::uint32_t len = 0;
  for (int b = 0; b < 4; ++b) len |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[8 + b])) << (8 * b);
  if (12 + static_cast<std::size_t>(len) > buf.size()) throw Error(ErrorCode::SchemaMismatch, path + ": bad header length");

  int d = 0;
  CheckpointInfo ci;
  try {
    const auto h = nlohmann::json::parse(buf.substr(12, len));
    if (h.at("format").get<std::string>() != "tpose-decoder/1" || h.at("outputs").get<int>() != kDecoderOutputs)
      throw Error(ErrorCode::SchemaMismatch, path + ": unsupported checkpoint format");
    d = h.at("input_width").get<int>();
    ci.embedding.random_width = h.at("embedding").at("random_width").get<int>();
    ci.embedding.seed = h.at("embedding").at("seed").get<std::uint64_t>();
    ci.seed = h.at("seed").get<std::uint64_t>();
    ci.config_hash = h.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, path + ": " + e.what());
  }
  if (d != concat_width(ci.embedding))
    throw Error(ErrorCode::SchemaMismatch, path + ": input width does not match the embedding config");

  LinearDecoderModel m(d);
  std::size_t pos = 12 + len;
  VecX mean(d), scale(d);
  get_floats(buf, pos, mean.data(), d);
  get_floats(buf, pos, scale.data(), d);
  m.set_standardization(std::move(mean), std::move(scale));
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w(kDecoderOutputs, d);
  get_floats(buf, pos, w.data(), static_cast<std::size_t>(w.size()));
  m.weight() = w;
  get_floats(buf, pos, m.bias().data(), kDecoderOutputs);
  if (pos != buf.size()) throw Error(ErrorCode::SchemaMismatch, path + ": trailing bytes in checkpoint");
  if (info) *info = ci;
  return m;
}

}  // namespace tpose

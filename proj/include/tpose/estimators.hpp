#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tpose/feature_fusion.hpp"
#include "tpose/losses.hpp"
#include "tpose/pose_recovery.hpp"
#include "tpose/synth.hpp"

namespace tpose {

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// Depth completion for one frame. Implementations build a completed
/// full-frame map once; patches read it at their source pixels, so every
/// patch of the frame sees the same values.
class DepthCompleter {
 public:
  virtual ~DepthCompleter() = default;
  virtual std::string name() const = 0;
  /// Valid everywhere inside M_t.
  virtual const DepthMap& frame_depth() const = 0;
  DepthMap complete(const PatchBundle& bundle) const;
};

/// Surface normals for one frame; same full-frame lookup scheme.
class NormalEstimator {
 public:
  virtual ~NormalEstimator() = default;
  virtual std::string name() const = 0;
  virtual const NormalMap& frame_normals() const = 0;
  NormalMap estimate(const PatchBundle& bundle) const;
};

/// gt depth inside M_t, raw depth elsewhere.
std::unique_ptr<DepthCompleter> oracle_depth_completer(const SceneFrame& frame);

struct NoisyDepthConfig {
  double sigma = 0.045;         // per-pixel Gaussian, meters
  double bias = 0.03;           // amplitude of the smooth bias field, meters
  double bias_period = 400.0;   // pixels
};

/// gt + N(0, sigma) + b(u, v) inside M_t, raw elsewhere, where b is a smooth
/// sinusoidal field with random phase and amplitude `bias`. Results are
/// clamped to at least 1 cm so they stay valid.
std::unique_ptr<DepthCompleter> noisy_depth_completer(const SceneFrame& frame, const NoisyDepthConfig& config,
                                                      std::uint64_t seed);

/// Analytic normals.
std::unique_ptr<NormalEstimator> oracle_normal_estimator(const SceneFrame& frame);

/// Every valid gt normal perturbed by a von Mises-Fisher draw with
/// concentration `kappa` (Wood's sampler), then reflected to face the camera
/// if needed. kappa <= 0 disables the noise.
std::unique_ptr<NormalEstimator> noisy_normal_estimator(const SceneFrame& frame, double kappa, std::uint64_t seed);

/// One draw from vMF(mean, kappa) on the unit sphere.
Vec3 sample_vmf(const Vec3& mean, double kappa, Rng& rng);

// Embedding.

/// Per-point rows are the ten raw features followed by the point's
/// backprojected position minus the cloud centroid (13 columns).
inline constexpr int kPointFeatureWidth = kFeatureWidth + 3;

struct EmbeddingConfig {
  /// Width of the fixed random point-feature block (0 disables it).
  int random_width = 256;
  std::uint64_t seed = 0x5eed;
};

struct Embedding {
  MatX per_point;  // N × kPointFeatureWidth (P_emb)
  /// mean, max and variance of every per-point column, then the max- and
  /// mean-pooled random block.
  VecX global;
  std::array<double, kNumCategories> one_hot{};

  /// d_emb + global width + 6.
  int concat_width() const { return static_cast<int>(per_point.cols() + global.size()) + kNumCategories; }
  /// Row p of P_concat = [P_emb, P_global, H_c].
  VecX concat_row(int p) const;
  /// Mean of the P_concat rows, the decoder input.
  VecX pooled() const;
};

/// Width of Embedding::global for a config.
int global_width(const EmbeddingConfig& config);
/// Width of P_concat for a config.
int concat_width(const EmbeddingConfig& config);

/// The random block is ReLU(A·x̃ + c) per point, with A, c fixed Gaussian
/// draws from config.seed and x̃ the point row with the centered coordinates
/// scaled to decimeters. Throws EmptyCloud.
Embedding reference_embedding(const GeneralizedPointCloud& cloud, const CategoryLabel& category, const Intrinsics& K,
                              const EmbeddingConfig& config = {});

// Decoder.

struct DecoderOutput {
  Vec3 translation_residual = Vec3::Zero();
  AxisPrediction axes;
  Vec3 scale_residual = Vec3::Zero();
};

/// Output layout of the affine map.
enum DecoderSlot : int {
  kSlotT = 0,    // 3: translation residual
  kSlotAx = 3,   // 3: x-axis, before normalization
  kSlotCx = 6,   // 1: x confidence, before softplus
  kSlotAz = 7,   // 3: z-axis, before normalization
  kSlotCz = 10,  // 1: z confidence, before softplus
  kSlotS = 11,   // 3: scale residual
  kDecoderOutputs = 14
};

/// A single affine layer over the standardized pooled embedding:
///   y = W·((x - mean) / std) + b + anchor
/// where anchor adds the canonical x-axis (1, 0, 0) and z-axis (0, 0, 1) to
/// the axis slots. Axes are normalized; confidences are softplus(y).
/// Parameters: 14·(D + 1) trainable plus 2·D standardization constants.
class LinearDecoderModel {
 public:
  LinearDecoderModel() = default;
  explicit LinearDecoderModel(int input_width);

  int input_width() const { return static_cast<int>(weight_.cols()); }
  std::size_t parameter_count() const { return static_cast<std::size_t>(weight_.size() + bias_.size()); }

  MatX& weight() { return weight_; }
  const MatX& weight() const { return weight_; }
  VecX& bias() { return bias_; }
  const VecX& bias() const { return bias_; }
  const VecX& feature_mean() const { return mean_; }
  const VecX& feature_scale() const { return scale_; }

  /// Column statistics for standardization; columns with spread below 1e-9
  /// get scale 1.
  void set_standardization(const std::vector<VecX>& inputs);
  void set_standardization(VecX mean, VecX scale);

  VecX standardize(const VecX& pooled) const;
  /// Raw affine output including the anchor. Throws WidthMismatch.
  VecX affine(const VecX& pooled) const;
  DecoderOutput decode(const VecX& pooled) const;
  DecoderOutput decode(const Embedding& emb) const { return decode(emb.pooled()); }

 private:
  MatX weight_;
  VecX bias_;
  VecX mean_;
  VecX scale_;
};

double softplus(double x);

/// Prediction assembled from decoder output and priors (axes not yet
/// orthogonalized), as seen by the losses.
PosePrediction to_pose_prediction(const DecoderOutput& out, const Vec3& translation_prior, const Vec3& scale_prior);

/// d loss / d affine output given the loss gradient at the prediction.
VecX decoder_output_gradient(const LinearDecoderModel& model, const VecX& pooled, const PoseLossGradient& g);

// Training.

struct TrainingSample {
  VecX pooled;  // Embedding::pooled()
  Vec3 translation_prior = Vec3::Zero();
  Vec3 scale_prior = Vec3::Ones();
  PoseTarget target;
};

struct TrainConfig {
  double learning_rate = 50.0;
  int epochs = 2000;
  /// Learning rate multiplier applied after every epoch.
  double lr_decay = 0.998;
  /// 0 = full batch. Otherwise samples are shuffled with `seed` every epoch
  /// and one step is taken per mini-batch.
  int batch_size = 0;
  std::uint64_t seed = 1;
  /// Scale the weight gradient by (ZᵀZ/n + λI)⁻¹, Z the standardized
  /// inputs and λ = ridge · trace(ZᵀZ/n) / D. The pooled features are
  /// strongly correlated and plain steps crawl along the small directions.
  bool precondition = true;
  double ridge = 1e-3;
  LossConfig loss;
};

struct TrainResult {
  std::vector<LossReport> curve;  // per epoch, mean over samples, before the update
};

/// Loss and parameter gradient for one sample (pose terms only).
LossReport sample_loss(const LinearDecoderModel& model, const TrainingSample& s, const LossConfig& loss, MatX* grad_w,
                       VecX* grad_b);

/// Full-batch or mini-batch gradient descent. Gradients are summed in a fixed order so the
/// result is bit-reproducible for a given seed. Throws DivergedLoss on a non-finite total.
TrainResult train_reference(LinearDecoderModel& model, const std::vector<TrainingSample>& data,
                            const TrainConfig& config,
                            const std::function<void(int, const LossReport&)>& on_epoch = {});

// Checkpoints.

struct CheckpointInfo {
  EmbeddingConfig embedding;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// "TPOSECK1", u32 LE header length, JSON header (shapes, seed, config hash),
/// then mean, scale, weight (row-major) and bias as LE float32. Throws IoFailure.
void save_checkpoint(const std::string& path, const LinearDecoderModel& model, const CheckpointInfo& info);
/// Throws IoFailure or SchemaMismatch.
LinearDecoderModel load_checkpoint(const std::string& path, CheckpointInfo* info = nullptr);

}  // namespace tpose

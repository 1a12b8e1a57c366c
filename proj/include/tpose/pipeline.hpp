#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tpose/estimators.hpp"
#include "tpose/metrics.hpp"
#include "tpose/synth.hpp"

namespace tpose {

enum class EstimatorKind { Oracle, Noisy };

const char* estimator_kind_name(EstimatorKind kind);
/// "oracle" or "noisy"; throws InvalidArgument otherwise.
EstimatorKind parse_estimator_kind(std::string_view name);

struct PipelineConfig {
  int patch_size = 256;
  double ray_exponent = 1.0;
  std::size_t points = 1024;
  EmbeddingConfig embedding;
  EstimatorKind depth = EstimatorKind::Oracle;
  EstimatorKind normals = EstimatorKind::Oracle;
  NoisyDepthConfig noisy_depth;
  double normal_kappa = 88.3;
};

/// Completer for one frame. The noisy one is seeded from the frame seed.
std::unique_ptr<DepthCompleter> make_depth_completer(EstimatorKind kind, const SceneFrame& frame,
                                                     const NoisyDepthConfig& noisy);
std::unique_ptr<NormalEstimator> make_normal_estimator(EstimatorKind kind, const SceneFrame& frame, double kappa);

/// Everything the pipeline computes for one instance before the decoder.
struct InstanceStages {
  int instance = 0;
  CategoryLabel category{0};
  PatchBundle bundle;  // with completed depth and normals
  GeneralizedPointCloud cloud;
  Vec3 translation_prior = Vec3::Zero();
  VecX pooled;
};

/// Patch from the annotated bbox and mask, completion, normals, sampling,
/// translation prior and embedding. Throws EmptyMask when the instance has
/// no eligible pixel.
InstanceStages run_front_end(const SceneFrame& frame, const InstanceAnnotation& instance,
                             const DepthCompleter& depth, const NormalEstimator& normals,
                             const PipelineConfig& config);

/// Seed of the point sampler for one instance.
std::uint64_t sampler_seed(const SceneFrame& frame, int instance);

/// Orthogonalizes the decoded axes and applies the priors. Axial categories
/// trust the z-axis alone (c_x = 0); if the decoded x is parallel to z any
/// perpendicular x is used. Scale components are floored at 1 mm.
InstanceEstimate recover_estimate(const DecoderOutput& out, const Vec3& translation_prior, const Vec3& scale_prior,
                                  const SymmetryClass& symmetry);

struct PredictionRecord {
  std::size_t frame = 0;
  int instance = 0;
  CategoryLabel category{0};
  std::optional<InstanceEstimate> estimate;  // empty = failed
  std::string error;
  std::optional<double> time_ms;

  /// One JSON object, no trailing newline.
  std::string to_json() const;
  /// Throws SchemaMismatch.
  static PredictionRecord from_json(std::string_view line);
};

std::string records_to_jsonl(const std::vector<PredictionRecord>& records);
/// Throws SchemaMismatch.
std::vector<PredictionRecord> records_from_jsonl(const std::string& text);

struct PredictOptions {
  bool record_timing = false;
  /// When set, stage outputs of every instance go under this directory.
  std::string dump_directory;
};

/// One record per annotated instance, in annotation order.
std::vector<PredictionRecord> predict_frame(const SceneFrame& frame, std::size_t index,
                                            const LinearDecoderModel& model, const CategoryPriors& priors,
                                            const PipelineConfig& config, const PredictOptions& options = {});

/// Dump layout: <dir>/frame_NNNNNN/inst_II.json, inst_II_cloud.csv,
/// inst_II_depth.png (mm) and inst_II_normals.f32.
void write_instance_dump(const std::string& directory, std::size_t frame, const InstanceStages& stages);

/// Re-runs embedding, decoding and pose recovery from the sampled clouds of
/// a dump directory. Records come out sorted by (frame, instance).
std::vector<PredictionRecord> predict_from_dump(const std::string& directory, const Intrinsics& K,
                                                const LinearDecoderModel& model, const CategoryPriors& priors,
                                                const PipelineConfig& config);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
/// (lowest index) is rethrown after all workers finish.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

/// Frames by index, from disk or generated on demand.
struct FrameSource {
  std::size_t count = 0;
  Intrinsics K;
  CategoryPriors priors;
  std::function<SceneFrame(std::size_t)> load;

  static FrameSource from_dataset(const Dataset& dataset);
  /// Frame i is generate_scene(config, frame_seed(master_seed, i)). Priors
  /// come from the annotations of all `count` frames, as write_dataset does.
  static FrameSource generated(const SceneConfig& config, std::uint64_t master_seed, std::size_t count, int jobs = 1);
};

/// Predicts every frame of a dataset; output order is frame order.
std::vector<PredictionRecord> predict_dataset(const Dataset& dataset, const LinearDecoderModel& model,
                                              const PipelineConfig& config, const PredictOptions& options,
                                              int jobs);

/// Front end plus targets for every instance of the dataset. Instances the
/// front end rejects are skipped.
std::vector<TrainingSample> build_training_samples(const FrameSource& frames, const PipelineConfig& config, int jobs);
std::vector<TrainingSample> build_training_samples(const Dataset& dataset, const PipelineConfig& config, int jobs);

struct PoseEvaluation {
  PoseMetricsReport report;
  std::size_t instances = 0;
  std::size_t missing = 0;  // no record or a failed record
};

/// Matches records to annotations by (frame, instance). Throws
/// SchemaMismatch for records that name unknown frames or instances.
PoseEvaluation evaluate_predictions(const Dataset& dataset, const std::vector<PredictionRecord>& records,
                                    const PoseMetricOptions& options);

struct StageEvaluation {
  DepthMetricsReport depth;
  NormalMetricsReport normals;
};

/// Depth and normal accuracy of the configured estimators over M_t.
StageEvaluation evaluate_stages(const FrameSource& frames, const PipelineConfig& config, int jobs);
StageEvaluation evaluate_stages(const Dataset& dataset, const PipelineConfig& config, int jobs);

struct GridCell {
  EstimatorKind depth = EstimatorKind::Oracle;
  EstimatorKind normals = EstimatorKind::Oracle;
  PoseMetricsReport report;

  std::string label() const;  // e.g. "GT/EST" (depth/normals)
};

/// The four depth × normal conditions, GT/GT first and EST/EST last.
std::vector<GridCell> evaluate_grid(const FrameSource& frames, const LinearDecoderModel& model,
                                    const PipelineConfig& config, const PoseMetricOptions& options, int jobs);
std::vector<GridCell> evaluate_grid(const Dataset& dataset, const LinearDecoderModel& model,
                                    const PipelineConfig& config, const PoseMetricOptions& options, int jobs);

std::string grid_to_csv(const std::vector<GridCell>& grid);
std::string grid_to_markdown(const std::vector<GridCell>& grid);

}  // namespace tpose

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tpose/camera.hpp"
#include "tpose/feature_fusion.hpp"
#include "tpose/pose_recovery.hpp"
#include "tpose/rng.hpp"

namespace tpose {

/// Object-frame primitives, all centered on their bounding box with z up.
///
/// Cylinder: closed, radius sx/2, height sz.
/// Bowl: open hemispherical shell of outer radius sx/2 and height sz = sx/2,
///   wall thickness 10% of the radius, rim at z = +sz/2.
/// Box: sx × sy × sz.
/// Stemmed: base disk, thin stem and a closed cup on top; cup radius sx/2.
enum class Primitive { Cylinder, Bowl, Box, Stemmed };

const char* primitive_name(Primitive p);
Primitive parse_primitive(std::string_view name);

struct ObjectTemplate {
  CategoryLabel category{0};
  Primitive primitive = Primitive::Cylinder;
  Vec3 nominal = Vec3(0.07, 0.07, 0.2);  // full extents, meters
  double radial_jitter = 0.15;           // relative, uniform in ±jitter
  double height_jitter = 0.15;

  SymmetryClass symmetry() const;
  /// Draws jittered extents. Axial primitives keep sx = sy; the bowl keeps
  /// its hemisphere proportions.
  Vec3 sample_extents(Rng& rng) const;
};

/// One template per category: bottle and water cup are cylinders, bowl a
/// bowl, container and tableware boxes, wine cup a stemmed cup.
std::vector<ObjectTemplate> default_templates();

struct CorruptionModel {
  double dropout = 0.3;           // probability a M_t pixel reads 0
  double noise_sigma = 0.01;      // meters, per-pixel Gaussian
  double warp_amplitude = 0.02;   // meters, low-frequency sinusoidal warp
  double warp_period = 96.0;      // pixels
  int bleed_radius = 2;           // pixels near the M_t border read the background

  /// Throws InvalidArgument on probabilities outside [0, 1] or negative sizes.
  void validate() const;
  static CorruptionModel none() { return {0.0, 0.0, 0.0, 96.0, 0}; }
};

struct InstanceAnnotation {
  int id = 0;  // value in the instance map
  CategoryLabel category{0};
  Primitive primitive = Primitive::Cylinder;
  SymmetryClass symmetry = SymmetryClass::none();
  Pose pose;
  Scale scale;
  PixelRect bbox;  // tight box of the visible pixels
};

struct SceneFrame {
  Intrinsics K;
  ColorImage rgb;
  DepthMap depth_gt;
  DepthMap depth_raw;  // corrupted sensor depth
  NormalMap normals_gt;
  InstanceMap instance_map;
  Mask transparency;  // union of the instance masks
  std::vector<InstanceAnnotation> instances;
  double background_depth = 2.0;
  std::uint64_t seed = 0;

  Mask instance_mask(int id) const;
};

/// A hand-placed object for tests and demos.
struct FixedInstance {
  CategoryLabel category{0};
  Pose pose;
  Vec3 extents;
};

struct SceneConfig {
  Intrinsics K;
  std::vector<ObjectTemplate> templates = default_templates();
  int min_instances = 1;
  int max_instances = 4;
  double min_distance = 0.55;  // object-center z range, meters
  double max_distance = 1.05;
  double background_depth = 2.0;
  double min_elevation_deg = 25.0;  // camera elevation above the support plane
  double max_elevation_deg = 65.0;
  double max_tilt_deg = 8.0;        // per-object tilt of the up axis
  int max_attempts = 200;           // rejection attempts per instance
  CorruptionModel corruption;
  /// When non-empty, these replace random placement.
  std::vector<FixedInstance> fixed;

  void validate() const;
};

/// Ray-casts one frame. Placement, albedo and corruption use independent
/// streams derived from `seed`. Throws PlacementFailure when an instance
/// cannot be placed without overlapping another after max_attempts tries.
SceneFrame generate_scene(const SceneConfig& config, std::uint64_t seed);

/// Renders the given instances into a frame without corruption (raw = gt).
SceneFrame render_instances(const Intrinsics& K, const std::vector<InstanceAnnotation>& instances,
                            double background_depth, std::uint64_t albedo_seed);

/// Corrupted copy of the frame's gt depth. Pixels outside M_t are copied.
/// Inside M_t: gt + warp + Gaussian noise, then pixels within bleed_radius
/// of the M_t border take the background depth, then dropout sets 0.
DepthMap corrupt_depth(const SceneFrame& frame, const CorruptionModel& model, std::uint64_t seed);

/// Per-category mean extents of the annotated instances; categories with no
/// instance fall back to the template's nominal extents.
CategoryPriors priors_from_annotations(const std::vector<InstanceAnnotation>& instances,
                                       const std::vector<ObjectTemplate>& templates);

// On-disk dataset.

struct ManifestEntry {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::size_t instances = 0;
};

struct Dataset {
  std::string directory;
  Intrinsics K;
  CategoryPriors priors;
  std::uint64_t master_seed = 0;
  std::vector<ManifestEntry> frames;
};

/// Seed of frame `index` in a run with `master_seed`.
inline std::uint64_t frame_seed(std::uint64_t master_seed, std::size_t index) {
  return derive_seed(master_seed, static_cast<std::uint64_t>(index));
}

std::string frame_file(const std::string& pattern, std::size_t index);

/// Writes the file group of one frame. Throws IoFailure.
ManifestEntry write_frame(const SceneFrame& frame, const std::string& directory, std::size_t index);

/// Writes intrinsics.json, priors.json and manifest.json. Returns the
/// manifest path. Throws IoFailure.
std::string write_manifest(const std::string& directory, const Intrinsics& K, std::uint64_t master_seed,
                           const std::vector<ManifestEntry>& entries, const CategoryPriors& priors);

/// write_frame for every frame followed by write_manifest, with priors from
/// the frames' annotations.
std::string write_dataset(const std::vector<SceneFrame>& frames, const std::string& directory,
                          std::uint64_t master_seed, const std::vector<ObjectTemplate>& templates);

/// Throws IoFailure when the directory or a file is missing and
/// SchemaMismatch on malformed JSON.
Dataset open_dataset(const std::string& directory);
SceneFrame load_frame(const Dataset& dataset, std::size_t index);

std::string annotations_to_json(const std::vector<InstanceAnnotation>& instances);
std::vector<InstanceAnnotation> annotations_from_json(const std::string& text);

}  // namespace tpose

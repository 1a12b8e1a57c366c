#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tpose/estimators.hpp"
#include "tpose/pipeline.hpp"
#include "tpose/synth.hpp"

namespace tpose {

/// Everything the command-line harness can be told.
///
/// File format: one `key = value` per line, `#` starts a comment, blank
/// lines are ignored. Unknown keys and malformed values are errors.
struct HarnessConfig {
  std::uint64_t seed = 1;
  SceneConfig scene;  // scene.K is the camera
  PipelineConfig pipeline;
  TrainConfig train;
  /// Decoder checkpoint for predict / evaluate --grid; empty = untrained decoder.
  std::string checkpoint;
  bool symmetry_aware = true;
  bool record_timing = false;

  /// Throws InvalidArgument for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  /// Parses config text on top of the current values.
  void apply(const std::string& text);
  /// Throws IoFailure when the file cannot be read.
  static HarnessConfig load(const std::string& path);

  /// Every key with its current value, in a stable order, as config text.
  std::string print() const;
  /// FNV-1a of print().
  std::string hash() const;
  /// Cross-field checks (camera, scene, loss). Throws InvalidArgument.
  void validate() const;

  static std::vector<std::string> keys();
};

}  // namespace tpose

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tpose/camera.hpp"
#include "tpose/feature_fusion.hpp"

namespace tpose::io {

/// Raw 8- or 16-bit PNG rows, `channels` samples per pixel. 16-bit samples
/// are stored host-order in `samples16`, 8-bit samples in `samples8`.
struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 1;
  int bit_depth = 8;
  std::vector<std::uint8_t> samples8;
  std::vector<std::uint16_t> samples16;
};

void write_png(const std::string& path, const PngImage& image);
PngImage read_png(const std::string& path);

/// 16-bit grayscale, millimeters, 0 = invalid. Valid depths are rounded to
/// the nearest millimeter; depths that would round to 0 or exceed 65.535 m
/// are stored as 0.
void write_depth_png(const std::string& path, const DepthMap& depth);
DepthMap read_depth_png(const std::string& path);

/// Depth exactly as write_depth_png + read_depth_png would return it.
DepthMap quantize_depth(const DepthMap& depth);

/// Little-endian float32, H·W·3 values, row-major, xyz interleaved, plus
/// `<path>.json` holding {"width", "height", "channels", "dtype"}.
void write_normals(const std::string& path, const NormalMap& normals);
NormalMap read_normals(const std::string& path);

/// Normals exactly as a write/read round trip would return them.
NormalMap quantize_normals(const NormalMap& normals);

/// 8-bit instance ids; throws InvalidArgument for ids above 255.
void write_instance_png(const std::string& path, const InstanceMap& ids);
InstanceMap read_instance_png(const std::string& path);

void write_rgb_png(const std::string& path, const ColorImage& rgb);
ColorImage read_rgb_png(const std::string& path);

std::string read_text(const std::string& path);
/// Writes through a temporary file and renames it into place.
void write_text(const std::string& path, const std::string& text);

/// FNV-1a 64 over a byte string, as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace tpose::io

#include "tpose/io.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include <json.hpp>

namespace tpose::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(const std::string& path, const char* what) {
  throw Error(ErrorCode::IoFailure, path + ": " + what);
}

void on_png_error(png_structp png, png_const_charp msg) {
  auto* buf = static_cast<std::string*>(png_get_error_ptr(png));
  if (buf) *buf = msg;
  png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

std::uint16_t to_mm(double depth) {
  if (!DepthMap::is_valid_depth(depth)) return 0;
  const double mm = std::round(depth * 1000.0);
  if (mm < 1.0 || mm > 65535.0) return 0;
  return static_cast<std::uint16_t>(mm);
}

}  // namespace

void write_png(const std::string& path, const PngImage& image) {
  const std::size_t row_samples = static_cast<std::size_t>(image.width) * image.channels;
  const std::size_t total = row_samples * image.height;
  if (image.bit_depth == 8 ? image.samples8.size() != total : image.samples16.size() != total)
    throw Error(ErrorCode::ShapeMismatch, "png sample count does not match its dimensions");

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) png_fail(path, "cannot open for writing");

  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, on_png_error, on_png_warning);
  if (!png) png_fail(path, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    png_fail(path, "png_create_info_struct failed");
  }

  // Rows are staged big-endian for 16-bit data.
  std::vector<std::uint8_t> row(row_samples * (image.bit_depth == 16 ? 2 : 1));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    png_fail(path, err.c_str());
  }
  png_init_io(png, fp.get());
  const int color = image.channels == 1 ? PNG_COLOR_TYPE_GRAY
                    : image.channels == 3 ? PNG_COLOR_TYPE_RGB
                                          : PNG_COLOR_TYPE_RGBA;
  png_set_IHDR(png, info, image.width, image.height, image.bit_depth, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    const std::size_t off = static_cast<std::size_t>(y) * row_samples;
    if (image.bit_depth == 16) {
      for (std::size_t i = 0; i < row_samples; ++i) {
        row[2 * i] = static_cast<std::uint8_t>(image.samples16[off + i] >> 8);
        row[2 * i + 1] = static_cast<std::uint8_t>(image.samples16[off + i] & 0xff);
      }
    } else {
      std::memcpy(row.data(), image.samples8.data() + off, row_samples);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

PngImage read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) png_fail(path, "cannot open for reading");
  std::uint8_t sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) png_fail(path, "not a png file");

  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, on_png_error, on_png_warning);
  if (!png) png_fail(path, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    png_fail(path, "png_create_info_struct failed");
  }
  PngImage out;
  std::vector<std::uint8_t> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    png_fail(path, err.c_str());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t row_samples = static_cast<std::size_t>(out.width) * out.channels;
  row.resize(png_get_rowbytes(png, info));
  if (out.bit_depth == 16) out.samples16.resize(row_samples * out.height);
  else out.samples8.resize(row_samples * out.height);

  for (int y = 0; y < out.height; ++y) {
    png_read_row(png, row.data(), nullptr);
    const std::size_t off = static_cast<std::size_t>(y) * row_samples;
    if (out.bit_depth == 16) {
      for (std::size_t i = 0; i < row_samples; ++i)
        out.samples16[off + i] = static_cast<std::uint16_t>((row[2 * i] << 8) | row[2 * i + 1]);
    } else {
      std::memcpy(out.samples8.data() + off, row.data(), row_samples);
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_depth_png(const std::string& path, const DepthMap& depth) {
  PngImage img;
  img.width = depth.width;
  img.height = depth.height;
  img.bit_depth = 16;
  img.samples16.resize(depth.size());
  for (std::size_t i = 0; i < depth.size(); ++i) img.samples16[i] = to_mm(depth.depth[i]);
  write_png(path, img);
}

DepthMap read_depth_png(const std::string& path) {
  const PngImage img = read_png(path);
  if (img.channels != 1 || img.bit_depth != 16) throw Error(ErrorCode::SchemaMismatch, path + ": expected 16-bit gray");
  DepthMap d(img.width, img.height);
  for (std::size_t i = 0; i < d.size(); ++i) d.depth[i] = img.samples16[i] / 1000.0;
  return d;
}

DepthMap quantize_depth(const DepthMap& depth) {
  DepthMap out = depth;
  for (double& d : out.depth) d = to_mm(d) / 1000.0;
  return out;
}

void write_normals(const std::string& path, const NormalMap& normals) {
  static_assert(std::endian::native == std::endian::little, "float32 dumps assume a little-endian host");
  std::vector<float> buf(normals.size() * 3);
  for (std::size_t i = 0; i < normals.size(); ++i)
    for (int c = 0; c < 3; ++c) buf[3 * i + c] = static_cast<float>(normals.normals[i][c]);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw Error(ErrorCode::IoFailure, "short write to " + path);

  nlohmann::ordered_json side;
  side["width"] = normals.width;
  side["height"] = normals.height;
  side["channels"] = 3;
  side["dtype"] = "float32-le";
  write_text(path + ".json", side.dump(2) + "\n");
}

NormalMap read_normals(const std::string& path) {
  int w = 0, h = 0;
  try {
    const auto side = nlohmann::json::parse(read_text(path + ".json"));
    w = side.at("width").get<int>();
    h = side.at("height").get<int>();
    if (side.at("channels").get<int>() != 3 || side.at("dtype").get<std::string>() != "float32-le")
      throw Error(ErrorCode::SchemaMismatch, path + ": unsupported normal layout");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, path + ".json: " + e.what());
  }
  NormalMap n(w, h);
  std::vector<float> buf(n.size() * 3);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
    throw Error(ErrorCode::SchemaMismatch, path + ": truncated normal file");
  for (std::size_t i = 0; i < n.size(); ++i) n.normals[i] = Vec3(buf[3 * i], buf[3 * i + 1], buf[3 * i + 2]);
  return n;
}

NormalMap quantize_normals(const NormalMap& normals) {
  NormalMap out = normals;
  // Flat loop: GCC 11 at -O3 miscompiles the per-Vec3 version (the
  // vectorized tail converts only z).
  double* p = out.normals.empty() ? nullptr : out.normals.front().data();
  for (std::size_t i = 0; i < 3 * out.normals.size(); ++i) p[i] = static_cast<double>(static_cast<float>(p[i]));
  return out;
}

void write_instance_png(const std::string& path, const InstanceMap& ids) {
  PngImage img;
  img.width = ids.width;
  img.height = ids.height;
  img.samples8.resize(ids.ids.size());
  for (std::size_t i = 0; i < ids.ids.size(); ++i) {
    if (ids.ids[i] > 255) throw Error(ErrorCode::InvalidArgument, "instance id above 255");
    img.samples8[i] = static_cast<std::uint8_t>(ids.ids[i]);
  }
  write_png(path, img);
}

InstanceMap read_instance_png(const std::string& path) {
  const PngImage img = read_png(path);
  if (img.channels != 1 || img.bit_depth != 8) throw Error(ErrorCode::SchemaMismatch, path + ": expected 8-bit gray");
  InstanceMap m(img.width, img.height);
  for (std::size_t i = 0; i < m.ids.size(); ++i) m.ids[i] = img.samples8[i];
  return m;
}

void write_rgb_png(const std::string& path, const ColorImage& rgb) {
  PngImage img;
  img.width = rgb.width;
  img.height = rgb.height;
  img.channels = 3;
  img.samples8.resize(rgb.rgb.size() * 3);
  for (std::size_t i = 0; i < rgb.rgb.size(); ++i)
    for (int c = 0; c < 3; ++c)
      img.samples8[3 * i + c] = static_cast<std::uint8_t>(std::lround(std::clamp(rgb.rgb[i][c], 0.0, 1.0) * 255.0));
  write_png(path, img);
}

ColorImage read_rgb_png(const std::string& path) {
  const PngImage img = read_png(path);
  if (img.channels != 3 || img.bit_depth != 8) throw Error(ErrorCode::SchemaMismatch, path + ": expected 8-bit rgb");
  ColorImage c(img.width, img.height);
  for (std::size_t i = 0; i < c.rgb.size(); ++i)
    c.rgb[i] = Vec3(img.samples8[3 * i], img.samples8[3 * i + 1], img.samples8[3 * i + 2]) / 255.0;
  return c;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path);
    out << text;
    if (!out) throw Error(ErrorCode::IoFailure, "short write to " + path);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot rename into " + path + ": " + ec.message());
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace tpose::io

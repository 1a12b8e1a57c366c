#include <doctest.h>

#include <fstream>

#include "test_util.hpp"
#include "tpose/error.hpp"
#include "tpose/io.hpp"

using namespace tpose;
using namespace tpose::test;

TEST_CASE("raw PNG round trips in 8 and 16 bit") {
  TempDir dir("io_png");
  io::PngImage a;
  a.width = 7;
  a.height = 5;
  a.channels = 3;
  a.bit_depth = 8;
  for (int i = 0; i < 7 * 5 * 3; ++i) a.samples8.push_back(static_cast<std::uint8_t>(i * 37));
  io::write_png(dir / "a.png", a);
  const io::PngImage ra = io::read_png(dir / "a.png");
  CHECK(ra.width == 7);
  CHECK(ra.channels == 3);
  CHECK(ra.samples8 == a.samples8);

  io::PngImage b;
  b.width = 9;
  b.height = 4;
  b.bit_depth = 16;
  for (int i = 0; i < 36; ++i) b.samples16.push_back(static_cast<std::uint16_t>(i * 1801));
  io::write_png(dir / "b.png", b);
  CHECK(io::read_png(dir / "b.png").samples16 == b.samples16);
}

TEST_CASE("depth PNG stores millimeters") {
  TempDir dir("io_depth");
  DepthMap d(4, 2);
  d.depth = {0.0, 1.0, 1.2344, 1.2346, 70.0, 0.0004, 2.5, 65.535};
  io::write_depth_png(dir / "d.png", d);
  const DepthMap r = io::read_depth_png(dir / "d.png");
  const std::vector<double> expect{0.0, 1.0, 1.234, 1.235, 0.0, 0.0, 2.5, 65.535};
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(r.depth[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  CHECK(io::quantize_depth(d).depth == r.depth);
}

TEST_CASE("depth round trip is bit exact after quantization") {
  TempDir dir("io_depth2");
  Rng rng(61);
  DepthMap d(32, 24);
  for (double& x : d.depth) x = rng.uniform() < 0.1 ? 0.0 : rng.uniform(0.2, 5.0);
  const DepthMap q = io::quantize_depth(d);
  io::write_depth_png(dir / "q.png", q);
  CHECK(io::read_depth_png(dir / "q.png").depth == q.depth);
}

TEST_CASE("normals round trip through float32") {
  TempDir dir("io_normals");
  Rng rng(62);
  NormalMap n(13, 11);
  for (auto& v : n.normals) v = rng.uniform() < 0.2 ? Vec3::Zero() : random_unit(rng);
  io::write_normals(dir / "n.f32", n);
  const NormalMap r = io::read_normals(dir / "n.f32");
  REQUIRE(r.width == 13);
  REQUIRE(r.height == 11);
  const NormalMap q = io::quantize_normals(n);
  for (std::size_t i = 0; i < n.size(); ++i) CHECK(r.normals[i] == q.normals[i]);
  for (std::size_t i = 0; i < n.size(); ++i) CHECK((r.normals[i] - n.normals[i]).norm() < 1e-7);
  CHECK(std::filesystem::file_size(dir / "n.f32") == 13 * 11 * 3 * 4);
  CHECK(io::read_text(dir / "n.f32.json").find("float32") != std::string::npos);
}

TEST_CASE("instance and rgb PNGs") {
  TempDir dir("io_inst");
  InstanceMap m(5, 3);
  for (std::size_t i = 0; i < m.ids.size(); ++i) m.ids[i] = static_cast<std::uint16_t>(i * 17);
  io::write_instance_png(dir / "m.png", m);
  CHECK(io::read_instance_png(dir / "m.png").ids == m.ids);
  m.ids[0] = 256;
  CHECK_THROWS_AS(io::write_instance_png(dir / "bad.png", m), Error);

  ColorImage c(3, 2);
  c.at(1, 1) = Vec3(1, 0.5, 0);
  io::write_rgb_png(dir / "c.png", c);
  const ColorImage rc = io::read_rgb_png(dir / "c.png");
  CHECK((rc.at(1, 1) - Vec3(1, 128 / 255.0, 0)).norm() < 1e-12);
}

TEST_CASE("missing and malformed files raise IoFailure") {
  TempDir dir("io_missing");
  auto code = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  CHECK(code([&] { io::read_png(dir / "nope.png"); }) == ErrorCode::IoFailure);
  CHECK(code([&] { io::read_text(dir / "nope.txt"); }) == ErrorCode::IoFailure);
  std::ofstream(dir / "junk.png") << "not a png";
  CHECK(code([&] { io::read_png(dir / "junk.png"); }) == ErrorCode::IoFailure);
  CHECK(code([&] { io::write_text(dir / "no/such/dir/x.txt", "x"); }) == ErrorCode::IoFailure);
}

TEST_CASE("text and hash helpers") {
  TempDir dir("io_text");
  io::write_text(dir / "t.txt", "hello\n");
  CHECK(io::read_text(dir / "t.txt") == "hello\n");
  CHECK(io::fnv1a_hex("") == "cbf29ce484222325");
  CHECK(io::fnv1a_hex("a") == "af63dc4c8601ec8c");
}

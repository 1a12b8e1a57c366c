#include <doctest.h>

#include <set>
#include <sstream>

#include "test_util.hpp"
#include "tpose/feature_fusion.hpp"

using namespace tpose;
using namespace tpose::test;

namespace {

struct ToyFrame {
  Intrinsics K{100, 100, 31.5, 23.5, 64, 48};
  ColorImage rgb{64, 48};
  DepthMap depth{64, 48, 1.0};
  InstanceMap instances{64, 48};
  Mask transparency{64, 48};

  ToyFrame() {
    for (int v = 0; v < 48; ++v)
      for (int u = 0; u < 64; ++u) {
        rgb.at(u, v) = Vec3(u / 63.0, v / 47.0, 0.5);
        depth.at(u, v) = 1.0 + 0.01 * u;
        if (u >= 10 && u < 30 && v >= 5 && v < 25) {
          instances.ids[instances.index(u, v)] = 1;
          transparency.set(u, v, true);
        }
      }
  }

  PatchSource source() const { return {&K, &rgb, &depth, &instances, &transparency, nullptr}; }
};

PatchBundle full_bundle(const ToyFrame& f, int size) {
  PatchBundle b = extract_patch(f.source(), 1, {8, 3, 24, 24}, CategoryLabel(0), size);
  b.completed_depth = b.raw_depth;
  b.normals = NormalMap(size, size);
  for (auto& n : b.normals.normals) n = Vec3(0, 0, -1);
  return b;
}

FeaturePatch index_patch(int w, int h) {
  FeaturePatch p;
  p.width = w;
  p.height = h;
  for (int i = 0; i < w * h; ++i) {
    std::array<double, kFeatureWidth> row{};
    row[0] = i;
    row[kDepth] = 1.0 + i;
    p.features.push_back(row);
    p.source_u.push_back(i % w);
    p.source_v.push_back(i / w);
  }
  return p;
}

}  // namespace

TEST_CASE("extract_patch keeps source pixels and masks") {
  const ToyFrame f;
  const PatchBundle b = extract_patch(f.source(), 1, {8, 3, 24, 24}, CategoryLabel(2), 12);
  CHECK(b.size == 12);
  CHECK(b.rgb.width == 12);
  for (int j = 0; j < 12; ++j)
    for (int i = 0; i < 12; ++i) {
      const std::size_t p = static_cast<std::size_t>(j) * 12 + i;
      const int u = b.source_u[p], v = b.source_v[p];
      CHECK(u == 8 + 2 * i + 1);
      CHECK(v == 3 + 2 * j + 1);
      CHECK(b.raw_depth.depth[p] == f.depth.at(u, v));
      CHECK((b.rays.normals[p] - ray_direction(f.K, u, v)).norm() < 1e-15);
      CHECK(b.instance_mask.bits[p] == (f.instances.at(u, v) == 1));
    }
  CHECK(b.sample_mask().count() == b.instance_mask.count());
}

TEST_CASE("extract_patch rejects bad boxes") {
  const ToyFrame f;
  CHECK_THROWS_AS(extract_patch(f.source(), 1, {60, 0, 10, 10}, CategoryLabel(0), 8), Error);
  CHECK_THROWS_AS(extract_patch(f.source(), 1, {0, 0, 0, 10}, CategoryLabel(0), 8), Error);
  CHECK_THROWS_AS(extract_patch(f.source(), 1, {0, 0, 10, 10}, CategoryLabel(0), 0), Error);
}

TEST_CASE("assemble_features has width 10 and channel layout") {
  const ToyFrame f;
  const PatchBundle b = full_bundle(f, 16);
  const FeaturePatch fp = assemble_features(b);
  REQUIRE(fp.features.size() == 256);
  for (std::size_t p = 0; p < fp.features.size(); ++p) {
    const auto& r = fp.features[p];
    CHECK(r[kRgb] == b.rgb.rgb[p].x());
    CHECK(r[kDepth] == b.completed_depth.depth[p]);
    CHECK(r[kNormal + 2] == -1.0);
    CHECK(Vec3(r[kRay], r[kRay + 1], r[kRay + 2]).isApprox(b.rays.normals[p]));
  }
}

TEST_CASE("assemble_features shape mismatch") {
  const ToyFrame f;
  PatchBundle b = full_bundle(f, 16);
  b.normals = NormalMap(15, 16);
  try {
    assemble_features(b);
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
  b = full_bundle(f, 16);
  b.completed_depth = DepthMap();
  CHECK_THROWS_AS(assemble_features(b), Error);
}

TEST_CASE("sampling without replacement is unique and inside the mask") {
  const FeaturePatch p = index_patch(32, 32);
  Mask m(32, 32);
  for (int v = 4; v < 28; ++v)
    for (int u = 8; u < 24; ++u) m.set(u, v, true);
  const auto cloud = sample_points(p, m, 300, 7);
  REQUIRE(cloud.size() == 300);
  std::set<std::uint32_t> seen(cloud.patch_indices.begin(), cloud.patch_indices.end());
  CHECK(seen.size() == 300);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto idx = cloud.patch_indices[i];
    CHECK(m.bits[idx] == 1);
    CHECK(cloud.rows[i][0] == idx);
    CHECK(cloud.source_pixels[i][0] == static_cast<int>(idx % 32));
  }
}

TEST_CASE("sampling with replacement when the mask is small") {
  const FeaturePatch p = index_patch(8, 8);
  Mask m(8, 8);
  m.set(1, 1, true);
  m.set(2, 5, true);
  m.set(7, 7, true);
  const auto cloud = sample_points(p, m, 100, 1);
  CHECK(cloud.size() == 100);
  std::set<std::uint32_t> seen(cloud.patch_indices.begin(), cloud.patch_indices.end());
  CHECK(seen == std::set<std::uint32_t>{9, 42, 63});
}

TEST_CASE("sampling errors") {
  const FeaturePatch p = index_patch(8, 8);
  try {
    sample_points(p, Mask(8, 8), 4, 1);
    FAIL("expected EmptyMask");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyMask);
  }
  CHECK_THROWS_AS(sample_points(p, Mask(8, 7, 1), 4, 1), Error);
}

TEST_CASE("sampling is deterministic per seed") {
  const FeaturePatch p = index_patch(20, 20);
  const Mask m(20, 20, 1);
  CHECK(sample_points(p, m, 50, 3).patch_indices == sample_points(p, m, 50, 3).patch_indices);
  CHECK(sample_points(p, m, 50, 3).patch_indices != sample_points(p, m, 50, 4).patch_indices);
}

TEST_CASE("sampling is uniform over the mask") {
  // 16 pixels, draw 4 per seed over 8000 seeds: each pixel expects 2000 hits.
  const FeaturePatch p = index_patch(4, 4);
  const Mask m(4, 4, 1);
  std::array<int, 16> hits{};
  for (std::uint64_t s = 0; s < 8000; ++s)
    for (auto idx : sample_points(p, m, 4, s).patch_indices) ++hits[idx];
  double chi2 = 0;
  for (int h : hits) chi2 += (h - 2000.0) * (h - 2000.0) / 2000.0;
  // 15 degrees of freedom; p = 0.001 at 37.7.
  CHECK(chi2 < 37.7);
}

TEST_CASE("cloud CSV round trip is exact") {
  Rng rng(12);
  FeaturePatch p = index_patch(10, 10);
  for (auto& row : p.features)
    for (double& x : row) x = rng.normal() * 1e3 + 1.0 / 3.0;
  const auto cloud = sample_points(p, Mask(10, 10, 1), 40, 5);
  std::stringstream ss;
  write_cloud_csv(ss, cloud);
  const auto back = read_cloud_csv(ss);
  REQUIRE(back.size() == cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    CHECK(back.rows[i] == cloud.rows[i]);
    CHECK(back.source_pixels[i] == cloud.source_pixels[i]);
  }
}

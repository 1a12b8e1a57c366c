#include "tpose/feature_fusion.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include "tpose/rng.hpp"

namespace tpose {

Mask PatchBundle::sample_mask() const {
  Mask m(size, size);
  for (std::size_t i = 0; i < m.bits.size(); ++i)
    m.bits[i] = (instance_mask.bits[i] && transparency_mask.bits[i]) ? 1 : 0;
  return m;
}

PatchBundle extract_patch(const PatchSource& src, int instance_id, const PixelRect& box,
                          const CategoryLabel& category, int size, double ray_exponent) {
  const Intrinsics& K = *src.K;
  if (size <= 0) throw Error(ErrorCode::InvalidArgument, "patch size must be positive");
  if (box.empty() || box.x < 0 || box.y < 0 || box.x + box.width > K.width || box.y + box.height > K.height)
    throw Error(ErrorCode::OutOfBounds, "bounding box outside the image");

  PatchBundle b;
  b.box = box;
  b.size = size;
  b.category = category;
  b.rgb = ColorImage(size, size);
  b.raw_depth = DepthMap(size, size);
  b.rays = RayMap(size, size);
  b.instance_mask = Mask(size, size);
  b.transparency_mask = Mask(size, size);
  b.source_u.resize(static_cast<std::size_t>(size) * size);
  b.source_v.resize(b.source_u.size());

  std::vector<int> col_u(size), row_v(size);
  for (int i = 0; i < size; ++i) {
    col_u[i] = box.x + std::min(box.width - 1, static_cast<int>((i + 0.5) * box.width / size));
    row_v[i] = box.y + std::min(box.height - 1, static_cast<int>((i + 0.5) * box.height / size));
  }
  const bool use_map = src.rays && ray_exponent == 1.0;
  for (int j = 0; j < size; ++j) {
    const int v = row_v[j];
    for (int i = 0; i < size; ++i) {
      const int u = col_u[i];
      const std::size_t p = static_cast<std::size_t>(j) * size + i;
      b.source_u[p] = u;
      b.source_v[p] = v;
      b.rgb.rgb[p] = src.rgb->at(u, v);
      b.raw_depth.depth[p] = src.raw_depth->at(u, v);
      b.rays.normals[p] = use_map ? src.rays->at(u, v) : ray_direction(K, u, v, ray_exponent);
      b.instance_mask.bits[p] = src.instances->at(u, v) == instance_id ? 1 : 0;
      b.transparency_mask.bits[p] = src.transparency->at(u, v) ? 1 : 0;
    }
  }
  return b;
}

FeaturePatch assemble_features(const PatchBundle& bundle) {
  const int s = bundle.size;
  const auto check = [s](int w, int h, const char* what) {
    if (w != s || h != s) {
      std::ostringstream os;
      os << what << " patch is " << w << "x" << h << ", expected " << s << "x" << s;
      throw Error(ErrorCode::ShapeMismatch, os.str());
    }
  };
  check(bundle.rgb.width, bundle.rgb.height, "rgb");
  check(bundle.completed_depth.width, bundle.completed_depth.height, "completed depth");
  check(bundle.normals.width, bundle.normals.height, "normal");
  check(bundle.rays.width, bundle.rays.height, "ray");
  check(bundle.instance_mask.width, bundle.instance_mask.height, "instance mask");
  check(bundle.transparency_mask.width, bundle.transparency_mask.height, "transparency mask");

  FeaturePatch fp;
  fp.width = s;
  fp.height = s;
  fp.source_u = bundle.source_u;
  fp.source_v = bundle.source_v;
  fp.features.resize(static_cast<std::size_t>(s) * s);
  for (std::size_t p = 0; p < fp.features.size(); ++p) {
    auto& f = fp.features[p];
    const Vec3& c = bundle.rgb.rgb[p];
    const Vec3& n = bundle.normals.normals[p];
    const Vec3& r = bundle.rays.normals[p];
    f = {c.x(), c.y(), c.z(), bundle.completed_depth.depth[p], n.x(), n.y(), n.z(), r.x(), r.y(), r.z()};
  }
  return fp;
}

GeneralizedPointCloud sample_points(const FeaturePatch& patch, const Mask& mask, std::size_t count,
                                    std::uint64_t seed) {
  if (mask.width != patch.width || mask.height != patch.height)
    throw Error(ErrorCode::ShapeMismatch, "mask does not match the feature patch");
  std::vector<std::uint32_t> population;
  for (std::size_t i = 0; i < mask.bits.size(); ++i)
    if (mask.bits[i]) population.push_back(static_cast<std::uint32_t>(i));
  if (population.empty()) throw Error(ErrorCode::EmptyMask, "no pixels to sample");

  Rng rng(seed);
  std::vector<std::uint32_t> picked;
  picked.reserve(count);
  if (population.size() >= count) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + rng.below(population.size() - i);
      std::swap(population[i], population[j]);
      picked.push_back(population[i]);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) picked.push_back(population[rng.below(population.size())]);
  }

  GeneralizedPointCloud cloud;
  cloud.rows.reserve(count);
  for (std::uint32_t p : picked) {
    cloud.rows.push_back(patch.features[p]);
    cloud.source_pixels.push_back({patch.source_u[p], patch.source_v[p]});
    cloud.patch_indices.push_back(p);
  }
  return cloud;
}

void write_cloud_csv(std::ostream& os, const GeneralizedPointCloud& cloud) {
  os << "u,v,r,g,b,depth,nx,ny,nz,rx,ry,rz\n";
  char buf[32];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    os << cloud.source_pixels[i][0] << ',' << cloud.source_pixels[i][1];
    for (double f : cloud.rows[i]) {
      const auto res = std::to_chars(buf, buf + sizeof(buf), f);
      os << ',' << std::string_view(buf, res.ptr - buf);
    }
    os << '\n';
  }
}

GeneralizedPointCloud read_cloud_csv(std::istream& is) {
  GeneralizedPointCloud cloud;
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorCode::SchemaMismatch, "empty cloud csv");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::array<double, kFeatureWidth + 2> vals{};
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (std::size_t k = 0; k < vals.size(); ++k) {
      const auto res = std::from_chars(p, end, vals[k]);
      if (res.ec != std::errc()) throw Error(ErrorCode::SchemaMismatch, "bad cloud csv row: " + line);
      p = res.ptr;
      if (k + 1 < vals.size()) {
        if (p == end || *p != ',') throw Error(ErrorCode::SchemaMismatch, "bad cloud csv row: " + line);
        ++p;
      }
    }
    cloud.source_pixels.push_back({static_cast<int>(vals[0]), static_cast<int>(vals[1])});
    std::array<double, kFeatureWidth> row{};
    std::copy(vals.begin() + 2, vals.end(), row.begin());
    cloud.rows.push_back(row);
    cloud.patch_indices.push_back(static_cast<std::uint32_t>(cloud.patch_indices.size()));
  }
  return cloud;
}

}  // namespace tpose

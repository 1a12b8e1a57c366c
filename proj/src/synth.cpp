#include "tpose/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "tpose/io.hpp"

namespace tpose {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMinT = 1e-9;

struct Hit {
  double t = kInf;
  Vec3 n = Vec3::Zero();

  void offer(double tt, const Vec3& nn) {
    if (tt > kMinT && tt < t) {
      t = tt;
      n = nn;
    }
  }
};

/// Real roots of a t² + b t + c, ascending; false if none.
bool quadratic(double a, double b, double c, double& t0, double& t1) {
  if (a == 0.0) return false;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return false;
  const double sq = std::sqrt(disc);
  const double q = b < 0.0 ? -0.5 * (b - sq) : -0.5 * (b + sq);
  t0 = q / a;
  t1 = q != 0.0 ? c / q : t0;
  if (t0 > t1) std::swap(t0, t1);
  return true;
}

/// Closed cylinder around the z-axis, radius r, z in [z0, z1].
void hit_cylinder(const Vec3& o, const Vec3& d, double r, double z0, double z1, Hit& hit) {
  double t0, t1;
  if (quadratic(d.x() * d.x() + d.y() * d.y(), 2.0 * (o.x() * d.x() + o.y() * d.y()),
                o.x() * o.x() + o.y() * o.y() - r * r, t0, t1)) {
    for (double t : {t0, t1}) {
      const Vec3 p = o + t * d;
      if (p.z() >= z0 && p.z() <= z1) hit.offer(t, Vec3(p.x() / r, p.y() / r, 0.0));
    }
  }
  if (d.z() != 0.0) {
    for (double z : {z0, z1}) {
      const double t = (z - o.z()) / d.z();
      const Vec3 p = o + t * d;
      if (p.x() * p.x() + p.y() * p.y() <= r * r) hit.offer(t, Vec3(0.0, 0.0, z == z1 ? 1.0 : -1.0));
    }
  }
}

/// Part of the sphere (center c, radius r) with z <= z_top. `inward` flips
/// the normal toward the center.
void hit_sphere_below(const Vec3& o, const Vec3& d, const Vec3& c, double r, double z_top, bool inward, Hit& hit) {
  const Vec3 oc = o - c;
  double t0, t1;
  if (!quadratic(d.squaredNorm(), 2.0 * oc.dot(d), oc.squaredNorm() - r * r, t0, t1)) return;
  for (double t : {t0, t1}) {
    const Vec3 p = o + t * d;
    if (p.z() <= z_top) hit.offer(t, (inward ? (c - p) : (p - c)) / r);
  }
}

void hit_box(const Vec3& o, const Vec3& d, const Vec3& half, Hit& hit) {
  double t_near = -kInf, t_far = kInf;
  int axis = -1;
  double sign = 0.0;
  for (int i = 0; i < 3; ++i) {
    if (d[i] == 0.0) {
      if (std::abs(o[i]) > half[i]) return;
      continue;
    }
    double ta = (-half[i] - o[i]) / d[i];
    double tb = (half[i] - o[i]) / d[i];
    double s = -1.0;
    if (ta > tb) {
      std::swap(ta, tb);
      s = 1.0;
    }
    if (ta > t_near) {
      t_near = ta;
      axis = i;
      sign = s;
    }
    t_far = std::min(t_far, tb);
  }
  if (axis < 0 || t_near > t_far) return;
  Vec3 n = Vec3::Zero();
  n[axis] = sign;
  hit.offer(t_near, n);
}

/// Intersection in the object frame; d need not be unit length.
Hit intersect_primitive(Primitive prim, const Vec3& e, const Vec3& o, const Vec3& d) {
  Hit hit;
  switch (prim) {
    case Primitive::Cylinder:
      hit_cylinder(o, d, 0.5 * e.x(), -0.5 * e.z(), 0.5 * e.z(), hit);
      break;
    case Primitive::Box:
      hit_box(o, d, 0.5 * e, hit);
      break;
    case Primitive::Bowl: {
      const double r = 0.5 * e.x();
      const double ri = 0.9 * r;
      const double top = 0.5 * e.z();
      const Vec3 c(0.0, 0.0, top);
      hit_sphere_below(o, d, c, r, top, false, hit);
      hit_sphere_below(o, d, c, ri, top, true, hit);
      if (d.z() != 0.0) {
        const double t = (top - o.z()) / d.z();
        const Vec3 p = o + t * d;
        const double rr = p.x() * p.x() + p.y() * p.y();
        if (rr >= ri * ri && rr <= r * r) hit.offer(t, Vec3::UnitZ());
      }
      break;
    }
    case Primitive::Stemmed: {
      const double r = 0.5 * e.x();
      const double h = e.z();
      const double z0 = -0.5 * h;
      hit_cylinder(o, d, 0.75 * r, z0, z0 + 0.06 * h, hit);
      hit_cylinder(o, d, 0.12 * r, z0 + 0.06 * h, z0 + 0.5 * h, hit);
      hit_cylinder(o, d, r, z0 + 0.5 * h, 0.5 * h, hit);
      break;
    }
  }
  if (hit.t < kInf && hit.n.dot(d) > 0.0) hit.n = -hit.n;
  return hit;
}

/// Pixel rectangle covering the projection of the object's box, clipped to
/// the image; empty if any corner is behind the camera.
PixelRect projected_rect(const Intrinsics& K, const Pose& pose, const Vec3& extents) {
  const auto corners = box_corners(OrientedBox{pose, Scale(extents)});
  double u0 = kInf, v0 = kInf, u1 = -kInf, v1 = -kInf;
  for (const Vec3& c : corners) {
    if (c.z() <= 1e-6) return {};
    const double u = K.fx * c.x() / c.z() + K.cx;
    const double v = K.fy * c.y() / c.z() + K.cy;
    u0 = std::min(u0, u);
    u1 = std::max(u1, u);
    v0 = std::min(v0, v);
    v1 = std::max(v1, v);
  }
  const int x0 = std::max(0, static_cast<int>(std::floor(u0)) - 1);
  const int y0 = std::max(0, static_cast<int>(std::floor(v0)) - 1);
  const int x1 = std::min(K.width - 1, static_cast<int>(std::ceil(u1)) + 1);
  const int y1 = std::min(K.height - 1, static_cast<int>(std::ceil(v1)) + 1);
  if (x1 < x0 || y1 < y0) return {};
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

bool rects_overlap(const PixelRect& a, const PixelRect& b, int margin) {
  return a.x - margin < b.x + b.width && b.x - margin < a.x + a.width && a.y - margin < b.y + b.height &&
         b.y - margin < a.y + a.height;
}

const ObjectTemplate& template_for(const std::vector<ObjectTemplate>& templates, const CategoryLabel& c) {
  for (const auto& t : templates)
    if (t.category == c) return t;
  throw Error(ErrorCode::InvalidArgument, "no template for category " + std::string(c.name()));
}

/// Unit vector perpendicular to `n`.
Vec3 any_perpendicular(const Vec3& n) { return n.unitOrthogonal(); }

nlohmann::ordered_json pose_to_json(const Pose& p) {
  const Mat4 h = p.homogeneous();
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (int r = 0; r < 4; ++r) rows.push_back({h(r, 0), h(r, 1), h(r, 2), h(r, 3)});
  return rows;
}

Pose pose_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw Error(ErrorCode::SchemaMismatch, "pose must be a 4x4 array");
  Mat4 h;
  for (int r = 0; r < 4; ++r) {
    if (!j[r].is_array() || j[r].size() != 4) throw Error(ErrorCode::SchemaMismatch, "pose must be a 4x4 array");
    for (int c = 0; c < 4; ++c) h(r, c) = j[r][c].get<double>();
  }
  return Pose::from_homogeneous(h);
}

nlohmann::ordered_json intrinsics_to_json(const Intrinsics& K) {
  nlohmann::ordered_json j;
  j["fx"] = K.fx;
  j["fy"] = K.fy;
  j["cx"] = K.cx;
  j["cy"] = K.cy;
  j["width"] = K.width;
  j["height"] = K.height;
  return j;
}

Intrinsics intrinsics_from_json(const nlohmann::json& j) {
  Intrinsics K;
  K.fx = j.at("fx").get<double>();
  K.fy = j.at("fy").get<double>();
  K.cx = j.at("cx").get<double>();
  K.cy = j.at("cy").get<double>();
  K.width = j.at("width").get<int>();
  K.height = j.at("height").get<int>();
  K.validate();
  return K;
}

std::string join(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

}  // namespace

const char* primitive_name(Primitive p) {
  switch (p) {
    case Primitive::Cylinder: return "cylinder";
    case Primitive::Bowl: return "bowl";
    case Primitive::Box: return "box";
    case Primitive::Stemmed: return "stemmed";
  }
  return "?";
}

Primitive parse_primitive(std::string_view name) {
  for (Primitive p : {Primitive::Cylinder, Primitive::Bowl, Primitive::Box, Primitive::Stemmed})
    if (name == primitive_name(p)) return p;
  throw Error(ErrorCode::InvalidArgument, "unknown primitive '" + std::string(name) + "'");
}

SymmetryClass ObjectTemplate::symmetry() const {
  return primitive == Primitive::Box ? SymmetryClass::planar({0.0, std::numbers::pi}) : SymmetryClass::axial();
}

Vec3 ObjectTemplate::sample_extents(Rng& rng) const {
  const double fr = 1.0 + rng.uniform(-radial_jitter, radial_jitter);
  const double fh = 1.0 + rng.uniform(-height_jitter, height_jitter);
  switch (primitive) {
    case Primitive::Cylinder:
    case Primitive::Stemmed:
      return Vec3(nominal.x() * fr, nominal.x() * fr, nominal.z() * fh);
    case Primitive::Bowl:
      return Vec3(nominal.x() * fr, nominal.x() * fr, 0.5 * nominal.x() * fr);
    case Primitive::Box: {
      const double fy = 1.0 + rng.uniform(-radial_jitter, radial_jitter);
      return Vec3(nominal.x() * fr, nominal.y() * fy, nominal.z() * fh);
    }
  }
  return nominal;
}

std::vector<ObjectTemplate> default_templates() {
  return {
      {CategoryLabel(0), Primitive::Cylinder, Vec3(0.07, 0.07, 0.22), 0.15, 0.15},
      {CategoryLabel(1), Primitive::Bowl, Vec3(0.16, 0.16, 0.08), 0.15, 0.0},
      {CategoryLabel(2), Primitive::Box, Vec3(0.15, 0.10, 0.08), 0.15, 0.15},
      {CategoryLabel(3), Primitive::Box, Vec3(0.18, 0.09, 0.04), 0.15, 0.15},
      {CategoryLabel(4), Primitive::Cylinder, Vec3(0.08, 0.08, 0.11), 0.15, 0.15},
      {CategoryLabel(5), Primitive::Stemmed, Vec3(0.08, 0.08, 0.18), 0.15, 0.15},
  };
}

void CorruptionModel::validate() const {
  if (!(dropout >= 0.0 && dropout <= 1.0)) throw Error(ErrorCode::InvalidArgument, "dropout must lie in [0, 1]");
  if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::InvalidArgument, "noise sigma must be >= 0");
  if (!(warp_amplitude >= 0.0)) throw Error(ErrorCode::InvalidArgument, "warp amplitude must be >= 0");
  if (!(warp_period > 0.0)) throw Error(ErrorCode::InvalidArgument, "warp period must be > 0");
  if (bleed_radius < 0) throw Error(ErrorCode::InvalidArgument, "bleed radius must be >= 0");
}

void SceneConfig::validate() const {
  K.validate();
  corruption.validate();
  if (min_instances < 0 || max_instances < min_instances || max_instances > 8)
    throw Error(ErrorCode::InvalidArgument, "instance count range must satisfy 0 <= min <= max <= 8");
  if (!(min_distance > 0.0) || max_distance < min_distance || !(background_depth > max_distance))
    throw Error(ErrorCode::InvalidArgument, "distances must satisfy 0 < min <= max < background");
  if (templates.empty() && max_instances > 0) throw Error(ErrorCode::InvalidArgument, "no object templates");
  if (max_attempts < 1) throw Error(ErrorCode::InvalidArgument, "max_attempts must be >= 1");
  if (fixed.size() > 8) throw Error(ErrorCode::InvalidArgument, "at most 8 fixed instances");
}

Mask SceneFrame::instance_mask(int id) const {
  Mask m(instance_map.width, instance_map.height);
  for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = instance_map.ids[i] == id ? 1 : 0;
  return m;
}

SceneFrame render_instances(const Intrinsics& K, const std::vector<InstanceAnnotation>& instances,
                            double background_depth, std::uint64_t albedo_seed) {
  K.validate();
  SceneFrame f;
  f.K = K;
  f.background_depth = background_depth;
  f.depth_gt = DepthMap(K.width, K.height, background_depth);
  f.normals_gt = NormalMap(K.width, K.height);
  f.instance_map = InstanceMap(K.width, K.height);
  f.transparency = Mask(K.width, K.height);
  f.rgb = ColorImage(K.width, K.height);
  for (Vec3& n : f.normals_gt.normals) n = Vec3(0.0, 0.0, -1.0);

  Rng rng(albedo_seed);
  std::vector<Vec3> albedo;
  for (std::size_t k = 0; k < instances.size(); ++k) {
    const double r = rng.uniform(0.2, 0.9);
    const double g = rng.uniform(0.2, 0.9);
    const double b = rng.uniform(0.2, 0.9);
    albedo.emplace_back(r, g, b);
  }

  for (const auto& inst : instances) {
    const Vec3& e = inst.scale.extents();
    const PixelRect rect = projected_rect(K, inst.pose, e);
    if (rect.empty()) continue;
    const Mat3 Rt = inst.pose.rotation.matrix().transpose();
    const Vec3 o = -(Rt * inst.pose.translation);
    for (int v = rect.y; v < rect.y + rect.height; ++v)
      for (int u = rect.x; u < rect.x + rect.width; ++u) {
        const Vec3 q((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
        const Hit hit = intersect_primitive(inst.primitive, e, o, Rt * q);
        const std::size_t i = f.depth_gt.index(u, v);
        if (hit.t < f.depth_gt.depth[i]) {
          f.depth_gt.depth[i] = hit.t;
          f.normals_gt.normals[i] = (inst.pose.rotation * hit.n).normalized();
          f.instance_map.ids[i] = static_cast<std::uint16_t>(inst.id);
        }
      }
  }

  std::vector<std::array<int, 4>> bounds(instances.size(), {K.width, K.height, -1, -1});
  for (int v = 0; v < K.height; ++v)
    for (int u = 0; u < K.width; ++u) {
      const std::size_t i = f.depth_gt.index(u, v);
      const int id = f.instance_map.ids[i];
      const Vec3 q((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
      const double shade = 0.35 + 0.65 * std::abs(f.normals_gt.normals[i].dot(q.normalized()));
      if (id == 0) {
        f.rgb.rgb[i] = Vec3(0.55 + 0.25 * v / K.height, 0.5, 0.45 + 0.25 * u / K.width);
        continue;
      }
      f.transparency.bits[i] = 1;
      for (std::size_t k = 0; k < instances.size(); ++k) {
        if (instances[k].id != id) continue;
        f.rgb.rgb[i] = albedo[k] * shade;
        auto& b = bounds[k];
        b[0] = std::min(b[0], u);
        b[1] = std::min(b[1], v);
        b[2] = std::max(b[2], u);
        b[3] = std::max(b[3], v);
      }
    }

  f.instances = instances;
  for (std::size_t k = 0; k < instances.size(); ++k) {
    const auto& b = bounds[k];
    f.instances[k].bbox = b[2] < 0 ? PixelRect{} : PixelRect{b[0], b[1], b[2] - b[0] + 1, b[3] - b[1] + 1};
  }
  f.depth_raw = f.depth_gt;
  return f;
}

SceneFrame generate_scene(const SceneConfig& config, std::uint64_t seed) {
  config.validate();
  const Intrinsics& K = config.K;
  Rng rng(derive_seed(seed, 0));
  std::vector<InstanceAnnotation> placed;

  if (!config.fixed.empty()) {
    for (const auto& fi : config.fixed) {
      const ObjectTemplate& tpl = template_for(config.templates, fi.category);
      InstanceAnnotation a;
      a.id = static_cast<int>(placed.size()) + 1;
      a.category = fi.category;
      a.primitive = tpl.primitive;
      a.symmetry = tpl.symmetry();
      a.pose = fi.pose;
      a.scale = Scale(fi.extents);
      placed.push_back(a);
    }
  } else {
    const int count = config.min_instances +
                      static_cast<int>(rng.below(static_cast<std::uint64_t>(config.max_instances - config.min_instances + 1)));
    const double elevation =
        rng.uniform(config.min_elevation_deg, config.max_elevation_deg) * std::numbers::pi / 180.0;
    const Vec3 up(0.0, -std::cos(elevation), -std::sin(elevation));
    std::vector<PixelRect> rects;
    for (int k = 0; k < count; ++k) {
      const ObjectTemplate& tpl = config.templates[rng.below(config.templates.size())];
      const Vec3 extents = tpl.sample_extents(rng);
      bool ok = false;
      for (int attempt = 0; attempt < config.max_attempts && !ok; ++attempt) {
        // Up axis tilted by a small random angle, then a uniform yaw.
        const Vec3 tilt_axis =
            RotationMatrix::about_axis(up, rng.uniform(0.0, 2.0 * std::numbers::pi)) * any_perpendicular(up);
        const double tilt = rng.uniform(0.0, config.max_tilt_deg) * std::numbers::pi / 180.0;
        const Vec3 z = RotationMatrix::about_axis(tilt_axis, tilt) * up;
        const Vec3 x = RotationMatrix::about_axis(z, rng.uniform(0.0, 2.0 * std::numbers::pi)) * any_perpendicular(z);
        const double u = rng.uniform(0.1 * K.width, 0.9 * K.width);
        const double v = rng.uniform(0.1 * K.height, 0.9 * K.height);
        const double depth = rng.uniform(config.min_distance, config.max_distance);

        Pose pose;
        pose.rotation = rotation_from_axes(x.normalized(), z.normalized());
        pose.translation = backproject(K, u, v, depth);
        const PixelRect rect = projected_rect(K, pose, extents);
        // Whole object on screen, clear of every other object's screen box.
        if (rect.empty() || rect.x == 0 || rect.y == 0 || rect.x + rect.width >= K.width ||
            rect.y + rect.height >= K.height)
          continue;
        if (std::any_of(rects.begin(), rects.end(), [&](const PixelRect& r) { return rects_overlap(r, rect, 2); }))
          continue;

        InstanceAnnotation a;
        a.id = k + 1;
        a.category = tpl.category;
        a.primitive = tpl.primitive;
        a.symmetry = tpl.symmetry();
        a.pose = pose;
        a.scale = Scale(extents);
        placed.push_back(a);
        rects.push_back(rect);
        ok = true;
      }
      if (!ok)
        throw Error(ErrorCode::PlacementFailure,
                    "could not place instance " + std::to_string(k + 1) + " after " +
                        std::to_string(config.max_attempts) + " attempts");
    }
  }

  SceneFrame f = render_instances(K, placed, config.background_depth, derive_seed(seed, 1));
  f.seed = seed;
  f.depth_raw = corrupt_depth(f, config.corruption, derive_seed(seed, 2));
  return f;
}

DepthMap corrupt_depth(const SceneFrame& frame, const CorruptionModel& model, std::uint64_t seed) {
  model.validate();
  const DepthMap& gt = frame.depth_gt;
  const Mask& mt = frame.transparency;
  DepthMap out = gt;
  Rng rng(seed);
  const double phase_u = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double phase_v = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double w = 2.0 * std::numbers::pi / model.warp_period;
  const int r = model.bleed_radius;

  auto near_border = [&](int u, int v) {
    for (int dv = -r; dv <= r; ++dv)
      for (int du = -r; du <= r; ++du) {
        const int uu = u + du, vv = v + dv;
        if (uu < 0 || vv < 0 || uu >= mt.width || vv >= mt.height) continue;
        if (!mt.at(uu, vv)) return true;
      }
    return false;
  };

  for (int v = 0; v < gt.height; ++v)
    for (int u = 0; u < gt.width; ++u) {
      if (!mt.at(u, v)) continue;
      // Both draws happen for every M_t pixel so the stream does not depend
      // on the model parameters.
      const double noise = rng.normal();
      const double drop = rng.uniform();
      double d = gt.at(u, v);
      d += model.warp_amplitude * std::sin(w * u + phase_u) * std::sin(w * v + phase_v);
      d += model.noise_sigma * noise;
      if (r > 0 && near_border(u, v)) d = frame.background_depth;
      if (drop < model.dropout || !(d > 0.0)) d = 0.0;
      out.at(u, v) = d;
    }
  return out;
}

CategoryPriors priors_from_annotations(const std::vector<InstanceAnnotation>& instances,
                                       const std::vector<ObjectTemplate>& templates) {
  std::array<Vec3, kNumCategories> sum;
  std::array<std::size_t, kNumCategories> count{};
  for (auto& s : sum) s.setZero();
  for (const auto& a : instances) {
    sum[a.category.id()] += a.scale.extents();
    ++count[a.category.id()];
  }
  CategoryPriors priors;
  for (int c = 0; c < kNumCategories; ++c) {
    if (count[c] > 0) {
      priors.set(CategoryLabel(c), sum[c] / static_cast<double>(count[c]));
    } else {
      for (const auto& t : templates)
        if (t.category.id() == c) {
          priors.set(t.category, t.nominal);
          break;
        }
    }
  }
  return priors;
}

std::string frame_file(const std::string& pattern, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu", index);
  const auto pos = pattern.find('#');
  return pattern.substr(0, pos) + buf + pattern.substr(pos + 1);
}

std::string annotations_to_json(const std::vector<InstanceAnnotation>& instances) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& a : instances) {
    nlohmann::ordered_json j;
    j["id"] = a.id;
    j["category"] = std::string(a.category.name());
    j["primitive"] = primitive_name(a.primitive);
    j["symmetry"] = a.symmetry.to_string();
    j["pose"] = pose_to_json(a.pose);
    j["scale"] = {a.scale.extents().x(), a.scale.extents().y(), a.scale.extents().z()};
    j["bbox"] = {a.bbox.x, a.bbox.y, a.bbox.width, a.bbox.height};
    arr.push_back(j);
  }
  nlohmann::ordered_json root;
  root["instances"] = arr;
  return root.dump(2) + "\n";
}

std::vector<InstanceAnnotation> annotations_from_json(const std::string& text) {
  std::vector<InstanceAnnotation> out;
  try {
    const auto root = nlohmann::json::parse(text);
    for (const auto& j : root.at("instances")) {
      InstanceAnnotation a;
      a.id = j.at("id").get<int>();
      a.category = CategoryLabel::from_name(j.at("category").get<std::string>());
      a.primitive = parse_primitive(j.at("primitive").get<std::string>());
      a.symmetry = SymmetryClass::parse(j.at("symmetry").get<std::string>());
      a.pose = pose_from_json(j.at("pose"));
      const auto& s = j.at("scale");
      a.scale = Scale(s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>());
      const auto& b = j.at("bbox");
      a.bbox = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
      out.push_back(a);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, std::string("annotations: ") + e.what());
  }
  return out;
}

ManifestEntry write_frame(const SceneFrame& frame, const std::string& directory, std::size_t index) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + directory + ": " + ec.message());
  io::write_rgb_png(join(directory, frame_file("rgb_#.png", index)), frame.rgb);
  io::write_depth_png(join(directory, frame_file("depth_#.png", index)), frame.depth_raw);
  io::write_depth_png(join(directory, frame_file("depth_gt_#.png", index)), frame.depth_gt);
  io::write_normals(join(directory, frame_file("normal_#.f32", index)), frame.normals_gt);
  io::write_instance_png(join(directory, frame_file("mask_#.png", index)), frame.instance_map);

  nlohmann::ordered_json anno = nlohmann::ordered_json::parse(annotations_to_json(frame.instances));
  nlohmann::ordered_json root;
  root["seed"] = frame.seed;
  root["background_depth"] = frame.background_depth;
  root["instances"] = anno["instances"];
  io::write_text(join(directory, frame_file("anno_#.json", index)), root.dump(2) + "\n");
  return {index, frame.seed, frame.instances.size()};
}

std::string write_manifest(const std::string& directory, const Intrinsics& K, std::uint64_t master_seed,
                           const std::vector<ManifestEntry>& entries, const CategoryPriors& priors) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + directory + ": " + ec.message());
  io::write_text(join(directory, "intrinsics.json"), intrinsics_to_json(K).dump(2) + "\n");
  priors.save(join(directory, "priors.json"));

  nlohmann::ordered_json m;
  m["format"] = "tpose-synth/1";
  m["master_seed"] = master_seed;
  m["frame_count"] = entries.size();
  m["intrinsics"] = "intrinsics.json";
  m["priors_file"] = "priors.json";
  m["priors"] = nlohmann::ordered_json::parse(priors.to_json());
  nlohmann::ordered_json frames = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    nlohmann::ordered_json f;
    f["index"] = e.index;
    f["seed"] = e.seed;
    f["instances"] = e.instances;
    f["files"] = {{"rgb", frame_file("rgb_#.png", e.index)},
                  {"depth", frame_file("depth_#.png", e.index)},
                  {"depth_gt", frame_file("depth_gt_#.png", e.index)},
                  {"normal", frame_file("normal_#.f32", e.index)},
                  {"mask", frame_file("mask_#.png", e.index)},
                  {"anno", frame_file("anno_#.json", e.index)}};
    frames.push_back(f);
  }
  m["frames"] = frames;
  const std::string path = join(directory, "manifest.json");
  io::write_text(path, m.dump(2) + "\n");
  return path;
}

std::string write_dataset(const std::vector<SceneFrame>& frames, const std::string& directory,
                          std::uint64_t master_seed, const std::vector<ObjectTemplate>& templates) {
  std::vector<ManifestEntry> entries;
  std::vector<InstanceAnnotation> all;
  Intrinsics K;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    entries.push_back(write_frame(frames[i], directory, i));
    all.insert(all.end(), frames[i].instances.begin(), frames[i].instances.end());
    K = frames[i].K;
  }
  return write_manifest(directory, K, master_seed, entries, priors_from_annotations(all, templates));
}

Dataset open_dataset(const std::string& directory) {
  if (!std::filesystem::is_directory(directory)) throw Error(ErrorCode::IoFailure, "no dataset at " + directory);
  Dataset ds;
  ds.directory = directory;
  try {
    ds.K = intrinsics_from_json(nlohmann::json::parse(io::read_text(join(directory, "intrinsics.json"))));
    const auto m = nlohmann::json::parse(io::read_text(join(directory, "manifest.json")));
    if (m.at("format").get<std::string>() != "tpose-synth/1")
      throw Error(ErrorCode::SchemaMismatch, "unknown dataset format");
    ds.master_seed = m.at("master_seed").get<std::uint64_t>();
    for (const auto& f : m.at("frames"))
      ds.frames.push_back({f.at("index").get<std::size_t>(), f.at("seed").get<std::uint64_t>(),
                           f.at("instances").get<std::size_t>()});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, directory + ": " + e.what());
  }
  ds.priors = CategoryPriors::load(join(directory, "priors.json"));
  return ds;
}

SceneFrame load_frame(const Dataset& ds, std::size_t index) {
  const std::string& dir = ds.directory;
  SceneFrame f;
  f.K = ds.K;
  f.rgb = io::read_rgb_png(join(dir, frame_file("rgb_#.png", index)));
  f.depth_raw = io::read_depth_png(join(dir, frame_file("depth_#.png", index)));
  f.depth_gt = io::read_depth_png(join(dir, frame_file("depth_gt_#.png", index)));
  f.normals_gt = io::read_normals(join(dir, frame_file("normal_#.f32", index)));
  f.instance_map = io::read_instance_png(join(dir, frame_file("mask_#.png", index)));
  const int w = ds.K.width, h = ds.K.height;
  auto check = [&](int ww, int hh, const char* what) {
    if (ww != w || hh != h) throw Error(ErrorCode::SchemaMismatch, std::string(what) + " size differs from intrinsics");
  };
  check(f.rgb.width, f.rgb.height, "rgb");
  check(f.depth_raw.width, f.depth_raw.height, "depth");
  check(f.depth_gt.width, f.depth_gt.height, "depth_gt");
  check(f.normals_gt.width, f.normals_gt.height, "normal");
  check(f.instance_map.width, f.instance_map.height, "mask");

  f.transparency = Mask(w, h);
  for (std::size_t i = 0; i < f.transparency.bits.size(); ++i) f.transparency.bits[i] = f.instance_map.ids[i] ? 1 : 0;

  const std::string text = io::read_text(join(dir, frame_file("anno_#.json", index)));
  f.instances = annotations_from_json(text);
  try {
    const auto root = nlohmann::json::parse(text);
    f.seed = root.at("seed").get<std::uint64_t>();
    f.background_depth = root.at("background_depth").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, std::string("annotations: ") + e.what());
  }
  return f;
}

}  // namespace tpose

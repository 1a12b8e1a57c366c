#include "tpose/losses.hpp"

#include <cmath>
#include <limits>

#include <json.hpp>

#include "tpose/kernels/kernels.hpp"

namespace tpose {

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

VectorLoss l1_loss(const Vec3& pred, const Vec3& gt) {
  const Vec3 d = pred - gt;
  VectorLoss out;
  out.value = d.cwiseAbs().sum();
  out.grad = Vec3(sign(d.x()), sign(d.y()), sign(d.z()));
  return out;
}

Vec3 pixel_direction(const Intrinsics& K, int u, int v) {
  return Vec3((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
}

/// Unnormalized stencil normal c = t_u × t_v at (u, v) and the orientation
/// sign that makes s·c face the camera.
struct Stencil {
  Vec3 tu, tv, c;
  double s = 1.0;
};

bool stencil_at(const Intrinsics& K, const DepthMap& d, int u, int v, Stencil& st) {
  if (u < 1 || v < 1 || u + 1 >= d.width || v + 1 >= d.height) return false;
  if (!d.valid(u, v) || !d.valid(u - 1, v) || !d.valid(u + 1, v) || !d.valid(u, v - 1) || !d.valid(u, v + 1))
    return false;
  st.tu = pixel_direction(K, u + 1, v) * d.at(u + 1, v) - pixel_direction(K, u - 1, v) * d.at(u - 1, v);
  st.tv = pixel_direction(K, u, v + 1) * d.at(u, v + 1) - pixel_direction(K, u, v - 1) * d.at(u, v - 1);
  st.c = st.tu.cross(st.tv);
  const double len = st.c.norm();
  if (!(len > 0.0) || !std::isfinite(len)) return false;
  st.s = st.c.dot(pixel_direction(K, u, v)) > 0.0 ? -1.0 : 1.0;
  return true;
}

}  // namespace

void LossConfig::validate() const {
  for (double w : {smooth_weight, scale_weight, translation_weight, axis_x_weight, axis_z_weight, angular_weight,
                   conf_x_weight, conf_z_weight})
    if (!(w >= 0.0)) throw Error(ErrorCode::InvalidArgument, "loss weights must be >= 0");
  if (!(alpha < 0.0)) throw Error(ErrorCode::InvalidArgument, "alpha must be negative");
}

LossConfig LossConfig::scaled(double k) const {
  LossConfig c = *this;
  c.scale_weight *= k;
  c.translation_weight *= k;
  c.axis_x_weight *= k;
  c.axis_z_weight *= k;
  c.angular_weight *= k;
  c.conf_x_weight *= k;
  c.conf_z_weight *= k;
  return c;
}

VectorLoss translation_loss(const Vec3& pred, const Vec3& gt) { return l1_loss(pred, gt); }

VectorLoss scale_loss(const Vec3& pred, const Vec3& gt) { return l1_loss(pred, gt); }

VectorLoss axis_loss(const Vec3& pred, const Vec3& gt) {
  VectorLoss out = l1_loss(pred, gt);
  out.value += 1.0 - pred.dot(gt);
  out.grad -= gt;
  return out;
}

AngularLoss angular_loss(const Vec3& axis_x, const Vec3& axis_z) {
  return {axis_x.dot(axis_z), axis_z, axis_x};
}

ConfidenceLoss confidence_loss(double conf, const Vec3& pred, const Vec3& gt, double alpha) {
  const Vec3 d = pred - gt;
  const double dist = d.norm();
  const double target = std::exp(alpha * dist);
  const double s = sign(conf - target);
  ConfidenceLoss out;
  out.value = std::abs(conf - target);
  out.grad_conf = s;
  if (dist > 0.0) out.grad_axis = -s * target * alpha * d / dist;
  return out;
}

DepthLoss depth_completion_loss(const DepthMap& pred, const DepthMap& gt, const Mask& mask, const Intrinsics& K,
                                double smooth_weight) {
  if (pred.width != gt.width || pred.height != gt.height || mask.width != gt.width || mask.height != gt.height)
    throw Error(ErrorCode::ShapeMismatch, "depth loss inputs differ in size");

  const auto sums = kernels::active().depth_error_sums(pred.depth.data(), gt.depth.data(), mask.bits.data(), gt.size());
  if (sums.count == 0) throw Error(ErrorCode::EmptyMask, "no masked pixel with valid ground truth");

  DepthLoss out;
  out.gradient.assign(pred.size(), 0.0);
  out.depth_pixels = sums.count;
  out.depth_term = sums.squared / static_cast<double>(sums.count);
  const double inv_n = 1.0 / static_cast<double>(sums.count);
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (mask.bits[i] && DepthMap::is_valid_depth(gt.depth[i]))
      out.gradient[i] = 2.0 * (pred.depth[i] - gt.depth[i]) * inv_n;

  // Smoothness term through the normal stencil.
  struct Term {
    int u, v;
    Stencil st;
    Vec3 g;  // unit gt normal
  };
  std::vector<Term> terms;
  for (int v = 1; v + 1 < gt.height; ++v)
    for (int u = 1; u + 1 < gt.width; ++u) {
      if (!mask.at(u, v)) continue;
      Stencil sp, sg;
      if (!stencil_at(K, pred, u, v, sp) || !stencil_at(K, gt, u, v, sg)) continue;
      terms.push_back({u, v, sp, sg.s * sg.c.normalized()});
    }
  out.smooth_pixels = terms.size();
  if (!terms.empty()) {
    const double inv_m = 1.0 / static_cast<double>(terms.size());
    const double scale = smooth_weight * inv_m;
    double sum = 0.0;
    for (const Term& t : terms) {
      const double len = t.st.c.norm();
      const Vec3 chat = t.st.c / len;
      sum += 1.0 - t.st.s * chat.dot(t.g);
      // d(1 - s·ĉ·g)/dc = -s (I - ĉĉᵀ) g / ‖c‖
      const Vec3 gc = -t.st.s * (t.g - chat * chat.dot(t.g)) / len * scale;
      const Vec3 g_tu = t.st.tv.cross(gc);
      const Vec3 g_tv = gc.cross(t.st.tu);
      out.gradient[pred.index(t.u + 1, t.v)] += pixel_direction(K, t.u + 1, t.v).dot(g_tu);
      out.gradient[pred.index(t.u - 1, t.v)] -= pixel_direction(K, t.u - 1, t.v).dot(g_tu);
      out.gradient[pred.index(t.u, t.v + 1)] += pixel_direction(K, t.u, t.v + 1).dot(g_tv);
      out.gradient[pred.index(t.u, t.v - 1)] -= pixel_direction(K, t.u, t.v - 1).dot(g_tv);
    }
    out.smooth_term = sum * inv_m;
  }
  out.total = out.depth_term + smooth_weight * out.smooth_term;
  return out;
}

NormalLoss normal_loss(const NormalMap& pred, const NormalMap& gt, const Mask& region) {
  if (pred.width != gt.width || pred.height != gt.height || region.width != gt.width || region.height != gt.height)
    throw Error(ErrorCode::ShapeMismatch, "normal loss inputs differ in size");
  std::vector<double> dots(gt.size());
  kernels::active().normal_dots(pred.raw(), gt.raw(), dots.data(), gt.size());

  NormalLoss out;
  out.gradient.assign(gt.size(), Vec3::Zero());
  double sum = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!region.bits[i] || pred.normals[i].isZero(0.0) || gt.normals[i].isZero(0.0)) continue;
    ++out.pixels;
    sum += 1.0 - dots[i];
  }
  if (out.pixels == 0) throw Error(ErrorCode::EmptyRegion, "no valid normals in the region");
  const double inv_n = 1.0 / static_cast<double>(out.pixels);
  out.value = sum * inv_n;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!region.bits[i] || pred.normals[i].isZero(0.0) || gt.normals[i].isZero(0.0)) continue;
    const Vec3& p = pred.normals[i];
    const Vec3& g = gt.normals[i];
    out.gradient[i] = -(g - p * p.dot(g)) * inv_n;
  }
  return out;
}

LossReport total_pose_loss(const PosePrediction& pred, const PoseTarget& target, const LossConfig& config,
                           bool with_gradient) {
  LossReport r;
  PoseLossGradient g;

  const auto lt = translation_loss(pred.translation, target.pose.translation);
  r.translation = lt.value;
  g.translation = config.translation_weight * lt.grad;

  const auto ls = scale_loss(pred.scale, target.scale);
  r.scale = ls.value;
  g.scale = config.scale_weight * ls.grad;

  const Vec3 gt_z = target.pose.rotation.z_axis();
  const auto lz = axis_loss(pred.axis_z, gt_z);
  const auto cz = confidence_loss(pred.conf_z, pred.axis_z, gt_z, config.alpha);
  r.axis_z = lz.value;
  r.conf_z = cz.value;
  g.axis_z = config.axis_z_weight * lz.grad + config.conf_z_weight * cz.grad_axis;
  g.conf_z = config.conf_z_weight * cz.grad_conf;

  const auto la = angular_loss(pred.axis_x, pred.axis_z);
  r.angular = la.value;
  g.axis_x = config.angular_weight * la.grad_x;
  g.axis_z += config.angular_weight * la.grad_z;

  const auto cands = symmetry_candidates(target.symmetry, target.pose);
  if (cands.x_unconstrained) {
    r.x_ignored = true;
  } else {
    double best = std::numeric_limits<double>::infinity();
    VectorLoss best_loss;
    Vec3 best_axis;
    for (std::size_t k = 0; k < cands.poses.size(); ++k) {
      const Vec3 ax = cands.poses[k].rotation.x_axis();
      const auto lx = axis_loss(pred.axis_x, ax);
      if (lx.value < best) {
        best = lx.value;
        best_loss = lx;
        best_axis = ax;
        r.x_candidate = k;
      }
    }
    const auto cx = confidence_loss(pred.conf_x, pred.axis_x, best_axis, config.alpha);
    r.axis_x = best_loss.value;
    r.conf_x = cx.value;
    g.axis_x += config.axis_x_weight * best_loss.grad + config.conf_x_weight * cx.grad_axis;
    g.conf_x = config.conf_x_weight * cx.grad_conf;
  }

  r.total = config.scale_weight * r.scale + config.translation_weight * r.translation +
            config.axis_x_weight * r.axis_x + config.axis_z_weight * r.axis_z + config.angular_weight * r.angular +
            config.conf_x_weight * r.conf_x + config.conf_z_weight * r.conf_z;
  if (with_gradient) r.gradient = g;
  return r;
}

void attach_depth_loss(LossReport& report, const DepthLoss& depth, const LossConfig& config) {
  report.depth = depth.depth_term;
  report.normal_smooth = depth.smooth_term;
  report.total += depth.depth_term + config.smooth_weight * depth.smooth_term;
}

std::string LossReport::to_json() const {
  nlohmann::ordered_json j;
  j["L_d"] = depth;
  j["L_s_normal"] = normal_smooth;
  j["L_t"] = translation;
  j["L_rx"] = axis_x;
  j["L_rz"] = axis_z;
  j["L_a"] = angular;
  j["L_conx"] = conf_x;
  j["L_conz"] = conf_z;
  j["L_scale"] = scale;
  j["total"] = total;
  j["x_ignored"] = x_ignored;
  j["x_candidate"] = x_candidate;
  return j.dump();
}

}  // namespace tpose

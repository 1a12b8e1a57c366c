#include "tpose/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>

#include "tpose/estimators.hpp"
#include "tpose/losses.hpp"
#include "tpose/rng.hpp"

namespace tpose {

namespace {

constexpr double kKink = 1e-4;

using VecX = Eigen::VectorXd;

double relative_error(const VecX& analytic, const VecX& numeric) {
  const double denom = std::max(analytic.norm(), numeric.norm());
  if (denom < 1e-300) return 0.0;
  return (analytic - numeric).norm() / denom;
}

VecX central_difference(const VecX& x, double h, const std::function<double(const VecX&)>& f) {
  VecX g(x.size());
  VecX p = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    p(i) = x(i) + h;
    const double up = f(p);
    p(i) = x(i) - h;
    const double down = f(p);
    p(i) = x(i);
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

Vec3 random_vec(Rng& rng, double sigma = 1.0) { return Vec3(rng.normal(), rng.normal(), rng.normal()) * sigma; }

Vec3 random_unit(Rng& rng) {
  for (;;) {
    const Vec3 v = random_vec(rng);
    if (v.norm() > 1e-6) return v.normalized();
  }
}

RotationMatrix random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return RotationMatrix::nearest(q.toRotationMatrix());
}

bool near_l1_kink(const Vec3& a, const Vec3& b) { return ((a - b).cwiseAbs().array() < kKink).any(); }

bool near_conf_kink(double conf, const Vec3& pred, const Vec3& gt, double alpha) {
  const double d = (pred - gt).norm();
  return d < kKink || std::abs(conf - std::exp(alpha * d)) < kKink;
}

/// Drives one check: `draw` returns false to ask for a redraw, otherwise the
/// relative error of the configuration.
GradcheckResult run_check(const std::string& name, const GradcheckOptions& opt, double tolerance, Rng& rng,
                          const std::function<bool(Rng&, double&)>& draw) {
  GradcheckResult r;
  r.name = name;
  r.tolerance = tolerance;
  while (r.trials < opt.trials) {
    double err = 0.0;
    if (!draw(rng, err)) {
      ++r.resampled;
      if (r.resampled > 100 * opt.trials + 1000) break;
      continue;
    }
    if (!std::isfinite(err)) err = std::numeric_limits<double>::infinity();
    r.worst = std::max(r.worst, err);
    ++r.trials;
  }
  if (r.trials < opt.trials) r.worst = std::numeric_limits<double>::infinity();
  return r;
}

VecX v3(const Vec3& v) { return VecX(v); }

std::function<bool(Rng&, double&)> vector_loss_check(VectorLoss (*fn)(const Vec3&, const Vec3&), double h,
                                                     bool negate, bool unit_gt) {
  return [=](Rng& rng, double& err) {
    const Vec3 gt = unit_gt ? random_unit(rng) : random_vec(rng, 0.5);
    const Vec3 pred = unit_gt ? Vec3(gt + random_vec(rng, 0.3)) : Vec3(gt + random_vec(rng, 0.2));
    if (near_l1_kink(pred, gt)) return false;
    Vec3 g = fn(pred, gt).grad;
    if (negate) g = -g;
    const VecX n = central_difference(v3(pred), h, [&](const VecX& p) { return fn(Vec3(p), gt).value; });
    err = relative_error(v3(g), n);
    return true;
  };
}

PosePrediction unpack(const VecX& x) {
  PosePrediction p;
  p.translation = x.segment<3>(0);
  p.axis_x = x.segment<3>(3);
  p.conf_x = x(6);
  p.axis_z = x.segment<3>(7);
  p.conf_z = x(10);
  p.scale = x.segment<3>(11);
  return p;
}

VecX pack(const PosePrediction& p) {
  VecX x(14);
  x << p.translation, p.axis_x, p.conf_x, p.axis_z, p.conf_z, p.scale;
  return x;
}

VecX pack(const PoseLossGradient& g) {
  VecX x(14);
  x << g.translation, g.axis_x, g.conf_x, g.axis_z, g.conf_z, g.scale;
  return x;
}

PoseTarget random_target(Rng& rng, int kind) {
  PoseTarget t;
  t.pose.rotation = random_rotation(rng);
  t.pose.translation = Vec3(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(0.5, 1.2));
  t.scale = Vec3(rng.uniform(0.03, 0.3), rng.uniform(0.03, 0.3), rng.uniform(0.03, 0.3));
  t.symmetry = kind == 0 ? SymmetryClass::none() : kind == 1 ? SymmetryClass::axial() : SymmetryClass::planar({0.0, std::numbers::pi});
  return t;
}

/// True when the pose loss is smooth in a 1e-4 neighborhood of `p`.
bool pose_loss_smooth(const PosePrediction& p, const PoseTarget& t, const LossConfig& cfg) {
  if (near_l1_kink(p.translation, t.pose.translation) || near_l1_kink(p.scale, t.scale)) return false;
  const Vec3 gz = t.pose.rotation.z_axis();
  if (near_l1_kink(p.axis_z, gz) || near_conf_kink(p.conf_z, p.axis_z, gz, cfg.alpha)) return false;
  if (t.symmetry.kind() == SymmetryKind::Axial) return true;
  std::vector<Vec3> xs;
  if (t.symmetry.kind() == SymmetryKind::None) {
    xs.push_back(t.pose.rotation.x_axis());
  } else {
    for (double a : t.symmetry.angles()) xs.push_back(t.pose.rotation * Vec3(std::cos(a), std::sin(a), 0.0));
  }
  std::vector<double> vals;
  for (const Vec3& x : xs) vals.push_back(axis_loss(p.axis_x, x).value);
  const auto best = std::min_element(vals.begin(), vals.end()) - vals.begin();
  for (std::size_t i = 0; i < vals.size(); ++i)
    if (static_cast<long>(i) != best && std::abs(vals[i] - vals[best]) < kKink) return false;
  const Vec3& gx = xs[best];
  return !near_l1_kink(p.axis_x, gx) && !near_conf_kink(p.conf_x, p.axis_x, gx, cfg.alpha);
}

PosePrediction random_prediction(Rng& rng, const PoseTarget& t) {
  PosePrediction p;
  p.translation = t.pose.translation + random_vec(rng, 0.05);
  p.axis_x = (t.pose.rotation.x_axis() + random_vec(rng, 0.4)).normalized();
  p.axis_z = (t.pose.rotation.z_axis() + random_vec(rng, 0.4)).normalized();
  p.conf_x = rng.uniform(0.0, 1.5);
  p.conf_z = rng.uniform(0.0, 1.5);
  p.scale = t.scale + random_vec(rng, 0.03);
  return p;
}

LossConfig random_loss_config(Rng& rng) {
  LossConfig c;
  c.translation_weight = rng.uniform(0.1, 1.0);
  c.axis_x_weight = rng.uniform(0.1, 1.0);
  c.axis_z_weight = rng.uniform(0.1, 1.0);
  c.angular_weight = rng.uniform(0.1, 1.0);
  c.conf_x_weight = rng.uniform(0.1, 1.0);
  c.conf_z_weight = rng.uniform(0.1, 1.0);
  c.scale_weight = rng.uniform(0.1, 1.0);
  c.alpha = -rng.uniform(1.0, 8.0);
  return c;
}

/// A tilted plane with a little roughness, so stencil normals face the
/// camera everywhere.
DepthMap random_surface(Rng& rng, int w, int h) {
  DepthMap d(w, h);
  const double base = rng.uniform(0.6, 1.4);
  const double gu = rng.uniform(-0.02, 0.02), gv = rng.uniform(-0.02, 0.02);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) d.at(u, v) = base + gu * u + gv * v + 0.004 * rng.normal();
  return d;
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& opt) {
  const double h = opt.step;
  std::vector<GradcheckResult> out;
  auto stream = [&](std::uint64_t k) { return Rng(derive_seed(opt.seed, k)); };

  {
    Rng rng = stream(1);
    out.push_back(run_check("translation_loss", opt, opt.tolerance, rng, vector_loss_check(&translation_loss, h, false, false)));
  }
  {
    Rng rng = stream(2);
    out.push_back(run_check("scale_loss", opt, opt.tolerance, rng, vector_loss_check(&scale_loss, h, false, false)));
  }
  {
    Rng rng = stream(3);
    out.push_back(run_check("axis_loss", opt, opt.tolerance, rng,
                            vector_loss_check(&axis_loss, h, opt.fault == InjectedFault::AxisSign, true)));
  }
  {
    Rng rng = stream(4);
    out.push_back(run_check("angular_loss", opt, opt.tolerance, rng, [h](Rng& r, double& err) {
      const Vec3 ax = random_vec(r), az = random_vec(r);
      const AngularLoss a = angular_loss(ax, az);
      VecX x(6), g(6);
      x << ax, az;
      g << a.grad_x, a.grad_z;
      const VecX n = central_difference(
          x, h, [](const VecX& p) { return angular_loss(Vec3(p.segment<3>(0)), Vec3(p.segment<3>(3))).value; });
      err = relative_error(g, n);
      return true;
    }));
  }
  {
    Rng rng = stream(5);
    out.push_back(run_check("confidence_loss", opt, opt.tolerance, rng, [h](Rng& r, double& err) {
      const Vec3 gt = random_unit(r);
      const Vec3 pred = (gt + random_vec(r, 0.4)).normalized();
      const double conf = r.uniform(0.0, 1.5);
      const double alpha = -r.uniform(1.0, 8.0);
      if (near_conf_kink(conf, pred, gt, alpha)) return false;
      const ConfidenceLoss c = confidence_loss(conf, pred, gt, alpha);
      VecX x(4), g(4);
      x << conf, pred;
      g << c.grad_conf, c.grad_axis;
      const VecX n = central_difference(
          x, h, [&](const VecX& p) { return confidence_loss(p(0), Vec3(p.segment<3>(1)), gt, alpha).value; });
      err = relative_error(g, n);
      return true;
    }));
  }
  {
    Rng rng = stream(6);
    out.push_back(run_check("depth_completion_loss", opt, opt.tolerance, rng, [h](Rng& r, double& err) {
      const int w = 10, hh = 10;
      Intrinsics K{40.0, 40.0, 4.5, 4.5, w, hh};
      const DepthMap gt = random_surface(r, w, hh);
      DepthMap pred = random_surface(r, w, hh);
      Mask mask(w, hh);
      for (auto& b : mask.bits) b = r.uniform() < 0.8 ? 1 : 0;
      if (mask.count() == 0) return false;
      const double smooth = r.uniform(0.1, 1.0);
      const DepthLoss d = depth_completion_loss(pred, gt, mask, K, smooth);
      const VecX x = Eigen::Map<const VecX>(pred.depth.data(), static_cast<Eigen::Index>(pred.size()));
      const VecX g = Eigen::Map<const VecX>(d.gradient.data(), static_cast<Eigen::Index>(d.gradient.size()));
      const VecX n = central_difference(x, h, [&](const VecX& p) {
        DepthMap q = pred;
        std::copy(p.data(), p.data() + p.size(), q.depth.begin());
        return depth_completion_loss(q, gt, mask, K, smooth).total;
      });
      err = relative_error(g, n);
      return true;
    }));
  }
  {
    Rng rng = stream(7);
    out.push_back(run_check("normal_loss", opt, opt.tolerance, rng, [h](Rng& r, double& err) {
      const int w = 8, hh = 8;
      NormalMap pred(w, hh), gt(w, hh);
      Mask region(w, hh);
      for (std::size_t i = 0; i < pred.size(); ++i) {
        gt.normals[i] = random_unit(r);
        pred.normals[i] = (gt.normals[i] + random_vec(r, 0.5)).normalized();
        region.bits[i] = r.uniform() < 0.8 ? 1 : 0;
      }
      if (region.count() == 0) return false;
      const NormalLoss nl = normal_loss(pred, gt, region);
      // Each pixel moves along its tangent plane: p(e) = normalize(p + e t).
      VecX g(2 * pred.size()), n(2 * pred.size());
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const Vec3 p = pred.normals[i];
        const Vec3 t1 = p.unitOrthogonal();
        const Vec3 t2 = p.cross(t1);
        const Vec3 basis[2] = {t1, t2};
        for (int k = 0; k < 2; ++k) {
          g(2 * i + k) = nl.gradient[i].dot(basis[k]);
          NormalMap q = pred;
          q.normals[i] = (p + h * basis[k]).normalized();
          const double up = normal_loss(q, gt, region).value;
          q.normals[i] = (p - h * basis[k]).normalized();
          const double down = normal_loss(q, gt, region).value;
          n(2 * i + k) = (up - down) / (2.0 * h);
        }
      }
      err = relative_error(g, n);
      return true;
    }));
  }
  const char* kinds[3] = {"total_pose_loss[none]", "total_pose_loss[axial]", "total_pose_loss[planar]"};
  for (int kind = 0; kind < 3; ++kind) {
    Rng rng = stream(8 + static_cast<std::uint64_t>(kind));
    out.push_back(run_check(kinds[kind], opt, opt.tolerance, rng, [h, kind](Rng& r, double& err) {
      const PoseTarget t = random_target(r, kind);
      const LossConfig cfg = random_loss_config(r);
      const PosePrediction p = random_prediction(r, t);
      if (!pose_loss_smooth(p, t, cfg)) return false;
      const LossReport rep = total_pose_loss(p, t, cfg, true);
      const VecX n = central_difference(pack(p), h, [&](const VecX& x) {
        return total_pose_loss(unpack(x), t, cfg, false).total;
      });
      err = relative_error(pack(*rep.gradient), n);
      return true;
    }));
  }
  {
    Rng rng = stream(11);
    out.push_back(run_check("decoder_parameters", opt, opt.decoder_tolerance, rng, [h](Rng& r, double& err) {
      const int d = 6;
      LinearDecoderModel model(d);
      for (Eigen::Index i = 0; i < model.weight().size(); ++i) model.weight().data()[i] = 0.1 * r.normal();
      for (Eigen::Index i = 0; i < model.bias().size(); ++i) model.bias()(i) = 0.1 * r.normal();
      VecX mean(d), scale(d);
      for (int i = 0; i < d; ++i) {
        mean(i) = r.normal();
        scale(i) = r.uniform(0.5, 2.0);
      }
      model.set_standardization(mean, scale);
      TrainingSample s;
      s.pooled = VecX(d);
      for (int i = 0; i < d; ++i) s.pooled(i) = r.normal();
      s.target = random_target(r, static_cast<int>(r.below(3)));
      s.scale_prior = s.target.scale + random_vec(r, 0.02);
      s.translation_prior = s.target.pose.translation + random_vec(r, 0.02);
      const LossConfig cfg = random_loss_config(r);
      const PosePrediction p =
          to_pose_prediction(model.decode(s.pooled), s.translation_prior, s.scale_prior);
      if (!pose_loss_smooth(p, s.target, cfg)) return false;
      MatX gw;
      VecX gb;
      sample_loss(model, s, cfg, &gw, &gb);
      VecX x(model.weight().size() + model.bias().size()), g(x.size());
      x << Eigen::Map<const VecX>(model.weight().data(), model.weight().size()), model.bias();
      g << Eigen::Map<const VecX>(gw.data(), gw.size()), gb;
      const VecX n = central_difference(x, h, [&](const VecX& v) {
        LinearDecoderModel m = model;
        std::copy(v.data(), v.data() + m.weight().size(), m.weight().data());
        m.bias() = v.tail(m.bias().size());
        return sample_loss(m, s, cfg, nullptr, nullptr).total;
      });
      err = relative_error(g, n);
      return true;
    }));
  }
  return out;
}

std::string gradcheck_summary(const std::vector<GradcheckResult>& results) {
  std::string out;
  char buf[256];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof(buf), "%-26s %s  trials=%d resampled=%d worst=%.3e tol=%.0e\n", r.name.c_str(),
                  r.passed() ? "PASS" : "FAIL", r.trials, r.resampled, r.worst, r.tolerance);
    out += buf;
  }
  return out;
}

}  // namespace tpose

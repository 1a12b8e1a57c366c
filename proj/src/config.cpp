#include "tpose/config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include "tpose/io.hpp"

namespace tpose {

namespace {

using Getter = std::function<std::string(const HarnessConfig&)>;
using Setter = std::function<void(HarnessConfig&, std::string_view)>;

struct Entry {
  const char* key;
  const char* doc;
  Getter get;
  Setter set;
};

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* want) {
  throw Error(ErrorCode::InvalidArgument,
              "config " + std::string(key) + ": '" + std::string(value) + "' is not " + want);
}

std::string show(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(std::string_view key, std::string_view v, const char* want) {
  T out{};
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, want);
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  if (v.size() > 2 && (v.substr(0, 2) == "0x" || v.substr(0, 2) == "0X")) {
    std::uint64_t out = 0;
    const auto r = std::from_chars(v.data() + 2, v.data() + v.size(), out, 16);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
    return out;
  }
  return parse_number<std::uint64_t>(key, v, "an unsigned integer");
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

template <typename Access>
Entry real_entry(const char* key, const char* doc, Access access) {
  return {key, doc, [access](const HarnessConfig& c) { return show(access(const_cast<HarnessConfig&>(c))); },
          [access, key](HarnessConfig& c, std::string_view v) {
            access(c) = parse_number<double>(key, v, "a number");
          }};
}

template <typename Access>
Entry int_entry(const char* key, const char* doc, Access access) {
  return {key, doc, [access](const HarnessConfig& c) { return std::to_string(access(const_cast<HarnessConfig&>(c))); },
          [access, key](HarnessConfig& c, std::string_view v) {
            using T = std::remove_reference_t<decltype(access(c))>;
            access(c) = parse_number<T>(key, v, "an integer");
          }};
}

template <typename Access>
Entry u64_entry(const char* key, const char* doc, Access access) {
  return {key, doc, [access](const HarnessConfig& c) { return std::to_string(access(const_cast<HarnessConfig&>(c))); },
          [access, key](HarnessConfig& c, std::string_view v) { access(c) = parse_u64(key, v); }};
}

template <typename Access>
Entry bool_entry(const char* key, const char* doc, Access access) {
  return {key, doc, [access](const HarnessConfig& c) { return access(const_cast<HarnessConfig&>(c)) ? "true" : "false"; },
          [access, key](HarnessConfig& c, std::string_view v) { access(c) = parse_bool(key, v); }};
}

template <typename Access>
Entry kind_entry(const char* key, const char* doc, Access access) {
  return {key, doc, [access](const HarnessConfig& c) { return estimator_kind_name(access(const_cast<HarnessConfig&>(c))); },
          [access](HarnessConfig& c, std::string_view v) { access(c) = parse_estimator_kind(v); }};
}

#define FIELD(expr) [](HarnessConfig & c) -> auto& { return c.expr; }

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = {
      u64_entry("seed", "master seed for generate and every derived stream", FIELD(seed)),

      real_entry("camera.fx", "focal length x, pixels", FIELD(scene.K.fx)),
      real_entry("camera.fy", "focal length y, pixels", FIELD(scene.K.fy)),
      real_entry("camera.cx", "principal point x", FIELD(scene.K.cx)),
      real_entry("camera.cy", "principal point y", FIELD(scene.K.cy)),
      int_entry("camera.width", "image width", FIELD(scene.K.width)),
      int_entry("camera.height", "image height", FIELD(scene.K.height)),

      int_entry("scene.min_instances", "objects per frame, lower bound", FIELD(scene.min_instances)),
      int_entry("scene.max_instances", "objects per frame, upper bound (<= 8)", FIELD(scene.max_instances)),
      real_entry("scene.min_distance", "object center depth range, meters", FIELD(scene.min_distance)),
      real_entry("scene.max_distance", "", FIELD(scene.max_distance)),
      real_entry("scene.background_depth", "depth of the back wall, meters", FIELD(scene.background_depth)),
      real_entry("scene.min_elevation_deg", "camera elevation above the support plane", FIELD(scene.min_elevation_deg)),
      real_entry("scene.max_elevation_deg", "", FIELD(scene.max_elevation_deg)),
      real_entry("scene.max_tilt_deg", "per-object tilt of the up axis", FIELD(scene.max_tilt_deg)),
      int_entry("scene.max_attempts", "placement retries per object", FIELD(scene.max_attempts)),

      real_entry("corruption.dropout", "sensor dropout probability inside M_t", FIELD(scene.corruption.dropout)),
      real_entry("corruption.noise_sigma", "sensor noise inside M_t, meters", FIELD(scene.corruption.noise_sigma)),
      real_entry("corruption.warp_amplitude", "low-frequency warp, meters", FIELD(scene.corruption.warp_amplitude)),
      real_entry("corruption.warp_period", "warp period, pixels", FIELD(scene.corruption.warp_period)),
      int_entry("corruption.bleed_radius", "background bleed at the M_t border, pixels",
                FIELD(scene.corruption.bleed_radius)),

      real_entry("loss.smooth_weight", "weight of the normal smoothness term", FIELD(train.loss.smooth_weight)),
      real_entry("loss.translation_weight", "", FIELD(train.loss.translation_weight)),
      real_entry("loss.axis_x_weight", "", FIELD(train.loss.axis_x_weight)),
      real_entry("loss.axis_z_weight", "", FIELD(train.loss.axis_z_weight)),
      real_entry("loss.angular_weight", "", FIELD(train.loss.angular_weight)),
      real_entry("loss.conf_x_weight", "", FIELD(train.loss.conf_x_weight)),
      real_entry("loss.conf_z_weight", "", FIELD(train.loss.conf_z_weight)),
      real_entry("loss.scale_weight", "", FIELD(train.loss.scale_weight)),
      real_entry("loss.alpha", "confidence target exp(alpha * axis error), alpha < 0", FIELD(train.loss.alpha)),

      int_entry("patch.size", "patch side after resampling, pixels", FIELD(pipeline.patch_size)),
      real_entry("patch.ray_exponent", "1 = unit rays, 2 = squared-norm variant", FIELD(pipeline.ray_exponent)),
      int_entry("sampler.points", "points sampled per instance", FIELD(pipeline.points)),
      int_entry("embedding.random_width", "width of the random point-feature block", FIELD(pipeline.embedding.random_width)),
      u64_entry("embedding.seed", "seed of the random point-feature block", FIELD(pipeline.embedding.seed)),

      kind_entry("estimator.depth", "depth completer: oracle | noisy", FIELD(pipeline.depth)),
      kind_entry("estimator.normals", "normal estimator: oracle | noisy", FIELD(pipeline.normals)),
      {"estimator.checkpoint", "decoder checkpoint; empty = untrained decoder",
       [](const HarnessConfig& c) { return c.checkpoint; },
       [](HarnessConfig& c, std::string_view v) { c.checkpoint = std::string(v); }},

      real_entry("noise.depth_sigma", "noisy completer Gaussian sigma, meters", FIELD(pipeline.noisy_depth.sigma)),
      real_entry("noise.depth_bias", "noisy completer bias amplitude, meters", FIELD(pipeline.noisy_depth.bias)),
      real_entry("noise.depth_bias_period", "bias period, pixels", FIELD(pipeline.noisy_depth.bias_period)),
      real_entry("noise.normal_kappa", "vMF concentration of the noisy normals", FIELD(pipeline.normal_kappa)),

      real_entry("train.learning_rate", "", FIELD(train.learning_rate)),
      int_entry("train.epochs", "", FIELD(train.epochs)),
      real_entry("train.lr_decay", "learning rate multiplier per epoch", FIELD(train.lr_decay)),
      int_entry("train.batch_size", "0 = full batch", FIELD(train.batch_size)),
      u64_entry("train.seed", "mini-batch shuffle seed", FIELD(train.seed)),
      bool_entry("train.precondition", "precondition weight steps with the input covariance", FIELD(train.precondition)),
      real_entry("train.ridge", "relative ridge of the preconditioner", FIELD(train.ridge)),

      bool_entry("metrics.symmetry_aware", "symmetry-aware rotation error and IoU", FIELD(symmetry_aware)),
      bool_entry("predict.record_timing", "add per-instance time_ms to predictions", FIELD(record_timing)),
  };
  return entries;
}

#undef FIELD

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void HarnessConfig::set(std::string_view key, std::string_view value) {
  for (const auto& e : registry()) {
    if (key == e.key) {
      e.set(*this, trim(value));
      return;
    }
  }
  throw Error(ErrorCode::InvalidArgument, "unknown config key '" + std::string(key) + "'");
}

void HarnessConfig::apply(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    std::string_view s = line;
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos)
      throw Error(ErrorCode::InvalidArgument, "config line " + std::to_string(number) + ": expected key = value");
    set(trim(s.substr(0, eq)), s.substr(eq + 1));
  }
}

HarnessConfig HarnessConfig::load(const std::string& path) {
  HarnessConfig c;
  c.apply(io::read_text(path));
  return c;
}

std::string HarnessConfig::print() const {
  std::string out;
  for (const auto& e : registry()) {
    out += e.key;
    out += " = ";
    out += e.get(*this);
    if (*e.doc) {
      out += "  # ";
      out += e.doc;
    }
    out += '\n';
  }
  return out;
}

std::string HarnessConfig::hash() const { return io::fnv1a_hex(print()); }

void HarnessConfig::validate() const {
  scene.validate();
  train.loss.validate();
  if (pipeline.patch_size < 8) throw Error(ErrorCode::InvalidArgument, "patch.size must be >= 8");
  if (pipeline.points < 1) throw Error(ErrorCode::InvalidArgument, "sampler.points must be >= 1");
  if (pipeline.embedding.random_width < 0) throw Error(ErrorCode::InvalidArgument, "embedding.random_width must be >= 0");
  if (!(pipeline.ray_exponent > 0.0)) throw Error(ErrorCode::InvalidArgument, "patch.ray_exponent must be > 0");
  if (pipeline.noisy_depth.sigma < 0.0 || pipeline.noisy_depth.bias < 0.0 || !(pipeline.noisy_depth.bias_period > 0.0))
    throw Error(ErrorCode::InvalidArgument, "noise.depth_* out of range");
  if (train.epochs < 0 || train.batch_size < 0 || !(train.learning_rate >= 0.0))
    throw Error(ErrorCode::InvalidArgument, "train.* out of range");
}

std::vector<std::string> HarnessConfig::keys() {
  std::vector<std::string> out;
  for (const auto& e : registry()) out.emplace_back(e.key);
  return out;
}

}  // namespace tpose

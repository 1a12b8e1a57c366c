#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tpose {

enum class InjectedFault { None, AxisSign };

struct GradcheckOptions {
  int trials = 100;  // configurations per check
  std::uint64_t seed = 1;
  double step = 1e-6;
  double tolerance = 1e-5;
  /// The decoder check goes through normalization and softplus.
  double decoder_tolerance = 1e-4;
  InjectedFault fault = InjectedFault::None;
};

struct GradcheckResult {
  std::string name;
  int trials = 0;
  int resampled = 0;      // draws rejected for sitting near a kink
  double worst = 0.0;     // largest relative error seen
  double tolerance = 0.0;
  bool passed() const { return worst <= tolerance; }
};

/// Central finite differences against every analytic loss gradient.
///
/// The error of one configuration is ‖g - n‖ / max(‖g‖, ‖n‖) with g the
/// analytic and n the numeric gradient (0 when both vanish). Draws within
/// 1e-4 of a subgradient kink or an argmin tie are redrawn.
std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options);

std::string gradcheck_summary(const std::vector<GradcheckResult>& results);

}  // namespace tpose

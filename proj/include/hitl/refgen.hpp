#pragma once

#include <array>
#include <cstdint>
#include <numbers>
#include <string>

#include <Eigen/Dense>

namespace hitl {

inline constexpr int kComponents = 30;

/// c(t) = amplitude * sum_{j=1}^{30} cos(spacing j t + phase_j), one 60-s trial.
///
/// Component j sits at spacing*j = pi j / 30 rad/s, which is exactly DFT bin j
/// of a 60-s record (2 pi j / 60), so a full record carries no leakage.
struct ReferenceCommand {
  std::uint64_t seed = 0;
  std::array<double, kComponents> phases{};
  double amplitude = 0.3;
  double duration = 60.0;
  double spacing = std::numbers::pi / 30.0;

  double operator()(double t) const;
};

struct RefgenOptions {
  double peak_bound = 2.6;
  double peak_margin = 1e-6;
  double scan_step = 1e-3;
  int max_rounds = 1'000'000;
};

/// Draws phases with std::mt19937_64 seeded by `seed` (53-bit uniforms taken
/// from the top bits of each output, so streams replay identically on every
/// platform). Phases 1..29 are uniform on [0, 2 pi); phase 30 solves
/// sum cos(phase_j) = 0 when the partial sum lies in [-1, 1]. Candidates whose
/// 1-ms-grid peak reaches peak_bound - peak_margin are rejected.
/// Throws NumericalError after max_rounds rejections.
ReferenceCommand generate_reference(std::uint64_t seed, const RefgenOptions& opts = {});

/// Peak |c(t)| on a uniform grid over [0, duration].
double scan_peak(const ReferenceCommand& cmd, double step);

/// r_k = c((k-1) Ts), k = 1..n. Rejects n Ts > duration.
Eigen::VectorXd sample(const ReferenceCommand& cmd, double Ts, int n);

struct PreviewWindow {
  Eigen::VectorXd times;
  Eigen::VectorXd values;
  bool truncated = false;  // requested horizon ran past the end of the command
};

/// Samples of c over [t, t + horizon] at the given resolution. Times are
/// formed as (m + i) * resolution when t is a multiple of the resolution, so
/// values coincide bitwise with sample() on the shared grid.
PreviewWindow preview_window(const ReferenceCommand& cmd, double t, double horizon,
                             double resolution);

std::string to_json(const ReferenceCommand& cmd);
ReferenceCommand reference_from_json(const std::string& text);

}  // namespace hitl

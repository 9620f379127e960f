#pragma once

#include <complex>
#include <functional>
#include <numbers>

#include <Eigen/Dense>

#include "hitl/loop_sim.hpp"
#include "hitl/spectra.hpp"

namespace hitl {

/// Composite trapezoid rule over omega in [0, upper] rad/s.
///
/// Integration runs in rad/s up to pi rad/s (0.5 Hz) with the transfer
/// functions evaluated at z = exp(j omega Ts). It is NOT rad/sample up to
/// Nyquist: with Ts = 0.02 the arc covered is only [0, 0.02 pi].
struct Quadrature {
  int nodes = 2048;
  double upper = std::numbers::pi;

  /// (1/upper) * integral of f over [0, upper].
  double mean(const std::function<double(double)>& f) const;
  Quadrature refined() const { return {2 * nodes - 1, upper}; }
};

struct PerformanceSummary {
  double e_bar = 0.0;
  double Em = 0.0;
  double Ep = 0.0;
  double vaf = 0.0;
};

struct ModelQuality {
  double ff_gap = 0.0;
  double fb_norm = 0.0;
  double Me = 0.0;
  double Pe = 0.0;
  double T_ff = 0.0;  // ms
  double T_fb = 0.0;  // ms
};

/// (1/n) sum |r_k - y_k|.
double time_avg_error(const Eigen::VectorXd& r, const Eigen::VectorXd& y);
double time_avg_error(const TrialRecord& trial);

struct FreqErrors {
  double Em = 0.0;
  double Ep = 0.0;
  int skipped = 0;  // valid bins dropped because a phase was undefined
};

/// Em = mean ||y_dft| - |r_dft||, Ep = mean |r_dft| |e^{j arg y_dft} - e^{j arg r_dft}|
/// over valid bins.
FreqErrors freq_errors(const FreqResponseData& frd);

/// Ep from the unreduced form mean ||r_dft| e^{j arg y_dft} - |r_dft| e^{j arg r_dft}|.
double phase_error_unreduced(const FreqResponseData& frd);

/// ||z^{-tau_ff} Gff - G^{-1}||_1 with G^{-1} evaluated pointwise as 1/G.
/// Throws NumericalError where |G| nearly vanishes on the arc.
double ff_gap(const ControllerModel& ctrl, const DiscreteTF& plant_d, const Quadrature& q = {});

/// ||z^{-tau_fb} Gfb||_1.
double fb_norm(const ControllerModel& ctrl, const Quadrature& q = {});

struct MagPhaseErrors {
  double Me = 0.0;
  double Pe = 0.0;
};

/// Me = mean ||F G| - 1|, Pe = mean |e^{j arg(F G)} - 1| with F = z^{-tau_ff} Gff.
MagPhaseErrors ff_mag_phase_errors(const ControllerModel& ctrl, const DiscreteTF& plant_d,
                                   const Quadrature& q = {});

/// 1 - sum_{k>=n1} |y_k - yv_k|^2 / sum_{k>=n1} |y_k|^2 with 1-based n1.
double vaf(const Eigen::VectorXd& y, const Eigen::VectorXd& y_v, int n1 = 26);

ModelQuality model_quality(const ControllerModel& ctrl, const DiscreteTF& plant_d,
                           const Quadrature& q = {});

}  // namespace hitl

#pragma once

#include <array>
#include <numbers>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hitl/lti.hpp"
#include "hitl/refgen.hpp"

namespace hitl {

/// u = z^{-tau_fb} Gfb e + z^{-tau_ff} Gff r, with Gff a 3-tap FIR
/// (b0 z^2 + b1 z + b2) / z^2 and Gfb strictly proper.
struct ControllerModel {
  DiscreteTF gff;
  int tau_ff = 0;
  DiscreteTF gfb;
  int tau_fb = 0;

  /// Validates the FIR/strict-properness/delay invariants; throws std::invalid_argument.
  ControllerModel(DiscreteTF ff, int ff_delay, DiscreteTF fb, int fb_delay);

  static ControllerModel zero(double Ts);
  static ControllerModel with_fir(const Eigen::Vector3d& b, int ff_delay, DiscreteTF fb,
                                  int fb_delay);

  double Ts() const { return gff.Ts(); }
  /// (b0, b1, b2): coefficients of 1, z^{-1}, z^{-2}.
  Eigen::Vector3d fir() const;
  /// Identified models may have b0 = 0; this reports the post-hoc property.
  bool ff_exactly_proper() const { return fir()[0] != 0.0; }
};

/// kappa * (z - zero) / ((z - p1)(z - p2)), scaled so the DC gain equals kappa.
struct FeedbackLag {
  double kappa = 1.0;
  double zero = 0.9;
  std::complex<double> p1{0.5, 0.0};
  std::complex<double> p2{0.0, 0.0};

  DiscreteTF tf(double Ts) const;
};

struct ExperimentConfig {
  ContinuousTF plant{Coeffs{{3.2, 7.04}}, Coeffs{{1.0, 5.2, 9.76, 6.4}}};
  double Ts = 0.02;
  int n = 3000;
  std::array<double, 4> preview_levels{0.0, 0.5, 1.0, 1.5};
  double divergence_bound = 4.4;
  int trials_per_subject = 40;

  void validate() const;
  DiscreteTF plant_d() const { return zoh_discretize(plant, Ts); }
  double preview_for_group(int group) const;
};

struct TrialRecord {
  std::string subject_id;
  int group = 1;
  double preview_s = 0.0;
  int trial_index = 1;
  double Ts = 0.02;
  Eigen::VectorXd r, u, y;
  bool divergent = false;
  std::uint64_t reference_seed = 0;
  /// Whole command periods simulated before recording (0 = zero initial conditions).
  int settle_periods = 0;
  /// Samples filled by holding the last input (live trials only).
  int gap_count = 0;
  /// Scale from raw client input to u (live trials; 1 for simulated ones).
  double input_gain = 1.0;

  int n() const { return static_cast<int>(r.size()); }
  Eigen::VectorXd e() const { return r - y; }
};

/// True iff some |y_k| strictly exceeds bound.
bool detect_divergence(const Eigen::VectorXd& y, double bound);

/// z^{tau_fb} den(Gfb) den(G) + num(Gfb) num(G): closed-loop poles of the tracking loop.
Coeffs closed_loop_characteristic(const DiscreteTF& plant_d, const DiscreteTF& gfb, int tau_fb);

/// Whole periods of the reference to pre-simulate so initial-condition
/// transients decay below tol relative. Throws NumericalError for unstable loops.
int settle_periods_for(const DiscreteTF& plant_d, const ControllerModel& ctrl, int n,
                       double tol = 1e-16);

/// Closes the loop sample by sample: r_k, y_k from the plant state, e_k,
/// controller update giving u_k, then plant update with u_k. With
/// settle_periods > 0 the periodic reference is run that many extra periods
/// first and only the final n samples are recorded.
/// Throws std::invalid_argument when both the plant and the feedback path are
/// direct-feedthrough (algebraic loop).
TrialRecord run_loop(const DiscreteTF& plant_d, const ControllerModel& ctrl,
                     const Eigen::VectorXd& r, double divergence_bound, int settle_periods = 0);

TrialRecord run_trial(const DiscreteTF& plant_d, const ControllerModel& ctrl,
                      const ReferenceCommand& cmd, const ExperimentConfig& cfg,
                      int settle_periods = 0);

/// Least-squares 3-tap FIR approximation of 1/G over omega in [0, upper] rad/s.
Eigen::Vector3d fit_inverse_fir(const DiscreteTF& plant_d, double upper = std::numbers::pi,
                                int nodes = 2048);

/// Operator-model generator (an extrapolation tool, not a fitted human model).
/// tau_ff = max(0, round((sensory_delay_s - preview_s) / Ts)); Gff blends the
/// static inverse DC gain (quality 0) with the band-limited FIR inverse
/// (quality 1); feedback is the supplied lag at tau_fb.
ControllerModel synthetic_subject(const DiscreteTF& plant_d, double preview_s,
                                  double sensory_delay_s, double inversion_quality,
                                  const FeedbackLag& feedback, int tau_fb);

/// Same, with the default feedback lag and tau_fb = round(sensory_delay_s / Ts).
ControllerModel synthetic_subject(const DiscreteTF& plant_d, double preview_s,
                                  double sensory_delay_s, double inversion_quality);

/// lo * (hi/lo)^{m/(steps-1)}, m = 0..steps-1.
std::vector<double> log_grid(double lo, double hi, int steps);

/// A mid-gain lag from the default candidate family (kappa grid point 7 of 12).
FeedbackLag default_feedback_lag();

}  // namespace hitl

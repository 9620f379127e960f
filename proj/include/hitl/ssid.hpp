#pragma once

#include <complex>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hitl/loop_sim.hpp"
#include "hitl/spectra.hpp"

namespace hitl {

enum class Weighting { none, inverse_magnitude };

struct FeedbackCandidate {
  FeedbackLag lag;
  DiscreteTF gfb;
  int tau_fb = 0;
  std::size_t index = 0;  // position in the unfiltered grid
};

/// Grid of feedback lags and delays scanned by the identification.
struct PoolConfig {
  std::vector<double> kappas = log_grid(0.1, 3.0, 12);
  std::vector<double> zeros{0.80, 0.90, 0.95, 0.99};
  std::vector<std::pair<std::complex<double>, std::complex<double>>> pole_pairs{
      {{0.0, 0.0}, {0.0, 0.0}},   {{0.5, 0.0}, {0.0, 0.0}},    {{0.7, 0.0}, {0.3, 0.0}},
      {{0.85, 0.0}, {0.5, 0.0}},  {{0.6, 0.3}, {0.6, -0.3}},   {{0.93, 0.0}, {0.6, 0.0}},
      {{0.75, 0.15}, {0.75, -0.15}}, {{0.97, 0.0}, {0.85, 0.0}}};
  int tau_fb_min = 5;
  int tau_fb_max = 25;
  int tau_ff_min = 0;
  int tau_ff_max = 25;

  void validate() const;
};

struct CandidatePools {
  std::vector<FeedbackCandidate> feedback;
  std::vector<int> ff_delays;
  std::size_t rejected_unstable = 0;

  std::size_t cells() const { return feedback.size() * ff_delays.size(); }
};

/// True iff 1 + z^{-tau_fb} Gfb G has all closed-loop poles strictly inside the unit circle.
bool stability_filter(const DiscreteTF& plant_d, const DiscreteTF& gfb, int tau_fb);

/// Enumerates the grid (tau_fb outermost, then kappa, zero, pole pair) and keeps
/// only stabilizing candidates. Throws ConfigError if either pool ends up empty.
CandidatePools build_pools(const DiscreteTF& plant_d, const PoolConfig& cfg = {});

/// G [z^{-tau_ff} Gff + z^{-tau_fb} Gfb] / (1 + z^{-tau_fb} Gfb G) at z = exp(j omega Ts).
/// Throws NumericalError if the denominator vanishes at a requested frequency.
Eigen::VectorXcd closed_loop_tf_at_bins(const DiscreteTF& plant_d, const ControllerModel& ctrl,
                                        const Eigen::VectorXd& omegas);

/// The same closed loop as one rational transfer function (poles at 0 included).
DiscreteTF closed_loop_tf(const DiscreteTF& plant_d, const ControllerModel& ctrl);

struct FeedforwardFit {
  Eigen::Vector3d b = Eigen::Vector3d::Zero();
  double J = std::numeric_limits<double>::infinity();
  bool rank_deficient = false;
};

/// Least-squares FIR coefficients for one (Gfb, tau_fb, tau_ff) cell.
/// The residual over valid bins is affine in b; real and imaginary parts are
/// stacked and solved by column-pivoted QR (minimum-norm when rank deficient).
FeedforwardFit fit_feedforward(const FreqResponseData& frd, const DiscreteTF& plant_d,
                               const DiscreteTF& gfb, int tau_fb, int tau_ff,
                               Weighting weighting = Weighting::none);

struct IdentifiedModel {
  ControllerModel ctrl;
  double cost = 0.0;  // the minimized objective (weighted when `weighted`)
  double vaf = std::numeric_limits<double>::quiet_NaN();
  bool weighted = false;
  std::size_t feedback_index = 0;
};

struct SearchOptions {
  Weighting weighting = Weighting::none;
  unsigned threads = 0;  // 0 = hardware concurrency
};

/// Exhaustive scan of feedback pool x ff-delay pool, returning the global
/// minimizer of J. Ties break on lowest tau_ff, then tau_fb, then pool index,
/// independent of thread scheduling.
IdentifiedModel ssid_search(const FreqResponseData& frd, const DiscreteTF& plant_d,
                            const CandidatePools& pools, const SearchOptions& opts = {});

/// Simulates the identified closed loop on the trial's reference (same settle
/// protocol as the trial, zero initial conditions otherwise) and returns the VAF.
double validate(const TrialRecord& trial, const IdentifiedModel& model, const DiscreteTF& plant_d);

std::string to_json(const IdentifiedModel& model);
IdentifiedModel identified_from_json(const std::string& text);

}  // namespace hitl

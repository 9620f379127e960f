#include "hitl/loop_sim.hpp"

#include <cmath>
#include <stdexcept>

#include "hitl/error.hpp"

namespace hitl {
namespace {

bool is_fir(const DiscreteTF& tf) {
  const Coeffs& d = tf.den();
  return d.size() <= 3 && (d.size() == 1 || d.tail(d.size() - 1).isZero(0.0));
}

}  // namespace

ControllerModel::ControllerModel(DiscreteTF ff, int ff_delay, DiscreteTF fb, int fb_delay)
    : gff(std::move(ff)), tau_ff(ff_delay), gfb(std::move(fb)), tau_fb(fb_delay) {
  if (tau_ff < 0 || tau_fb < 0) throw std::invalid_argument("ControllerModel: negative delay");
  if (!is_fir(gff)) throw std::invalid_argument("ControllerModel: Gff must be FIR of order <= 2");
  if (!gfb.strictly_proper()) throw std::invalid_argument("ControllerModel: Gfb must be strictly proper");
  if (gff.Ts() != gfb.Ts()) throw std::invalid_argument("ControllerModel: sample times differ");
}

ControllerModel ControllerModel::zero(double Ts) {
  return {DiscreteTF::zero(Ts), 0, DiscreteTF::zero(Ts), 0};
}

ControllerModel ControllerModel::with_fir(const Eigen::Vector3d& b, int ff_delay, DiscreteTF fb,
                                          int fb_delay) {
  const double Ts = fb.Ts();
  DiscreteTF ff(Coeffs(b), Coeffs{{1.0, 0.0, 0.0}}, Ts);
  return {std::move(ff), ff_delay, std::move(fb), fb_delay};
}

Eigen::Vector3d ControllerModel::fir() const {
  const Coeffs pn = gff.padded_num();
  Eigen::Vector3d b = Eigen::Vector3d::Zero();
  b.head(pn.size()) = pn;
  return b;
}

DiscreteTF FeedbackLag::tf(double Ts) const {
  const Coeffs den = poly_from_roots({p1, p2});
  if (std::abs(1.0 - zero) < 1e-12) {
    throw std::invalid_argument("FeedbackLag: zero at z = 1 has no DC normalization");
  }
  const double scale = kappa * polyval(den, 1.0) / (1.0 - zero);
  return DiscreteTF(Coeffs{{scale, -scale * zero}}, den, Ts);
}

void ExperimentConfig::validate() const {
  if (!(Ts > 0.0)) throw ConfigError("experiment.Ts must be positive");
  if (n <= 0) throw ConfigError("experiment.n must be positive");
  if (!(divergence_bound > 0.0)) throw ConfigError("experiment.divergence_bound must be positive");
  if (trials_per_subject <= 0) throw ConfigError("experiment.trials must be positive");
  for (double p : preview_levels) {
    if (p < 0.0) throw ConfigError("experiment.preview_levels must be nonnegative");
  }
}

double ExperimentConfig::preview_for_group(int group) const {
  if (group < 1 || group > 4) throw std::invalid_argument("group must be in 1..4");
  return preview_levels[static_cast<std::size_t>(group - 1)];
}

bool detect_divergence(const Eigen::VectorXd& y, double bound) {
  for (Eigen::Index k = 0; k < y.size(); ++k) {
    if (!(std::abs(y[k]) <= bound)) return true;  // NaN counts as divergent
  }
  return false;
}

Coeffs closed_loop_characteristic(const DiscreteTF& plant_d, const DiscreteTF& gfb, int tau_fb) {
  if (tau_fb < 0) throw std::invalid_argument("closed_loop_characteristic: negative delay");
  return polyadd(shift_up(polymul(gfb.den(), plant_d.den()), tau_fb),
                 polymul(gfb.num(), plant_d.num()));
}

int settle_periods_for(const DiscreteTF& plant_d, const ControllerModel& ctrl, int n, double tol) {
  const double rho = spectral_radius(closed_loop_characteristic(plant_d, ctrl.gfb, ctrl.tau_fb));
  if (!(rho < 1.0)) throw NumericalError("settle_periods_for: closed loop is not asymptotically stable");
  if (rho < 1e-300) return 1;
  const double periods = std::ceil(std::log(tol) / (n * std::log(rho)));
  return static_cast<int>(std::clamp(periods, 1.0, 10000.0));
}

TrialRecord run_loop(const DiscreteTF& plant_d, const ControllerModel& ctrl,
                     const Eigen::VectorXd& r, double divergence_bound, int settle_periods) {
  if (settle_periods < 0) throw std::invalid_argument("run_loop: negative settle_periods");
  DifferenceFilter plant(plant_d);
  DifferenceFilter fb(ctrl.gfb, ctrl.tau_fb);
  DifferenceFilter ff(ctrl.gff, ctrl.tau_ff);
  const bool plant_direct = plant.has_feedthrough();
  if (plant_direct && fb.has_feedthrough()) {
    throw std::invalid_argument("run_loop: algebraic loop (direct feedthrough in plant and feedback)");
  }

  const Eigen::Index n = r.size();
  TrialRecord rec;
  rec.Ts = plant_d.Ts();
  rec.settle_periods = settle_periods;
  rec.r = r;
  rec.u.resize(n);
  rec.y.resize(n);
  const Eigen::Index total = n * (settle_periods + 1);
  const Eigen::Index first = n * settle_periods;
  for (Eigen::Index k = 0; k < total; ++k) {
    const double rk = r[k % n];
    double y = 0.0;
    double u = 0.0;
    if (!plant_direct) {
      y = plant.peek();
      u = fb.step(rk - y) + ff.step(rk);
      plant.step(u);
    } else {
      u = fb.peek() + ff.step(rk);
      y = plant.step(u);
      fb.step(rk - y);
    }
    if (k >= first) {
      rec.u[k - first] = u;
      rec.y[k - first] = y;
    }
  }
  rec.divergent = detect_divergence(rec.y, divergence_bound);
  return rec;
}

TrialRecord run_trial(const DiscreteTF& plant_d, const ControllerModel& ctrl,
                      const ReferenceCommand& cmd, const ExperimentConfig& cfg,
                      int settle_periods) {
  TrialRecord rec = run_loop(plant_d, ctrl, sample(cmd, cfg.Ts, cfg.n), cfg.divergence_bound,
                             settle_periods);
  rec.reference_seed = cmd.seed;
  return rec;
}

Eigen::Vector3d fit_inverse_fir(const DiscreteTF& plant_d, double upper, int nodes) {
  if (nodes < 3) throw std::invalid_argument("fit_inverse_fir: need at least 3 nodes");
  Eigen::MatrixXd A(2 * nodes, 3);
  Eigen::VectorXd rhs(2 * nodes);
  for (int m = 0; m < nodes; ++m) {
    const double omega = upper * m / (nodes - 1);
    const double theta = omega * plant_d.Ts();
    const std::complex<double> target = 1.0 / freq_response(plant_d, 0, omega);
    for (int i = 0; i < 3; ++i) {
      const std::complex<double> basis = std::polar(1.0, -theta * i);
      A(2 * m, i) = basis.real();
      A(2 * m + 1, i) = basis.imag();
    }
    rhs[2 * m] = target.real();
    rhs[2 * m + 1] = target.imag();
  }
  return A.colPivHouseholderQr().solve(rhs);
}

std::vector<double> log_grid(double lo, double hi, int steps) {
  if (steps < 1 || !(lo > 0.0) || !(hi > 0.0)) throw std::invalid_argument("log_grid: bad range");
  std::vector<double> out(static_cast<std::size_t>(steps));
  for (int m = 0; m < steps; ++m) {
    out[static_cast<std::size_t>(m)] = steps == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(m) / (steps - 1));
  }
  return out;
}

FeedbackLag default_feedback_lag() {
  FeedbackLag lag;
  lag.kappa = log_grid(0.1, 3.0, 12)[7];
  lag.zero = 0.95;
  lag.p1 = {0.7, 0.0};
  lag.p2 = {0.3, 0.0};
  return lag;
}

ControllerModel synthetic_subject(const DiscreteTF& plant_d, double preview_s,
                                  double sensory_delay_s, double inversion_quality,
                                  const FeedbackLag& feedback, int tau_fb) {
  if (preview_s < 0.0 || sensory_delay_s < 0.0) {
    throw std::invalid_argument("synthetic_subject: preview and delay must be nonnegative");
  }
  if (inversion_quality < 0.0 || inversion_quality > 1.0) {
    throw std::invalid_argument("synthetic_subject: inversion_quality must lie in [0, 1]");
  }
  const double Ts = plant_d.Ts();
  const int tau_ff = std::max(0, static_cast<int>(std::lround((sensory_delay_s - preview_s) / Ts)));
  const Eigen::Vector3d inverse = fit_inverse_fir(plant_d);
  const Eigen::Vector3d stat(1.0 / plant_d(1.0).real(), 0.0, 0.0);
  const Eigen::Vector3d b = inversion_quality * inverse + (1.0 - inversion_quality) * stat;
  return ControllerModel::with_fir(b, tau_ff, feedback.tf(Ts), tau_fb);
}

ControllerModel synthetic_subject(const DiscreteTF& plant_d, double preview_s,
                                  double sensory_delay_s, double inversion_quality) {
  const int tau_fb = static_cast<int>(std::lround(sensory_delay_s / plant_d.Ts()));
  return synthetic_subject(plant_d, preview_s, sensory_delay_s, inversion_quality,
                           default_feedback_lag(), tau_fb);
}

}  // namespace hitl

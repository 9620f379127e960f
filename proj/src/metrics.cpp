#include "hitl/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "hitl/error.hpp"

namespace hitl {
namespace {

using cd = std::complex<double>;

cd plant_at(const DiscreteTF& plant_d, double omega) {
  const cd g = freq_response(plant_d, 0, omega);
  if (std::abs(g) < 1e-10) {
    throw NumericalError("plant response nearly vanishes on the evaluated arc; inverse is ill-conditioned");
  }
  return g;
}

cd feedforward_at(const ControllerModel& c, double omega) {
  return freq_response(c.gff, c.tau_ff, omega);
}

}  // namespace

double Quadrature::mean(const std::function<double(double)>& f) const {
  if (nodes < 2 || !(upper > 0.0)) throw std::invalid_argument("Quadrature: need >= 2 nodes and upper > 0");
  const int intervals = nodes - 1;
  const double h = upper / intervals;
  double acc = 0.5 * (f(0.0) + f(upper));
  for (int m = 1; m < intervals; ++m) acc += f(h * m);
  return acc * h / upper;
}

double time_avg_error(const Eigen::VectorXd& r, const Eigen::VectorXd& y) {
  if (r.size() != y.size() || r.size() == 0) {
    throw std::invalid_argument("time_avg_error: need equal, nonzero lengths");
  }
  return (r - y).cwiseAbs().mean();
}

double time_avg_error(const TrialRecord& trial) { return time_avg_error(trial.r, trial.y); }

FreqErrors freq_errors(const FreqResponseData& frd) {
  FreqErrors out;
  int used_m = 0;
  int used_p = 0;
  for (Eigen::Index i = 0; i < frd.r_dft.size(); ++i) {
    if (!frd.valid[i]) continue;
    const double ry = std::abs(frd.y_dft[i]);
    const double rr = std::abs(frd.r_dft[i]);
    out.Em += std::abs(ry - rr);
    ++used_m;
    if (ry == 0.0 || rr == 0.0) {
      ++out.skipped;
      continue;
    }
    const cd uy = frd.y_dft[i] / ry;
    const cd ur = frd.r_dft[i] / rr;
    out.Ep += rr * std::abs(uy - ur);
    ++used_p;
  }
  if (used_m == 0) throw DataError("freq_errors: no valid bins");
  out.Em /= used_m;
  out.Ep = used_p > 0 ? out.Ep / used_p : 0.0;
  return out;
}

double phase_error_unreduced(const FreqResponseData& frd) {
  double acc = 0.0;
  int used = 0;
  for (Eigen::Index i = 0; i < frd.r_dft.size(); ++i) {
    if (!frd.valid[i] || frd.y_dft[i] == 0.0 || frd.r_dft[i] == 0.0) continue;
    const double rr = std::abs(frd.r_dft[i]);
    acc += std::abs(std::polar(rr, std::arg(frd.y_dft[i])) - std::polar(rr, std::arg(frd.r_dft[i])));
    ++used;
  }
  return used > 0 ? acc / used : 0.0;
}

double ff_gap(const ControllerModel& ctrl, const DiscreteTF& plant_d, const Quadrature& q) {
  return q.mean([&](double w) {
    return std::abs(feedforward_at(ctrl, w) - 1.0 / plant_at(plant_d, w));
  });
}

double fb_norm(const ControllerModel& ctrl, const Quadrature& q) {
  return q.mean([&](double w) { return std::abs(freq_response(ctrl.gfb, ctrl.tau_fb, w)); });
}

MagPhaseErrors ff_mag_phase_errors(const ControllerModel& ctrl, const DiscreteTF& plant_d,
                                   const Quadrature& q) {
  MagPhaseErrors out;
  out.Me = q.mean([&](double w) {
    return std::abs(std::abs(feedforward_at(ctrl, w) * plant_at(plant_d, w)) - 1.0);
  });
  out.Pe = q.mean([&](double w) {
    const cd loop = feedforward_at(ctrl, w) * plant_at(plant_d, w);
    // arg(0) is taken as 0, so a vanishing feedforward adds no phase error.
    return std::abs(std::polar(1.0, std::arg(loop)) - 1.0);
  });
  return out;
}

double vaf(const Eigen::VectorXd& y, const Eigen::VectorXd& y_v, int n1) {
  if (y.size() != y_v.size()) throw std::invalid_argument("vaf: length mismatch");
  if (n1 < 1 || y.size() < n1) throw std::invalid_argument("vaf: record shorter than n1");
  const Eigen::Index start = n1 - 1;
  const Eigen::Index len = y.size() - start;
  const double denom = y.segment(start, len).squaredNorm();
  if (!(denom > 0.0)) throw DataError("vaf: zero-energy output over the validation window");
  return 1.0 - (y.segment(start, len) - y_v.segment(start, len)).squaredNorm() / denom;
}

ModelQuality model_quality(const ControllerModel& ctrl, const DiscreteTF& plant_d,
                           const Quadrature& q) {
  ModelQuality m;
  m.ff_gap = ff_gap(ctrl, plant_d, q);
  m.fb_norm = fb_norm(ctrl, q);
  const auto mp = ff_mag_phase_errors(ctrl, plant_d, q);
  m.Me = mp.Me;
  m.Pe = mp.Pe;
  m.T_ff = 1e3 * ctrl.tau_ff * plant_d.Ts();
  m.T_fb = 1e3 * ctrl.tau_fb * plant_d.Ts();
  return m;
}

}  // namespace hitl

#include "hitl/ssid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "hitl/error.hpp"
#include "hitl/metrics.hpp"
#include "json.hpp"

namespace hitl {
namespace {

using cd = std::complex<double>;

// Valid bins only, with the plant response and weights precomputed.
struct BinSet {
  std::vector<double> theta;
  std::vector<cd> H;
  std::vector<double> weight;
  std::vector<cd> G;

  Eigen::Index size() const { return static_cast<Eigen::Index>(theta.size()); }
};

BinSet prepare(const FreqResponseData& frd, const DiscreteTF& plant_d, Weighting weighting) {
  BinSet bins;
  for (Eigen::Index i = 0; i < frd.omegas.size(); ++i) {
    if (!frd.valid[i]) continue;
    const double mag = std::abs(frd.H[i]);
    if (weighting == Weighting::inverse_magnitude && !(mag > 0.0)) continue;
    bins.theta.push_back(frd.omegas[i] * plant_d.Ts());
    bins.H.push_back(frd.H[i]);
    bins.weight.push_back(weighting == Weighting::none ? 1.0 : 1.0 / mag);
    bins.G.push_back(freq_response(plant_d, 0, frd.omegas[i]));
  }
  if (bins.theta.empty()) throw DataError("ssid: no valid frequency bins");
  return bins;
}

// Stacked real system for tau_ff = 0: rows (2i, 2i+1) hold Re/Im of bin i.
// A b - y is the weighted residual (G (b0 + b1 z^-1 + b2 z^-2) + L) / (1 + L) - H.
void candidate_system(const BinSet& bins, const DiscreteTF& gfb, int tau_fb, Eigen::MatrixXd& A,
                      Eigen::VectorXd& y) {
  const Eigen::Index m = bins.size();
  A.resize(2 * m, 3);
  y.resize(2 * m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double th = bins.theta[static_cast<std::size_t>(i)];
    const cd z = std::polar(1.0, th);
    const cd G = bins.G[static_cast<std::size_t>(i)];
    const cd L = std::polar(1.0, -th * tau_fb) * gfb(z) * G;
    const cd D = 1.0 + L;
    if (std::abs(D) < 1e-12) throw NumericalError("ssid: closed-loop denominator vanishes at a bin");
    const double w = bins.weight[static_cast<std::size_t>(i)];
    const cd P = w * G / D;
    for (int c = 0; c < 3; ++c) {
      const cd a = P * std::polar(1.0, -th * c);
      A(2 * i, c) = a.real();
      A(2 * i + 1, c) = a.imag();
    }
    const cd t = w * (bins.H[static_cast<std::size_t>(i)] - L / D);
    y[2 * i] = t.real();
    y[2 * i + 1] = t.imag();
  }
}

// y rotated by e^{+j theta_i tau}: the residual for delay tau is A b - rotated y.
void rotate(const Eigen::VectorXd& y, const std::vector<cd>& phasors, Eigen::VectorXd& out) {
  out.resize(y.size());
  for (std::size_t i = 0; i < phasors.size(); ++i) {
    const cd v = cd(y[2 * i], y[2 * i + 1]) * phasors[i];
    out[2 * i] = v.real();
    out[2 * i + 1] = v.imag();
  }
}

std::vector<cd> delay_phasors(const BinSet& bins, int tau) {
  std::vector<cd> p(bins.theta.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::polar(1.0, bins.theta[i] * tau);
  return p;
}

FeedforwardFit solve_cell(const Eigen::MatrixXd& A, const Eigen::VectorXd& y) {
  FeedforwardFit fit;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-13);
  if (qr.rank() < 3) {
    fit.rank_deficient = true;
    fit.b = Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(A).solve(y);
  } else {
    fit.b = qr.solve(y);
  }
  fit.J = (A * fit.b - y).squaredNorm();
  return fit;
}

struct Best {
  double J = std::numeric_limits<double>::infinity();
  int tau_ff = 0;
  int tau_fb = 0;
  std::size_t index = 0;
  std::size_t slot = 0;  // position in pools.feedback
  Eigen::Vector3d b = Eigen::Vector3d::Zero();
  bool found = false;
};

bool better(const Best& a, const Best& b) {
  if (!b.found) return a.found;
  if (!a.found) return false;
  if (a.J != b.J) return a.J < b.J;
  if (a.tau_ff != b.tau_ff) return a.tau_ff < b.tau_ff;
  if (a.tau_fb != b.tau_fb) return a.tau_fb < b.tau_fb;
  return a.index < b.index;
}

Best scan_range(const BinSet& bins, const CandidatePools& pools,
                const std::vector<std::vector<cd>>& phasors, std::size_t begin, std::size_t end) {
  Best best;
  Eigen::MatrixXd A;
  Eigen::VectorXd y;
  Eigen::VectorXd yr;
  for (std::size_t s = begin; s < end; ++s) {
    const auto& cand = pools.feedback[s];
    candidate_system(bins, cand.gfb, cand.tau_fb, A, y);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
    const Eigen::Matrix3d R = qr.matrixQR().topRows<3>().triangularView<Eigen::Upper>();
    const double rmax = R.diagonal().cwiseAbs().maxCoeff();
    const bool deficient = !(R.diagonal().cwiseAbs().minCoeff() > 1e-13 * rmax);
    Eigen::MatrixXd Q;
    if (!deficient) Q = qr.householderQ() * Eigen::MatrixXd::Identity(A.rows(), 3);
    const double y2 = y.squaredNorm();
    const double slack = 1e-10 * y2 + 1e-300;

    for (std::size_t t = 0; t < pools.ff_delays.size(); ++t) {
      rotate(y, phasors[t], yr);
      Best cell;
      cell.tau_ff = pools.ff_delays[t];
      cell.tau_fb = cand.tau_fb;
      cell.index = cand.index;
      cell.slot = s;
      cell.found = true;
      if (deficient) {
        const FeedforwardFit fit = solve_cell(A, yr);
        cell.J = fit.J;
        cell.b = fit.b;
      } else {
        const Eigen::Vector3d c = Q.transpose() * yr;
        // ||y||^2 - ||Q^T y||^2 is accurate to ~eps ||y||^2, enough to prune.
        if (best.found && y2 - c.squaredNorm() > best.J + slack) continue;
        cell.b = R.triangularView<Eigen::Upper>().solve(c);
        cell.J = (A * cell.b - yr).squaredNorm();
      }
      if (better(cell, best)) best = cell;
    }
  }
  return best;
}

Eigen::Vector2d tail2(const Coeffs& c) {
  Eigen::Vector2d out = Eigen::Vector2d::Zero();
  const Eigen::Index k = std::min<Eigen::Index>(2, c.size());
  out.tail(k) = c.tail(k);
  return out;
}

}  // namespace

void PoolConfig::validate() const {
  if (kappas.empty() || zeros.empty() || pole_pairs.empty()) {
    throw ConfigError("pools: kappas, zeros and pole_pairs must be non-empty");
  }
  if (tau_fb_min < 0 || tau_fb_max < tau_fb_min) throw ConfigError("pools: invalid tau_fb range");
  if (tau_ff_min < 0 || tau_ff_max < tau_ff_min) throw ConfigError("pools: invalid tau_ff range");
  for (const auto& [p1, p2] : pole_pairs) {
    if (std::abs(p1) >= 1.0 || std::abs(p2) >= 1.0) throw ConfigError("pools: pole pairs must lie inside the unit circle");
    if (p1.imag() != 0.0 && std::abs(p1 - std::conj(p2)) > 1e-12) {
      throw ConfigError("pools: complex poles must be conjugate pairs");
    }
  }
}

bool stability_filter(const DiscreteTF& plant_d, const DiscreteTF& gfb, int tau_fb) {
  return is_stable(closed_loop_characteristic(plant_d, gfb, tau_fb));
}

CandidatePools build_pools(const DiscreteTF& plant_d, const PoolConfig& cfg) {
  cfg.validate();
  CandidatePools pools;
  std::size_t index = 0;
  for (int tau = cfg.tau_fb_min; tau <= cfg.tau_fb_max; ++tau) {
    for (double kappa : cfg.kappas) {
      for (double zero : cfg.zeros) {
        for (const auto& [p1, p2] : cfg.pole_pairs) {
          FeedbackCandidate c{FeedbackLag{kappa, zero, p1, p2}, FeedbackLag{kappa, zero, p1, p2}.tf(plant_d.Ts()),
                              tau, index++};
          if (stability_filter(plant_d, c.gfb, tau)) {
            pools.feedback.push_back(std::move(c));
          } else {
            ++pools.rejected_unstable;
          }
        }
      }
    }
  }
  for (int tau = cfg.tau_ff_min; tau <= cfg.tau_ff_max; ++tau) pools.ff_delays.push_back(tau);
  if (pools.feedback.empty()) throw ConfigError("pools: no stabilizing feedback candidate");
  return pools;
}

Eigen::VectorXcd closed_loop_tf_at_bins(const DiscreteTF& plant_d, const ControllerModel& ctrl,
                                        const Eigen::VectorXd& omegas) {
  Eigen::VectorXcd out(omegas.size());
  for (Eigen::Index i = 0; i < omegas.size(); ++i) {
    const double w = omegas[i];
    const cd G = freq_response(plant_d, 0, w);
    const cd F = freq_response(ctrl.gff, ctrl.tau_ff, w);
    const cd B = freq_response(ctrl.gfb, ctrl.tau_fb, w);
    const cd D = 1.0 + B * G;
    if (std::abs(D) < 1e-12) throw NumericalError("closed_loop_tf_at_bins: singular denominator");
    out[i] = G * (F + B) / D;
  }
  return out;
}

DiscreteTF closed_loop_tf(const DiscreteTF& plant_d, const ControllerModel& ctrl) {
  const Coeffs& Ng = plant_d.num();
  const Coeffs& Dg = plant_d.den();
  const Coeffs& Nf = ctrl.gff.num();
  const Coeffs& Df = ctrl.gff.den();
  const Coeffs& Nb = ctrl.gfb.num();
  const Coeffs& Db = ctrl.gfb.den();
  // Closed-loop numerator and denominator multiplied through by Dg Db Df z^{tau_ff + tau_fb}.
  const Coeffs num = polymul(Ng, polyadd(shift_up(polymul(Nf, Db), ctrl.tau_fb),
                                         shift_up(polymul(Nb, Df), ctrl.tau_ff)));
  const Coeffs den = polyadd(shift_up(polymul(polymul(Dg, Db), Df), ctrl.tau_ff + ctrl.tau_fb),
                             shift_up(polymul(polymul(Nb, Ng), Df), ctrl.tau_ff));
  return DiscreteTF(num, den, plant_d.Ts());
}

FeedforwardFit fit_feedforward(const FreqResponseData& frd, const DiscreteTF& plant_d,
                               const DiscreteTF& gfb, int tau_fb, int tau_ff, Weighting weighting) {
  if (tau_fb < 0 || tau_ff < 0) throw std::invalid_argument("fit_feedforward: negative delay");
  const BinSet bins = prepare(frd, plant_d, weighting);
  Eigen::MatrixXd A;
  Eigen::VectorXd y;
  Eigen::VectorXd yr;
  candidate_system(bins, gfb, tau_fb, A, y);
  rotate(y, delay_phasors(bins, tau_ff), yr);
  return solve_cell(A, yr);
}

IdentifiedModel ssid_search(const FreqResponseData& frd, const DiscreteTF& plant_d,
                            const CandidatePools& pools, const SearchOptions& opts) {
  if (pools.feedback.empty() || pools.ff_delays.empty()) throw ConfigError("ssid: empty candidate pool");
  const BinSet bins = prepare(frd, plant_d, opts.weighting);
  std::vector<std::vector<cd>> phasors;
  for (int tau : pools.ff_delays) phasors.push_back(delay_phasors(bins, tau));

  unsigned threads = opts.threads != 0 ? opts.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, pools.feedback.size()));
  std::vector<Best> partial(threads);
  if (threads <= 1) {
    partial[0] = scan_range(bins, pools, phasors, 0, pools.feedback.size());
  } else {
    std::vector<std::thread> workers;
    const std::size_t chunk = (pools.feedback.size() + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = std::min(pools.feedback.size(), t * chunk);
      const std::size_t end = std::min(pools.feedback.size(), begin + chunk);
      workers.emplace_back([&, t, begin, end] { partial[t] = scan_range(bins, pools, phasors, begin, end); });
    }
    for (auto& w : workers) w.join();
  }
  Best best;
  for (const auto& p : partial) {
    if (better(p, best)) best = p;
  }
  const auto& cand = pools.feedback[best.slot];
  return IdentifiedModel{ControllerModel::with_fir(best.b, best.tau_ff, cand.gfb, cand.tau_fb), best.J,
                         std::numeric_limits<double>::quiet_NaN(),
                         opts.weighting == Weighting::inverse_magnitude, cand.index};
}

double validate(const TrialRecord& trial, const IdentifiedModel& model, const DiscreteTF& plant_d) {
  if (!stability_filter(plant_d, model.ctrl.gfb, model.ctrl.tau_fb)) {
    throw NumericalError("validate: identified closed loop is not asymptotically stable");
  }
  DifferenceFilter loop(closed_loop_tf(plant_d, model.ctrl));
  const Eigen::Index n = trial.r.size();
  Eigen::VectorXd y_v(n);
  const Eigen::Index total = n * (trial.settle_periods + 1);
  const Eigen::Index first = n * trial.settle_periods;
  for (Eigen::Index k = 0; k < total; ++k) {
    const double out = loop.step(trial.r[k % n]);
    if (k >= first) y_v[k - first] = out;
  }
  return vaf(trial.y, y_v);
}

std::string to_json(const IdentifiedModel& model) {
  const auto& c = model.ctrl;
  // Gfb written as (beta1 z + beta2) / (z^2 + alpha1 z + alpha2).
  const int lift = 2 - c.gfb.order();
  const Coeffs num = shift_up(c.gfb.num(), lift);
  const Coeffs den = shift_up(c.gfb.den(), lift);
  const Eigen::Vector2d beta = tail2(num);
  const Eigen::Vector2d alpha = tail2(den);
  const Eigen::Vector3d b = c.fir();
  nlohmann::json j;
  j["b"] = {b[0], b[1], b[2]};
  j["tau_ff"] = c.tau_ff;
  j["gfb"] = {{"beta", {beta[0], beta[1]}}, {"alpha", {alpha[0], alpha[1]}}};
  j["tau_fb"] = c.tau_fb;
  j["J"] = model.cost;
  j["vaf"] = std::isnan(model.vaf) ? nlohmann::json(nullptr) : nlohmann::json(model.vaf);
  j["weighted"] = model.weighted;
  j["Ts"] = c.Ts();
  j["feedback_index"] = model.feedback_index;
  return j.dump(2) + "\n";
}

IdentifiedModel identified_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    const double Ts = j.value("Ts", 0.02);
    const auto b = j.at("b").get<std::vector<double>>();
    const auto beta = j.at("gfb").at("beta").get<std::vector<double>>();
    const auto alpha = j.at("gfb").at("alpha").get<std::vector<double>>();
    if (b.size() != 3 || beta.size() != 2 || alpha.size() != 2) {
      throw DataError("identified model JSON: wrong coefficient counts");
    }
    DiscreteTF gfb(Coeffs{{0.0, beta[0], beta[1]}}, Coeffs{{1.0, alpha[0], alpha[1]}}, Ts);
    IdentifiedModel m{ControllerModel::with_fir(Eigen::Vector3d(b[0], b[1], b[2]), j.at("tau_ff").get<int>(),
                                                gfb, j.at("tau_fb").get<int>()),
                      j.at("J").get<double>(), std::numeric_limits<double>::quiet_NaN(),
                      j.at("weighted").get<bool>(), j.value("feedback_index", std::size_t{0})};
    if (!j.at("vaf").is_null()) m.vaf = j.at("vaf").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("identified model JSON: ") + e.what());
  }
}

}  // namespace hitl

#include <cmath>
#include <complex>
#include <random>

#include "doctest.h"
#include "hitl/error.hpp"
#include "hitl/metrics.hpp"
#include "hitl/pipeline.hpp"
#include "hitl/refgen.hpp"
#include "hitl/ssid.hpp"
#include "test_support.hpp"

using namespace hitl;
using cd = std::complex<double>;

namespace {

constexpr double Ts = 0.02;

const CandidatePools& pools() {
  static const CandidatePools p = build_pools(testing::plant_d());
  return p;
}

// Bin data whose H is the given closed loop evaluated analytically.
FreqResponseData analytic_data(const Eigen::VectorXcd& H) {
  FreqResponseData f;
  f.omegas = bin_frequencies();
  f.r_dft = Eigen::VectorXcd::Ones(30);
  f.y_dft = H;
  f.H = H;
  f.valid = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(30, true);
  return f;
}

ControllerModel random_pool_controller(std::mt19937_64& rng, std::size_t* index = nullptr) {
  const auto& p = pools();
  std::uniform_int_distribution<std::size_t> pick(0, p.feedback.size() - 1);
  std::uniform_int_distribution<int> tff(p.ff_delays.front(), p.ff_delays.back());
  std::normal_distribution<double> nd;
  const auto& cand = p.feedback[pick(rng)];
  if (index) *index = cand.index;
  const Eigen::Vector3d b(1.0 + 0.3 * nd(rng), nd(rng), 0.5 * nd(rng));
  return ControllerModel::with_fir(b, tff(rng), cand.gfb, cand.tau_fb);
}

double residual_energy(const FreqResponseData& f, const DiscreteTF& g, const ControllerModel& c) {
  return (closed_loop_tf_at_bins(g, c, f.omegas) - f.H).squaredNorm();
}

}  // namespace

TEST_CASE("closed loop at the bins") {
  const auto g = testing::plant_d();
  const auto w = bin_frequencies();
  CHECK(closed_loop_tf_at_bins(g, ControllerModel::zero(Ts), w).isZero(0.0));

  // plant with an FIR inverse and feedforward equal to that inverse
  const DiscreteTF inv_plant(Coeffs{{1.0, 0.0, 0.0}}, Coeffs{{1.0, -1.2, 0.5}}, Ts);
  const auto ff = ControllerModel::with_fir({1.0, -1.2, 0.5}, 0, DiscreteTF::zero(Ts), 0);
  CHECK((closed_loop_tf_at_bins(inv_plant, ff, w).array() - 1.0).abs().maxCoeff() < 1e-13);

  // two independent evaluation paths
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 25; ++rep) {
    const auto c = random_pool_controller(rng);
    const auto H = closed_loop_tf_at_bins(g, c, w);
    const auto rational = closed_loop_tf(g, c);
    for (int i = 0; i < 30; ++i) {
      const cd G = freq_response(g, 0, w[i]);
      const cd F = freq_response(c.gff, c.tau_ff, w[i]);
      const cd B = freq_response(c.gfb, c.tau_fb, w[i]);
      const cd ref = G * (F + B) / (1.0 + B * G);
      CHECK(std::abs(H[i] - ref) <= 1e-12 * std::max(1.0, std::abs(ref)));
      CHECK(std::abs(freq_response(rational, 0, w[i]) - ref) <= 1e-9 * std::max(1.0, std::abs(ref)));
    }
  }
}

TEST_CASE("stability filter") {
  const auto g = testing::plant_d();
  CHECK(stability_filter(g, DiscreteTF::zero(Ts), 15));

  // bisection oracle on the gain of a fixed lag
  FeedbackLag lag = default_feedback_lag();
  const double kc = critical_gain(g, lag, 15);
  auto at = [&](double k, int tau) {
    FeedbackLag l = lag;
    l.kappa = k;
    return stability_filter(g, l.tf(Ts), tau);
  };
  CHECK(at(0.98 * kc * lag.kappa, 15));
  CHECK_FALSE(at(1.02 * kc * lag.kappa, 15));

  // the same lag flips to unstable as its delay grows
  const double k = 0.9 * critical_gain(g, lag, 5) * lag.kappa;
  CHECK(at(k, 5));
  bool flipped = false;
  for (int tau = 6; tau <= 25 && !flipped; ++tau) flipped = !at(k, tau);
  CHECK(flipped);
}

TEST_CASE("default pools") {
  const auto& p = pools();
  CHECK(p.ff_delays.size() == 26);
  CHECK(p.feedback.size() + p.rejected_unstable == 21u * 12u * 4u * 8u);
  CHECK(p.feedback.size() > 1000);
  const auto g = testing::plant_d();
  for (std::size_t i = 0; i < p.feedback.size(); i += 97) {
    const auto& c = p.feedback[i];
    CHECK(c.gfb.strictly_proper());
    CHECK(stability_filter(g, c.gfb, c.tau_fb));
  }
  PoolConfig bad;
  bad.kappas.clear();
  CHECK_THROWS_AS(build_pools(g, bad), ConfigError);
  PoolConfig hot;
  hot.kappas = {1e4};
  CHECK_THROWS_AS(build_pools(g, hot), ConfigError);
}

TEST_CASE("feedforward fit recovers the true FIR") {
  const auto g = testing::plant_d();
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const auto truth = random_pool_controller(rng);
    const auto f = analytic_data(closed_loop_tf_at_bins(g, truth, bin_frequencies()));
    const auto fit = fit_feedforward(f, g, truth.gfb, truth.tau_fb, truth.tau_ff);
    CHECK((fit.b - truth.fir()).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(fit.J < 1e-16);
    CHECK_FALSE(fit.rank_deficient);
  }
}

TEST_CASE("pure feedback data fits a zero feedforward") {
  const auto g = testing::plant_d();
  const auto& cand = pools().feedback[123];
  const auto fb_only = ControllerModel::with_fir({0, 0, 0}, 0, cand.gfb, cand.tau_fb);
  const auto f = analytic_data(closed_loop_tf_at_bins(g, fb_only, bin_frequencies()));
  const auto fit = fit_feedforward(f, g, cand.gfb, cand.tau_fb, 9);
  CHECK(fit.b.cwiseAbs().maxCoeff() < 1e-8);
  CHECK(fit.J < 1e-16);
}

TEST_CASE("fit is the least-squares minimizer") {
  const auto g = testing::plant_d();
  std::mt19937_64 rng(3);
  const auto truth = random_pool_controller(rng);
  auto H = closed_loop_tf_at_bins(g, truth, bin_frequencies());
  std::normal_distribution<double> nd;
  for (auto& h : H) h += cd(0.01 * nd(rng), 0.01 * nd(rng));
  const auto f = analytic_data(H);
  // a wrong delay, so J is well away from zero
  const auto& cand = pools().feedback[400];
  const int tff = 6;
  const auto fit = fit_feedforward(f, g, cand.gfb, cand.tau_fb, tff);
  auto energy = [&](const Eigen::Vector3d& b) {
    return residual_energy(f, g, ControllerModel::with_fir(b, tff, cand.gfb, cand.tau_fb));
  };
  CHECK(fit.J == doctest::Approx(energy(fit.b)).epsilon(1e-10));
  for (int d = 0; d < 100; ++d) {
    Eigen::Vector3d dir(nd(rng), nd(rng), nd(rng));
    CHECK(energy(fit.b + 1e-3 * dir.normalized()) > fit.J);
  }

  // normal equations A^T (A b - y) = 0 from the affine residual
  Eigen::MatrixXd A(60, 3);
  Eigen::VectorXd y(60);
  const Eigen::Vector3d zero = Eigen::Vector3d::Zero();
  for (int i = 0; i < 30; ++i) {
    const cd c0 = closed_loop_tf_at_bins(g, ControllerModel::with_fir(zero, tff, cand.gfb, cand.tau_fb), f.omegas)[i] - f.H[i];
    for (int j = 0; j < 3; ++j) {
      Eigen::Vector3d e = Eigen::Vector3d::Zero();
      e[j] = 1.0;
      const cd cj = closed_loop_tf_at_bins(g, ControllerModel::with_fir(e, tff, cand.gfb, cand.tau_fb), f.omegas)[i] - f.H[i] - c0;
      A(2 * i, j) = cj.real();
      A(2 * i + 1, j) = cj.imag();
    }
    y[2 * i] = -c0.real();
    y[2 * i + 1] = -c0.imag();
  }
  const Eigen::Vector3d grad = A.transpose() * (A * fit.b - y);
  CHECK(grad.norm() <= 1e-10 * (A.transpose() * y).norm());
}

TEST_CASE("search recovers a pool member exactly") {
  const auto g = testing::plant_d();
  std::mt19937_64 rng(2024);
  for (int rep = 0; rep < 4; ++rep) {
    std::size_t index = 0;
    const auto truth = random_pool_controller(rng, &index);
    ExperimentConfig cfg;
    const auto rec = run_trial(g, truth, generate_reference(rep + 1), cfg, settle_periods_for(g, truth, cfg.n));
    auto m = ssid_search(closed_loop_response(rec), g, pools());
    CHECK(m.cost <= 1e-12);
    CHECK(m.ctrl.tau_ff == truth.tau_ff);
    CHECK(m.ctrl.tau_fb == truth.tau_fb);
    CHECK(m.feedback_index == index);
    CHECK((m.ctrl.fir() - truth.fir()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(validate(rec, m, g) >= 1.0 - 1e-9);
  }
}

TEST_CASE("search determinism, weighting and brute-force audit") {
  const auto g = testing::plant_d();
  // a trial no pool member explains exactly
  const auto subject = synthetic_subject(g, 0.5, 0.3, 0.6);
  ExperimentConfig cfg;
  const auto rec = run_trial(g, subject, generate_reference(77), cfg);
  const auto f = closed_loop_response(rec);
  const auto one = ssid_search(f, g, pools(), {Weighting::none, 1});
  const auto many = ssid_search(f, g, pools(), {Weighting::none, 4});
  CHECK(one.cost == many.cost);
  CHECK(one.feedback_index == many.feedback_index);
  CHECK(one.ctrl.tau_ff == many.ctrl.tau_ff);
  CHECK(one.ctrl.fir() == many.ctrl.fir());

  std::mt19937_64 rng(9);
  std::uniform_int_distribution<std::size_t> fb(0, pools().feedback.size() - 1);
  std::uniform_int_distribution<int> tff(0, 25);
  for (int cell = 0; cell < 100; ++cell) {
    const auto& c = pools().feedback[fb(rng)];
    CHECK(fit_feedforward(f, g, c.gfb, c.tau_fb, tff(rng)).J >= one.cost);
  }

  // enlarging the pools never increases the minimum
  CandidatePools sub = pools();
  sub.feedback.erase(sub.feedback.begin() + static_cast<long>(sub.feedback.size() / 3), sub.feedback.end());
  sub.ff_delays = {0, 5, 10};
  CHECK(ssid_search(f, g, sub, {Weighting::none, 2}).cost >= one.cost);

  // constant |H|: uniform weights, same minimizer
  FreqResponseData flat = f;
  for (int i = 0; i < 30; ++i) flat.H[i] = std::polar(0.8, std::arg(f.H[i]));
  const auto plain = ssid_search(flat, g, pools(), {Weighting::none, 0});
  const auto weighted = ssid_search(flat, g, pools(), {Weighting::inverse_magnitude, 0});
  CHECK(weighted.weighted);
  CHECK_FALSE(plain.weighted);
  CHECK(weighted.feedback_index == plain.feedback_index);
  CHECK(weighted.ctrl.tau_ff == plain.ctrl.tau_ff);
  CHECK((weighted.ctrl.fir() - plain.ctrl.fir()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(weighted.cost == doctest::Approx(plain.cost / (0.8 * 0.8)).epsilon(1e-9));
}

TEST_CASE("search rejects data without valid bins") {
  auto f = analytic_data(Eigen::VectorXcd::Ones(30));
  f.valid.setConstant(false);
  CHECK_THROWS_AS(ssid_search(f, testing::plant_d(), pools()), DataError);
}

TEST_CASE("validation of a mismatched model") {
  const auto g = testing::plant_d();
  const auto subject = synthetic_subject(g, 1.0, 0.3, 1.0);
  ExperimentConfig cfg;
  const auto rec = run_trial(g, subject, generate_reference(5), cfg);
  IdentifiedModel zero{ControllerModel::zero(Ts)};
  CHECK(validate(rec, zero, g) < 0.5);
  IdentifiedModel exact{subject};
  CHECK(validate(rec, exact, g) >= 1.0 - 1e-9);
}

TEST_CASE("identified model json round trip") {
  std::mt19937_64 rng(1);
  IdentifiedModel m{random_pool_controller(rng), 3.5e-13, 0.9999, true, 42};
  const auto back = identified_from_json(to_json(m));
  CHECK(back.ctrl.fir() == m.ctrl.fir());
  CHECK(back.ctrl.tau_ff == m.ctrl.tau_ff);
  CHECK(back.ctrl.tau_fb == m.ctrl.tau_fb);
  CHECK(back.ctrl.gfb == m.ctrl.gfb);
  CHECK(back.cost == m.cost);
  CHECK(back.vaf == m.vaf);
  CHECK(back.weighted);
  CHECK(back.feedback_index == 42);
  IdentifiedModel no_vaf{ControllerModel::zero(Ts)};
  CHECK(std::isnan(identified_from_json(to_json(no_vaf)).vaf));
  CHECK_THROWS(identified_from_json("{\"b\": 3}"));
}

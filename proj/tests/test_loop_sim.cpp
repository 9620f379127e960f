#include <cmath>

#include "doctest.h"
#include "hitl/error.hpp"
#include "hitl/loop_sim.hpp"
#include "hitl/metrics.hpp"
#include "hitl/refgen.hpp"
#include "hitl/ssid.hpp"
#include "test_support.hpp"

using namespace hitl;

namespace {

ExperimentConfig cfg() { return {}; }

ControllerModel inverse_only(const DiscreteTF& g) {
  return ControllerModel::with_fir(fit_inverse_fir(g), 0, DiscreteTF::zero(g.Ts()), 0);
}

}  // namespace

TEST_CASE("controller model invariants") {
  const double Ts = 0.02;
  CHECK_THROWS_AS(ControllerModel(DiscreteTF::unity(Ts), -1, DiscreteTF::zero(Ts), 0), std::invalid_argument);
  // feedback must be strictly proper
  CHECK_THROWS_AS(ControllerModel(DiscreteTF::unity(Ts), 0, DiscreteTF::unity(Ts), 3), std::invalid_argument);
  // feedforward must be FIR
  CHECK_THROWS_AS(ControllerModel(DiscreteTF(Coeffs{{1.0, 0.0}}, Coeffs{{1.0, -0.5}}, Ts), 0,
                                  DiscreteTF::zero(Ts), 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(ControllerModel(DiscreteTF::unity(Ts), 0, DiscreteTF::zero(0.01), 0), std::invalid_argument);

  const Eigen::Vector3d b(1.5, -0.25, 0.125);
  const auto c = ControllerModel::with_fir(b, 4, default_feedback_lag().tf(Ts), 15);
  CHECK(c.fir() == b);
  CHECK(c.ff_exactly_proper());
  CHECK_FALSE(ControllerModel::with_fir({0.0, 1.0, 0.0}, 0, DiscreteTF::zero(Ts), 0).ff_exactly_proper());
}

TEST_CASE("feedback lag has DC gain kappa") {
  FeedbackLag lag{1.7, 0.9, {0.6, 0.3}, {0.6, -0.3}};
  const auto tf = lag.tf(0.02);
  CHECK(tf.strictly_proper());
  CHECK(std::abs(tf(1.0) - 1.7) < 1e-13);
  CHECK_THROWS_AS((FeedbackLag{1.0, 1.0, {0.5, 0.0}, {0.0, 0.0}}.tf(0.02)), std::invalid_argument);
}

TEST_CASE("divergence is strict exceedance of the bound") {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(50);
  CHECK_FALSE(detect_divergence(y, 4.4));
  y[17] = 4.41;
  CHECK(detect_divergence(y, 4.4));
  y[17] = -4.41;
  CHECK(detect_divergence(y, 4.4));
  CHECK_FALSE(detect_divergence(Eigen::VectorXd::Constant(50, 4.4), 4.4));
  CHECK_FALSE(detect_divergence(Eigen::VectorXd::Constant(50, -4.4), 4.4));
  y.setZero();
  y[3] = std::nan("");
  CHECK(detect_divergence(y, 4.4));
}

TEST_CASE("zero controller is the no-control baseline") {
  const auto g = testing::plant_d();
  const auto cmd = generate_reference(11);
  const auto rec = run_trial(g, ControllerModel::zero(0.02), cmd, cfg());
  REQUIRE(rec.n() == 3000);
  CHECK(rec.u.isZero(0.0));
  CHECK(rec.y.isZero(0.0));
  CHECK(rec.e() == rec.r);
  CHECK_FALSE(rec.divergent);
  CHECK(rec.reference_seed == 11);
  CHECK(time_avg_error(rec) == rec.r.cwiseAbs().mean());
}

TEST_CASE("band-limited inverse feedforward tracks closely") {
  const auto g = testing::plant_d();
  const auto ctrl = inverse_only(g);
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto rec = run_trial(g, ctrl, generate_reference(seed), cfg());
    worst = std::max(worst, time_avg_error(rec));
  }
  CHECK(worst < 0.15);
}

TEST_CASE("loop update order and causality") {
  const auto g = testing::plant_d();
  const auto ctrl = synthetic_subject(g, 0.5, 0.3, 0.7);
  const auto cmd = generate_reference(3);
  const auto rec = run_trial(g, ctrl, cmd, cfg());

  // y_k is the strictly proper plant's response to u_1..u_{k-1}
  const auto sim = simulate(g, 0, rec.u);
  CHECK((sim.output - rec.y).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(rec.y[0] == 0.0);

  // u = Gfb (delayed) e + Gff (delayed) r
  const auto fb = simulate(ctrl.gfb, ctrl.tau_fb, rec.e());
  const auto ff = simulate(ctrl.gff, ctrl.tau_ff, rec.r);
  CHECK(((fb.output + ff.output) - rec.u).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("superposition and determinism") {
  const auto g = testing::plant_d();
  const auto ctrl = synthetic_subject(g, 0.0, 0.3, 0.4);
  const auto r = sample(generate_reference(5), 0.02, 3000);
  const auto a = run_loop(g, ctrl, r, 4.4);
  const auto b = run_loop(g, ctrl, 2.0 * r, 8.8);
  CHECK(b.u == 2.0 * a.u);
  CHECK(b.y == 2.0 * a.y);
  CHECK(b.e() == 2.0 * a.e());
  const auto again = run_loop(g, ctrl, r, 4.4);
  CHECK(again.u == a.u);
  CHECK(again.y == a.y);
}

TEST_CASE("biproper plant resolves through strictly proper feedback") {
  // 0.5 (z - 0.2) / (z - 0.6) has direct feedthrough
  const DiscreteTF g(Coeffs{{0.5, -0.1}}, Coeffs{{1.0, -0.6}}, 0.02);
  const auto ctrl = ControllerModel::with_fir({1.0, 0.0, 0.0}, 0, FeedbackLag{0.5, 0.9, {0.5, 0}, {0, 0}}.tf(0.02), 0);
  Eigen::VectorXd r = Eigen::VectorXd::Ones(40);
  const auto rec = run_loop(g, ctrl, r, 10.0);
  const auto sim = simulate(g, 0, rec.u);
  CHECK((sim.output - rec.y).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("stabilizing pool candidates keep the loop bounded") {
  const auto g = testing::plant_d();
  const auto pools = build_pools(g);
  const auto r = sample(generate_reference(9), 0.02, 3000);
  for (std::size_t i = 0; i < pools.feedback.size(); i += 613) {
    const auto& cand = pools.feedback[i];
    const auto ctrl = ControllerModel::with_fir(fit_inverse_fir(g), 7, cand.gfb, cand.tau_fb);
    const auto rec = run_loop(g, ctrl, r, 1e6);
    CHECK(rec.y.allFinite());
    // a stable loop forgets its transient, so the last period repeats the one before
    const auto settled = run_loop(g, ctrl, r, 1e6, settle_periods_for(g, ctrl, 3000));
    const auto more = run_loop(g, ctrl, r, 1e6, settle_periods_for(g, ctrl, 3000) + 1);
    CHECK((settled.y - more.y).cwiseAbs().maxCoeff() < 1e-12 * (1.0 + more.y.cwiseAbs().maxCoeff()) * 10.0);
  }
}

TEST_CASE("settle periods require a stable loop") {
  const auto g = testing::plant_d();
  FeedbackLag hot = default_feedback_lag();
  hot.kappa = 50.0;
  const auto ctrl = ControllerModel::with_fir({1.0, 0, 0}, 0, hot.tf(0.02), 15);
  CHECK_THROWS_AS(settle_periods_for(g, ctrl, 3000), NumericalError);
  CHECK(settle_periods_for(g, ControllerModel::zero(0.02), 3000) >= 1);
}

TEST_CASE("synthetic subject delays and inversion quality") {
  const auto g = testing::plant_d();
  CHECK(synthetic_subject(g, 0.0, 0.3, 1.0).tau_ff == 15);
  CHECK(synthetic_subject(g, 0.5, 0.3, 1.0).tau_ff == 0);
  CHECK(synthetic_subject(g, 1.0, 0.3, 1.0).tau_ff == 0);
  CHECK(synthetic_subject(g, 0.1, 0.3, 1.0).tau_ff == 10);
  CHECK(synthetic_subject(g, 0.0, 0.3, 1.0).tau_fb == 15);
  CHECK_THROWS_AS(synthetic_subject(g, -0.1, 0.3, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(synthetic_subject(g, 0.0, 0.3, 1.5), std::invalid_argument);

  // quality 0 is the static inverse DC gain
  const auto q0 = synthetic_subject(g, 1.0, 0.3, 0.0);
  CHECK(q0.fir()[0] == doctest::Approx(1.0 / 1.1).epsilon(1e-12));
  CHECK(q0.fir()[1] == 0.0);
  const auto q1 = synthetic_subject(g, 1.0, 0.3, 1.0);
  CHECK(ff_gap(q1, g) < ff_gap(q0, g));
  CHECK(stability_filter(g, q1.gfb, q1.tau_fb));
}

TEST_CASE("log grid") {
  const auto k = log_grid(0.1, 3.0, 12);
  REQUIRE(k.size() == 12);
  CHECK(k.front() == doctest::Approx(0.1));
  CHECK(k.back() == doctest::Approx(3.0));
  for (std::size_t i = 1; i < k.size(); ++i) CHECK(k[i] / k[i - 1] == doctest::Approx(k[1] / k[0]));
  CHECK_THROWS_AS(log_grid(0.0, 1.0, 3), std::invalid_argument);
}

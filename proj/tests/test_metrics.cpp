#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "doctest.h"
#include "hitl/error.hpp"
#include "hitl/metrics.hpp"
#include "hitl/refgen.hpp"
#include "test_support.hpp"

using namespace hitl;
using cd = std::complex<double>;

namespace {

constexpr double Ts = 0.02;

// Spectrum data built directly, bypassing the DFT.
FreqResponseData spectra(const Eigen::VectorXcd& r, const Eigen::VectorXcd& y) {
  FreqResponseData f;
  f.omegas = bin_frequencies();
  f.r_dft = r;
  f.y_dft = y;
  f.H = y.cwiseQuotient(r);
  f.valid = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(r.size(), true);
  return f;
}

Eigen::VectorXcd random_phasors(double rho, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ph(-std::numbers::pi, std::numbers::pi);
  Eigen::VectorXcd v(30);
  for (auto& x : v) x = std::polar(rho, ph(rng));
  return v;
}

// z^2 / (z^2 + a1 z + a2): its inverse is the FIR 1 + a1 z^-1 + a2 z^-2.
DiscreteTF fir_invertible_plant() { return DiscreteTF(Coeffs{{1.0, 0.0, 0.0}}, Coeffs{{1.0, -1.2, 0.5}}, Ts); }

ControllerModel ff_only(const Eigen::Vector3d& b, int tau_ff) {
  return ControllerModel::with_fir(b, tau_ff, DiscreteTF::zero(Ts), 0);
}

// Composite Simpson on 4001 nodes, integrand evaluated by hand-written Horner.
double simpson_inverse_plant_mean(const DiscreteTF& g) {
  auto horner = [](const Coeffs& c, cd z) {
    cd acc = 0.0;
    for (Eigen::Index i = 0; i < c.size(); ++i) acc = acc * z + c[i];
    return acc;
  };
  const int m = 4000;
  const double h = std::numbers::pi / m;
  double acc = 0.0;
  for (int i = 0; i <= m; ++i) {
    const cd z = std::polar(1.0, i * h * Ts);
    const double f = std::abs(horner(g.den(), z) / horner(g.num(), z));
    acc += f * (i == 0 || i == m ? 1.0 : (i % 2 ? 4.0 : 2.0));
  }
  return acc * h / 3.0 / std::numbers::pi;
}

}  // namespace

TEST_CASE("time-averaged error") {
  Eigen::VectorXd r = Eigen::VectorXd::LinSpaced(100, -1.0, 1.0);
  CHECK(time_avg_error(r, r) == 0.0);
  CHECK(time_avg_error(r, (r.array() - 0.5).matrix()) == 0.5);
  CHECK(time_avg_error(r, Eigen::VectorXd::Zero(100)) == r.cwiseAbs().mean());
  CHECK_THROWS_AS(time_avg_error(r, Eigen::VectorXd::Zero(99)), std::invalid_argument);
}

TEST_CASE("no-control error over random commands") {
  double acc = 0.0;
  const int seeds = 40;
  for (int s = 1; s <= seeds; ++s) acc += time_avg_error(sample(generate_reference(s), Ts, 3000), Eigen::VectorXd::Zero(3000));
  const double avg = acc / seeds;
  CHECK(avg > 0.85);
  CHECK(avg < 1.05);
}

TEST_CASE("frequency-averaged magnitude and phase errors") {
  const double rho = 45.0;
  const auto r = random_phasors(rho, 1);

  const auto exact = freq_errors(spectra(r, r));
  CHECK(exact.Em == 0.0);
  CHECK(exact.Ep == 0.0);

  const auto doubled = freq_errors(spectra(r, 2.0 * r));
  CHECK(doubled.Em == doctest::Approx(rho).epsilon(1e-14));
  CHECK(doubled.Ep < 1e-12 * rho);

  const auto flipped = freq_errors(spectra(r, -r));
  CHECK(flipped.Em < 1e-12 * rho);
  CHECK(flipped.Ep == doctest::Approx(2.0 * rho).epsilon(1e-14));

  Eigen::VectorXcd y = r;
  y[3] = 0.0;
  const auto hole = freq_errors(spectra(r, y));
  CHECK(hole.skipped == 1);
  CHECK(hole.Em == doctest::Approx(rho / 30.0).epsilon(1e-14));
  CHECK(hole.Ep < 1e-12);
}

TEST_CASE("reduced and unreduced phase errors agree") {
  for (unsigned s = 0; s < 20; ++s) {
    std::mt19937_64 rng(s);
    std::uniform_real_distribution<double> mag(0.1, 100.0);
    Eigen::VectorXcd r = random_phasors(1.0, 100 + s);
    Eigen::VectorXcd y = random_phasors(1.0, 200 + s);
    for (int i = 0; i < 30; ++i) {
      r[i] *= mag(rng);
      y[i] *= mag(rng);
    }
    const auto f = spectra(r, y);
    const double reduced = freq_errors(f).Ep;
    CHECK(std::abs(reduced - phase_error_unreduced(f)) <= 1e-13 * reduced);
  }
}

TEST_CASE("ff_gap fixtures") {
  const auto g = fir_invertible_plant();
  const auto matched = ff_only({1.0, -1.2, 0.5}, 0);
  CHECK(ff_gap(matched, g) < 1e-12);
  CHECK(ff_gap(ff_only({1.0, -1.2, 0.5}, 25), g) > ff_gap(matched, g) + 0.1);

  const auto plant = testing::plant_d();
  const auto zero = ControllerModel::zero(Ts);
  const double inv = ff_gap(zero, plant);
  CHECK(inv == doctest::Approx(simpson_inverse_plant_mean(plant)).epsilon(1e-6));

  // larger delay mismatch costs more on the real plant too
  const Eigen::Vector3d b = fit_inverse_fir(plant);
  double prev = ff_gap(ff_only(b, 0), plant);
  for (int tau : {5, 10, 25}) {
    const double gap = ff_gap(ff_only(b, tau), plant);
    CHECK(gap > prev);
    prev = gap;
  }
}

TEST_CASE("fb_norm fixtures") {
  CHECK(fb_norm(ControllerModel::zero(Ts)) == 0.0);
  FeedbackLag lag{1.0, 0.9, {0.7, 0.0}, {0.3, 0.0}};
  const auto at = [&](double kappa, int tau) {
    lag.kappa = kappa;
    return fb_norm(ControllerModel::with_fir({0, 0, 0}, 0, lag.tf(Ts), tau));
  };
  const double base = at(1.0, 10);
  CHECK(at(2.5, 10) == doctest::Approx(2.5 * base).epsilon(1e-14));
  CHECK(at(1.0, 0) == doctest::Approx(base).epsilon(1e-14));
  CHECK(at(1.0, 25) == doctest::Approx(base).epsilon(1e-14));
}

TEST_CASE("magnitude and phase errors of the inverted loop") {
  const auto g = fir_invertible_plant();
  const auto perfect = ff_mag_phase_errors(ff_only({1.0, -1.2, 0.5}, 0), g);
  CHECK(perfect.Me < 1e-12);
  CHECK(perfect.Pe < 1e-12);

  const auto unity = DiscreteTF::unity(Ts);
  const double delta = 0.37;
  const auto gain = ff_mag_phase_errors(ff_only({1.0 + delta, 0, 0}, 0), unity);
  CHECK(gain.Me == doctest::Approx(delta).epsilon(1e-14));
  CHECK(gain.Pe < 1e-15);

  const auto flip = ff_mag_phase_errors(ff_only({-1.0, 0, 0}, 0), unity);
  CHECK(flip.Me < 1e-15);
  CHECK(flip.Pe == doctest::Approx(2.0).epsilon(1e-14));

  // zero feedforward: magnitude error 1, no phase error (arg 0 convention)
  const auto none = ff_mag_phase_errors(ControllerModel::zero(Ts), testing::plant_d());
  CHECK(none.Me == doctest::Approx(1.0));
  CHECK(none.Pe < 1e-15);
}

TEST_CASE("variance accounted for") {
  Eigen::VectorXd y(100);
  for (int k = 0; k < 100; ++k) y[k] = std::sin(0.3 * k) + 0.2;
  CHECK(vaf(y, y) == 1.0);
  CHECK(vaf(y, Eigen::VectorXd::Zero(100)) == 0.0);

  // perturbation with relative energy eps^2 over the window
  Eigen::VectorXd d(100);
  for (int k = 0; k < 100; ++k) d[k] = std::cos(1.1 * k);
  const double eps = 1e-2;
  const Eigen::Index w = 100 - 25;
  d *= eps * y.tail(w).norm() / d.tail(w).norm();
  CHECK(vaf(y, y + d) == doctest::Approx(1.0 - eps * eps).epsilon(1e-12));

  // samples before n1 never count
  Eigen::VectorXd yv = y;
  yv.head(25).setConstant(1e6);
  CHECK(vaf(y, yv) == 1.0);
  CHECK(vaf(y, yv, 25) < 0.0);
  CHECK_THROWS_AS(vaf(Eigen::VectorXd::Zero(100), y), DataError);
  CHECK_THROWS_AS(vaf(y, Eigen::VectorXd::Zero(99)), std::invalid_argument);
  CHECK_THROWS_AS(vaf(Eigen::VectorXd::Ones(20), Eigen::VectorXd::Ones(20)), std::invalid_argument);
}

TEST_CASE("quadrature grid convergence") {
  const auto g = testing::plant_d();
  const Quadrature q;
  CHECK(q.nodes == 2048);
  CHECK(q.upper == std::numbers::pi);
  for (double quality : {0.0, 0.5, 1.0}) {
    for (double preview : {0.0, 1.0}) {
      const auto c = synthetic_subject(g, preview, 0.3, quality);
      const auto a = model_quality(c, g, q);
      const auto b = model_quality(c, g, q.refined());
      CHECK(std::abs(a.ff_gap - b.ff_gap) <= 1e-6 * a.ff_gap);
      CHECK(std::abs(a.fb_norm - b.fb_norm) <= 1e-6 * a.fb_norm);
      CHECK(std::abs(a.Me - b.Me) <= 1e-6 * std::max(a.Me, 1e-12));
      CHECK(std::abs(a.Pe - b.Pe) <= 1e-6 * std::max(a.Pe, 1e-12));
    }
  }
}

TEST_CASE("model quality delays and representation invariance") {
  const auto g = testing::plant_d();
  const auto c = synthetic_subject(g, 0.0, 0.3, 0.5);
  const auto m = model_quality(c, g);
  CHECK(m.T_ff == doctest::Approx(300.0));
  CHECK(m.T_fb == doctest::Approx(300.0));

  // same feedback written with scaled coefficients
  DiscreteTF scaled(3.0 * c.gfb.num(), 3.0 * c.gfb.den(), Ts);
  const ControllerModel c2(c.gff, c.tau_ff, scaled, c.tau_fb);
  const auto m2 = model_quality(c2, g);
  CHECK(m2.fb_norm == m.fb_norm);
  CHECK(m2.ff_gap == m.ff_gap);
}

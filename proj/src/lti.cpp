#include "hitl/lti.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <unsupported/Eigen/MatrixFunctions>

#include "hitl/error.hpp"

namespace hitl {
namespace {

using MatL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using VecL = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

void normalize(Coeffs& num, Coeffs& den, const char* what) {
  den = trim_leading(den);
  if (den.size() == 1 && den[0] == 0.0) {
    throw std::invalid_argument(std::string(what) + ": zero denominator");
  }
  num = trim_leading(num);
  if (num.size() > den.size()) {
    throw std::invalid_argument(std::string(what) + ": improper (deg num > deg den)");
  }
  const double lead = den[0];
  den /= lead;
  num /= lead;
}

bool same(const Coeffs& a, const Coeffs& b) {
  return a.size() == b.size() && (a.array() == b.array()).all();
}

// Faddeev-LeVerrier: coefficients of det(zI - A), descending, monic.
VecL charpoly(const MatL& A) {
  const Eigen::Index n = A.rows();
  VecL c(n + 1);
  c[0] = 1.0L;
  MatL M = MatL::Zero(n, n);
  const MatL I = MatL::Identity(n, n);
  for (Eigen::Index k = 1; k <= n; ++k) {
    M = A * M + c[k - 1] * I;
    c[k] = -(A * M).trace() / static_cast<long double>(k);
  }
  return c;
}

}  // namespace

ContinuousTF::ContinuousTF(Coeffs num, Coeffs den) : num_(std::move(num)), den_(std::move(den)) {
  normalize(num_, den_, "ContinuousTF");
}

bool ContinuousTF::strictly_proper() const {
  return num_.size() < den_.size() || (num_.size() == 1 && num_[0] == 0.0);
}

std::complex<double> ContinuousTF::operator()(std::complex<double> s) const {
  return polyval(num_, s) / polyval(den_, s);
}

DiscreteTF::DiscreteTF(Coeffs num, Coeffs den, double Ts)
    : num_(std::move(num)), den_(std::move(den)), Ts_(Ts) {
  if (!(Ts_ > 0.0)) throw std::invalid_argument("DiscreteTF: Ts must be positive");
  normalize(num_, den_, "DiscreteTF");
}

DiscreteTF DiscreteTF::gain(double k, double Ts) {
  return DiscreteTF(Coeffs::Constant(1, k), Coeffs::Ones(1), Ts);
}

bool DiscreteTF::strictly_proper() const {
  return num_.size() < den_.size() || is_zero();
}

std::complex<double> DiscreteTF::operator()(std::complex<double> z) const {
  return polyval(num_, z) / polyval(den_, z);
}

bool operator==(const DiscreteTF& a, const DiscreteTF& b) {
  return a.Ts_ == b.Ts_ && same(a.num_, b.num_) && same(a.den_, b.den_);
}

DelayedTF::DelayedTF(DiscreteTF t, int d) : tf(std::move(t)), delay(d) {
  if (delay < 0) throw std::invalid_argument("DelayedTF: negative delay");
}

DiscreteTF zoh_discretize(const ContinuousTF& g, double Ts) {
  if (!(Ts > 0.0)) throw std::invalid_argument("zoh_discretize: Ts must be positive");
  const Eigen::Index n = g.order();
  if (n == 0) return DiscreteTF(g.num(), g.den(), Ts);

  const Coeffs& a = g.den();
  const Coeffs b = pad_to(g.num(), n + 1);

  // Controllable canonical form: first row of A holds -a, B = e1.
  MatL M = MatL::Zero(n + 1, n + 1);
  for (Eigen::Index j = 0; j < n; ++j) M(0, j) = -static_cast<long double>(a[j + 1]);
  for (Eigen::Index i = 1; i < n; ++i) M(i, i - 1) = 1.0L;
  M(0, n) = 1.0L;
  MatL C(1, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    C(0, j) = static_cast<long double>(b[j + 1]) - static_cast<long double>(a[j + 1]) * b[0];
  }
  const long double D = b[0];

  const MatL E = (M * static_cast<long double>(Ts)).exp();
  const MatL Ad = E.topLeftCorner(n, n);
  const MatL Bd = E.topRightCorner(n, 1);

  // C (zI - Ad)^{-1} Bd = [det(zI - Ad + Bd C) - det(zI - Ad)] / det(zI - Ad)
  const VecL den = charpoly(Ad);
  const VecL closed = charpoly(Ad - Bd * C);
  VecL num = closed - den + D * den;
  num[0] = D;  // the monic z^n terms cancel exactly

  DiscreteTF out(num.cast<double>(), den.cast<double>(), Ts);

  const auto discrete_poles = out.poles();
  for (const auto& p : g.poles()) {
    const std::complex<double> target = std::exp(p * Ts);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : discrete_poles) best = std::min(best, std::abs(q - target));
    if (best > 1e-4) {
      throw NumericalError("zoh_discretize: continuous pole did not map to exp(p Ts); "
                           "eigenstructure too defective for the requested sample time");
    }
  }
  return out;
}

std::complex<double> freq_response(const DiscreteTF& tf, int delay, double omega) {
  const double theta = omega * tf.Ts();
  if (theta < -1e-12 || theta > std::numbers::pi + 1e-12) {
    throw std::invalid_argument("freq_response: omega*Ts outside [0, pi]");
  }
  const std::complex<double> z = std::polar(1.0, theta);
  const std::complex<double> d = polyval(tf.den(), z);
  if (std::abs(d) <= 1e-13 * tf.den().cwiseAbs().sum()) {
    throw NumericalError("freq_response: evaluation at a pole on the unit circle");
  }
  const std::complex<double> shift = std::polar(1.0, -theta * delay);
  return shift * (polyval(tf.num(), z) / d);
}

std::complex<double> freq_response(const DelayedTF& dtf, double omega) {
  return freq_response(dtf.tf, dtf.delay, omega);
}

DifferenceFilter::DifferenceFilter(const DiscreteTF& tf, int delay)
    : b_(tf.padded_num()), a_(tf.den()), state_(Eigen::VectorXd::Zero(tf.order())),
      line_(static_cast<std::size_t>(std::max(delay, 0)), 0.0), delay_(delay) {
  if (delay < 0) throw std::invalid_argument("DifferenceFilter: negative delay");
}

double DifferenceFilter::peek() const {
  const double s0 = state_.size() > 0 ? state_[0] : 0.0;
  if (delay_ > 0) return b_[0] * line_[head_] + s0;
  return s0;
}

double DifferenceFilter::step(double x) {
  if (delay_ > 0) {
    const double delayed = line_[head_];
    line_[head_] = x;
    head_ = (head_ + 1) % line_.size();
    x = delayed;
  }
  const Eigen::Index n = state_.size();
  const double y = b_[0] * x + (n > 0 ? state_[0] : 0.0);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    state_[i] = state_[i + 1] + b_[i + 1] * x - a_[i + 1] * y;
  }
  if (n > 0) state_[n - 1] = b_[n] * x - a_[n] * y;
  return y;
}

void DifferenceFilter::reset() {
  state_.setZero();
  std::fill(line_.begin(), line_.end(), 0.0);
  head_ = 0;
}

Simulation simulate(const DiscreteTF& tf, int delay, const Eigen::VectorXd& input) {
  DifferenceFilter filter(tf, delay);
  Simulation sim;
  sim.output.resize(input.size());
  for (Eigen::Index k = 0; k < input.size(); ++k) sim.output[k] = filter.step(input[k]);
  sim.unstable = tf.order() > 0 && spectral_radius(tf.den()) >= 1.0;
  return sim;
}

}  // namespace hitl

#pragma once

#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "hitl/polynomial.hpp"

namespace hitl {

/// Rational continuous-time transfer function num(s)/den(s), descending powers.
/// Stored normalized: den monic, num without leading zeros.
class ContinuousTF {
 public:
  ContinuousTF(Coeffs num, Coeffs den);

  const Coeffs& num() const { return num_; }
  const Coeffs& den() const { return den_; }
  int order() const { return static_cast<int>(den_.size()) - 1; }
  bool strictly_proper() const;

  std::complex<double> operator()(std::complex<double> s) const;
  std::vector<std::complex<double>> poles() const { return roots(den_); }

 private:
  Coeffs num_;
  Coeffs den_;
};

/// Rational discrete-time transfer function num(z)/den(z) with sample time Ts.
/// Same normalization as ContinuousTF, so equal systems compare equal.
class DiscreteTF {
 public:
  DiscreteTF(Coeffs num, Coeffs den, double Ts);

  static DiscreteTF gain(double k, double Ts);
  static DiscreteTF zero(double Ts) { return gain(0.0, Ts); }
  static DiscreteTF unity(double Ts) { return gain(1.0, Ts); }

  const Coeffs& num() const { return num_; }
  const Coeffs& den() const { return den_; }
  double Ts() const { return Ts_; }
  int order() const { return static_cast<int>(den_.size()) - 1; }
  bool strictly_proper() const;
  bool is_zero() const { return num_.size() == 1 && num_[0] == 0.0; }

  /// Numerator left-padded to den's length, i.e. coefficients of z^{-1}.
  Coeffs padded_num() const { return pad_to(num_, den_.size()); }

  std::complex<double> operator()(std::complex<double> z) const;
  std::vector<std::complex<double>> poles() const { return roots(den_); }
  std::vector<std::complex<double>> zeros() const { return roots(num_); }

  friend bool operator==(const DiscreteTF& a, const DiscreteTF& b);

 private:
  Coeffs num_;
  Coeffs den_;
  double Ts_;
};

/// z^{-delay} tf(z).
struct DelayedTF {
  DiscreteTF tf;
  int delay = 0;

  DelayedTF(DiscreteTF t, int d);
};

/// Exact zero-order-hold equivalent of g at sample time Ts.
///
/// Computed from a controllable-canonical realization and the block matrix
/// exponential exp([[A, B], [0, 0]] Ts) in extended precision, so continuous
/// poles p land on exp(p Ts) and DC gain is preserved.
/// Throws std::invalid_argument for improper g or Ts <= 0, NumericalError if a
/// continuous pole fails to map.
DiscreteTF zoh_discretize(const ContinuousTF& g, double Ts);

/// e^{-j omega Ts delay} tf(e^{j omega Ts}), with omega in rad/s.
/// Requires omega Ts in [0, pi]; throws NumericalError on a unit-circle pole.
std::complex<double> freq_response(const DiscreteTF& tf, int delay, double omega);
std::complex<double> freq_response(const DelayedTF& dtf, double omega);

/// Direct-form-II-transposed realization of z^{-delay} tf(z) with zero state.
class DifferenceFilter {
 public:
  explicit DifferenceFilter(const DiscreteTF& tf, int delay = 0);

  /// Output at the current sample excluding the current input's direct term.
  /// Equals the next step() result whenever has_feedthrough() is false.
  double peek() const;
  double step(double x);
  bool has_feedthrough() const { return delay_ == 0 && b_[0] != 0.0; }
  void reset();

 private:
  Eigen::VectorXd b_;
  Eigen::VectorXd a_;
  Eigen::VectorXd state_;
  std::vector<double> line_;
  std::size_t head_ = 0;
  int delay_ = 0;
};

struct Simulation {
  Eigen::VectorXd output;
  bool unstable = false;  // tf has a pole on or outside the unit circle
};

/// Zero-initial-condition response of z^{-delay} tf(z) to input.
Simulation simulate(const DiscreteTF& tf, int delay, const Eigen::VectorXd& input);

}  // namespace hitl

#pragma once

#include <complex>
#include <vector>

#include <Eigen/Dense>

namespace hitl {

/// Polynomial coefficients in descending powers of the variable.
using Coeffs = Eigen::VectorXd;

namespace detail {
template <typename T>
struct Wide {
  using type = long double;
};
template <typename T>
struct Wide<std::complex<T>> {
  using type = std::complex<long double>;
};
}  // namespace detail

/// Horner evaluation of a descending-power polynomial at x (real or complex).
///
/// Accumulates in extended precision. Discretized plants have all poles and
/// zeros clustered near z = 1, so their coefficient sums cancel to ~1e-5 of
/// the coefficient magnitudes and plain double Horner loses ~1e-11 relative.
template <typename Derived, typename Scalar>
Scalar polyval(const Eigen::DenseBase<Derived>& c, Scalar x) {
  using W = typename detail::Wide<Scalar>::type;
  W acc{0};
  const W xw = static_cast<W>(x);
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    acc = acc * xw + W(static_cast<long double>(c[i]));
  }
  return static_cast<Scalar>(acc);
}

/// Drops leading (highest-power) zeros; the zero polynomial becomes [0].
Coeffs trim_leading(const Coeffs& c, double tol = 0.0);

/// Polynomial degree after trimming exact leading zeros; -1 for the zero polynomial.
int degree(const Coeffs& c);

Coeffs polymul(const Coeffs& a, const Coeffs& b);

/// Sum aligned at the constant term.
Coeffs polyadd(const Coeffs& a, const Coeffs& b);

/// Multiplies by z^k (appends k trailing zeros).
Coeffs shift_up(const Coeffs& c, int k);

/// Left-pads with zeros to the requested length.
Coeffs pad_to(const Coeffs& c, Eigen::Index length);

/// Monic polynomial with the given roots (complex roots should come in pairs).
Coeffs poly_from_roots(const std::vector<std::complex<double>>& roots);

/// Roots as eigenvalues of the companion matrix.
std::vector<std::complex<double>> roots(const Coeffs& c);

/// Largest root modulus; 0 for constant polynomials.
double spectral_radius(const Coeffs& c);

/// True iff every root satisfies |z| < 1 (strict).
bool is_stable(const Coeffs& den);

}  // namespace hitl

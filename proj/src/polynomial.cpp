#include "hitl/polynomial.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace hitl {

Coeffs trim_leading(const Coeffs& c, double tol) {
  Eigen::Index first = 0;
  while (first < c.size() && std::abs(c[first]) <= tol) ++first;
  if (first == c.size()) return Coeffs::Zero(1);
  return c.tail(c.size() - first);
}

int degree(const Coeffs& c) {
  const Coeffs t = trim_leading(c);
  if (t.size() == 1 && t[0] == 0.0) return -1;
  return static_cast<int>(t.size()) - 1;
}

Coeffs polymul(const Coeffs& a, const Coeffs& b) {
  if (a.size() == 0 || b.size() == 0) return Coeffs::Zero(1);
  Coeffs out = Coeffs::Zero(a.size() + b.size() - 1);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    for (Eigen::Index j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  }
  return out;
}

Coeffs polyadd(const Coeffs& a, const Coeffs& b) {
  const Eigen::Index n = std::max(a.size(), b.size());
  return pad_to(a, n) + pad_to(b, n);
}

Coeffs shift_up(const Coeffs& c, int k) {
  if (k < 0) throw std::invalid_argument("shift_up: negative shift");
  Coeffs out = Coeffs::Zero(c.size() + k);
  out.head(c.size()) = c;
  return out;
}

Coeffs pad_to(const Coeffs& c, Eigen::Index length) {
  if (c.size() >= length) return c;
  Coeffs out = Coeffs::Zero(length);
  out.tail(c.size()) = c;
  return out;
}

Coeffs poly_from_roots(const std::vector<std::complex<double>>& rts) {
  Eigen::VectorXcd p = Eigen::VectorXcd::Ones(1);
  for (const auto& r : rts) {
    Eigen::VectorXcd next = Eigen::VectorXcd::Zero(p.size() + 1);
    next.head(p.size()) += p;
    next.tail(p.size()) -= r * p;
    p = next;
  }
  return p.real();
}

std::vector<std::complex<double>> roots(const Coeffs& c) {
  const Coeffs p = trim_leading(c);
  const Eigen::Index n = p.size() - 1;
  if (n <= 0) return {};
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(n, n);
  companion.row(0) = -p.tail(n).transpose() / p[0];
  if (n > 1) companion.diagonal(-1).setOnes();
  Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("roots: companion eigenvalue iteration failed");
  }
  const Eigen::VectorXcd ev = solver.eigenvalues();
  return {ev.data(), ev.data() + ev.size()};
}

double spectral_radius(const Coeffs& c) {
  double rho = 0.0;
  for (const auto& r : roots(c)) rho = std::max(rho, std::abs(r));
  return rho;
}

bool is_stable(const Coeffs& den) {
  if (degree(den) < 0) throw std::invalid_argument("is_stable: zero polynomial");
  return spectral_radius(den) < 1.0;
}

}  // namespace hitl

#include "hitl/spectra.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "hitl/error.hpp"

namespace hitl {

Eigen::VectorXd bin_frequencies(int bins, double window) {
  Eigen::VectorXd w(bins);
  for (int i = 0; i < bins; ++i) w[i] = 2.0 * std::numbers::pi * (i + 1) / window;
  return w;
}

Eigen::VectorXcd dft_bins(const Eigen::VectorXd& x, double Ts, int bins) {
  const long n = static_cast<long>(x.size());
  if (n == 0 || std::abs(n * Ts - kWindowSeconds) > 1e-9 * kWindowSeconds) {
    throw std::invalid_argument("dft_bins: record length times Ts must equal the 60-s window");
  }
  // omega_i (k-1) Ts = 2 pi i (k-1) / n exactly; reduce the index mod n first.
  Eigen::VectorXcd X(bins);
  for (int i = 1; i <= bins; ++i) X[i - 1] = dft_index(x, i);
  return X;
}

std::complex<double> dft_index(const Eigen::VectorXd& x, long m) {
  const long n = static_cast<long>(x.size());
  if (n == 0) return {0.0, 0.0};
  const long step = ((m % n) + n) % n;
  long idx = 0;
  double re = 0.0;
  double im = 0.0;
  for (long k = 0; k < n; ++k) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(idx) / static_cast<double>(n);
    re += x[k] * std::cos(angle);
    im -= x[k] * std::sin(angle);
    idx += step;
    if (idx >= n) idx -= n;
  }
  return {re, im};
}

FreqResponseData frequency_response_data(const Eigen::VectorXd& r, const Eigen::VectorXd& y,
                                         double Ts) {
  if (r.size() != y.size()) throw std::invalid_argument("frequency_response_data: length mismatch");
  FreqResponseData frd;
  frd.omegas = bin_frequencies();
  frd.r_dft = dft_bins(r, Ts);
  frd.y_dft = dft_bins(y, Ts);
  frd.H.resize(kBins);
  frd.valid.resize(kBins);
  const double threshold = 1e-9 * frd.r_dft.cwiseAbs().maxCoeff();
  for (int i = 0; i < kBins; ++i) {
    frd.valid[i] = std::abs(frd.r_dft[i]) >= threshold && std::abs(frd.r_dft[i]) > 0.0;
    frd.H[i] = frd.valid[i] ? frd.y_dft[i] / frd.r_dft[i]
                            : std::complex<double>(std::numeric_limits<double>::quiet_NaN(),
                                                   std::numeric_limits<double>::quiet_NaN());
  }
  if (frd.valid_count() == 0) throw DataError("frequency_response_data: no valid bins");
  return frd;
}

FreqResponseData closed_loop_response(const TrialRecord& trial) {
  return frequency_response_data(trial.r, trial.y, trial.Ts);
}

std::string to_csv(const FreqResponseData& frd) {
  std::ostringstream out;
  out << "i,omega,re_r_dft,im_r_dft,re_y_dft,im_y_dft,re_H,im_H\n";
  char buf[512];
  for (Eigen::Index i = 0; i < frd.omegas.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long>(i + 1), frd.omegas[i], frd.r_dft[i].real(), frd.r_dft[i].imag(),
                  frd.y_dft[i].real(), frd.y_dft[i].imag(), frd.H[i].real(), frd.H[i].imag());
    out << buf;
  }
  return out.str();
}

}  // namespace hitl

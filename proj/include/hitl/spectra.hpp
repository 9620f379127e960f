#pragma once

#include <string>

#include <Eigen/Dense>

#include "hitl/loop_sim.hpp"

namespace hitl {

inline constexpr int kBins = 30;
inline constexpr double kWindowSeconds = 60.0;

/// Closed-loop frequency-response data on the command's bins omega_i = 2 pi i / 60.
struct FreqResponseData {
  Eigen::VectorXd omegas;
  Eigen::VectorXcd r_dft;
  Eigen::VectorXcd y_dft;
  Eigen::VectorXcd H;  // y_dft / r_dft on valid bins, NaN elsewhere
  Eigen::Array<bool, Eigen::Dynamic, 1> valid;

  int valid_count() const { return static_cast<int>(valid.count()); }
};

/// omega_i = 2 pi i / window for i = 1..bins.
Eigen::VectorXd bin_frequencies(int bins = kBins, double window = kWindowSeconds);

/// X(omega_i) = sum_{k=1}^{n} x_k exp(-j omega_i (k-1) Ts), unnormalized.
/// Requires n Ts equal to the 60-s window (throws std::invalid_argument otherwise).
Eigen::VectorXcd dft_bins(const Eigen::VectorXd& x, double Ts, int bins = kBins);

/// Plain DFT coefficient X_m = sum_k x_k exp(-2 pi j m k / n) at any index m.
std::complex<double> dft_index(const Eigen::VectorXd& x, long m);

/// H = y_dft / r_dft; bins with |r_dft| < 1e-9 max|r_dft| are marked invalid.
/// Throws DataError when every bin is invalid.
FreqResponseData frequency_response_data(const Eigen::VectorXd& r, const Eigen::VectorXd& y,
                                         double Ts);
FreqResponseData closed_loop_response(const TrialRecord& trial);

/// Columns: i, omega, Re r_dft, Im r_dft, Re y_dft, Im y_dft, Re H, Im H.
std::string to_csv(const FreqResponseData& frd);

}  // namespace hitl

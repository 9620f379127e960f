#include "hitl/refgen.hpp"

#include <cmath>
#include <complex>
#include <random>
#include <stdexcept>

#include "hitl/error.hpp"
#include "json.hpp"

namespace hitl {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Peak of |c| over the grid, stopping as soon as it reaches stop_at.
// Phasors advance by complex rotation and are resynchronized from the closed
// form every 256 steps, which keeps drift far below the 1e-6 margin.
double peak_scan(const ReferenceCommand& cmd, double step, double stop_at) {
  const long steps = std::lround(cmd.duration / step);
  std::array<std::complex<double>, kComponents> z{};
  std::array<std::complex<double>, kComponents> rot{};
  for (int j = 0; j < kComponents; ++j) {
    rot[j] = std::polar(1.0, cmd.spacing * (j + 1) * step);
  }
  double peak = 0.0;
  for (long k = 0; k <= steps; ++k) {
    if (k % 256 == 0) {
      const double t = static_cast<double>(k) * step;
      for (int j = 0; j < kComponents; ++j) {
        z[j] = std::polar(cmd.amplitude, cmd.spacing * (j + 1) * t + cmd.phases[j]);
      }
    }
    double c = 0.0;
    for (int j = 0; j < kComponents; ++j) {
      c += z[j].real();
      z[j] *= rot[j];
    }
    peak = std::max(peak, std::abs(c));
    if (peak >= stop_at) break;
  }
  return peak;
}

}  // namespace

double ReferenceCommand::operator()(double t) const {
  double c = 0.0;
  for (int j = 0; j < kComponents; ++j) c += std::cos(spacing * (j + 1) * t + phases[j]);
  return amplitude * c;
}

ReferenceCommand generate_reference(std::uint64_t seed, const RefgenOptions& opts) {
  std::mt19937_64 rng(seed);
  ReferenceCommand cmd;
  cmd.seed = seed;
  const double limit = opts.peak_bound - opts.peak_margin;
  for (int round = 0; round < opts.max_rounds; ++round) {
    double partial = 0.0;
    for (int j = 0; j < kComponents - 1; ++j) {
      cmd.phases[j] = kTwoPi * uniform01(rng);
      partial += std::cos(cmd.phases[j]);
    }
    const bool upper = uniform01(rng) < 0.5;
    if (std::abs(partial) > 1.0) continue;
    const double base = std::acos(-partial);
    double last = upper ? base : kTwoPi - base;
    if (last >= kTwoPi) last = 0.0;
    cmd.phases[kComponents - 1] = last;
    // The 20x coarser grid is a subset of the fine one, so it can only reject early.
    if (peak_scan(cmd, 20.0 * opts.scan_step, limit) >= limit) continue;
    if (peak_scan(cmd, opts.scan_step, limit) < limit) return cmd;
  }
  throw NumericalError("generate_reference: no phase vector satisfied the zero-start and peak "
                       "constraints for seed " + std::to_string(seed));
}

double scan_peak(const ReferenceCommand& cmd, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("scan_peak: step must be positive");
  return peak_scan(cmd, step, std::numeric_limits<double>::infinity());
}

Eigen::VectorXd sample(const ReferenceCommand& cmd, double Ts, int n) {
  if (!(Ts > 0.0) || n < 0) throw std::invalid_argument("sample: need Ts > 0 and n >= 0");
  if (n * Ts > cmd.duration * (1.0 + 1e-12)) {
    throw std::invalid_argument("sample: n*Ts exceeds the command duration");
  }
  Eigen::VectorXd r(n);
  for (int k = 0; k < n; ++k) r[k] = cmd(static_cast<double>(k) * Ts);
  return r;
}

PreviewWindow preview_window(const ReferenceCommand& cmd, double t, double horizon,
                             double resolution) {
  if (!(resolution > 0.0) || horizon < 0.0 || t < 0.0) {
    throw std::invalid_argument("preview_window: need t >= 0, horizon >= 0, resolution > 0");
  }
  PreviewWindow w;
  double end = t + horizon;
  if (end > cmd.duration * (1.0 + 1e-12)) {
    end = cmd.duration;
    w.truncated = true;
  }
  const double span = std::max(0.0, end - t);
  const long count = static_cast<long>(std::floor(span / resolution + 1e-9)) + 1;
  const double m = std::round(t / resolution);
  const bool aligned = std::abs(t / resolution - m) < 1e-9;
  w.times.resize(count);
  w.values.resize(count);
  for (long i = 0; i < count; ++i) {
    const double ti = aligned ? (m + static_cast<double>(i)) * resolution
                              : t + static_cast<double>(i) * resolution;
    w.times[i] = ti;
    w.values[i] = cmd(ti);
  }
  return w;
}

std::string to_json(const ReferenceCommand& cmd) {
  nlohmann::json j;
  j["seed"] = cmd.seed;
  j["phases"] = cmd.phases;
  j["amplitude"] = cmd.amplitude;
  j["duration"] = cmd.duration;
  j["spacing"] = cmd.spacing;
  return j.dump(2) + "\n";
}

ReferenceCommand reference_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ReferenceCommand cmd;
    cmd.seed = j.at("seed").get<std::uint64_t>();
    const auto phases = j.at("phases").get<std::vector<double>>();
    if (phases.size() != kComponents) throw DataError("reference JSON: expected 30 phases");
    std::copy(phases.begin(), phases.end(), cmd.phases.begin());
    cmd.amplitude = j.at("amplitude").get<double>();
    cmd.duration = j.at("duration").get<double>();
    cmd.spacing = j.at("spacing").get<double>();
    return cmd;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("reference JSON: ") + e.what());
  }
}

}  // namespace hitl

#pragma once

#include <filesystem>
#include <string>

#include "hitl/loop_sim.hpp"

namespace hitl {

/// Columns k, t, r, u, y with k 1-based and t = (k - 1) Ts; values at 17
/// significant digits so that reading back is bit-exact.
std::string trial_csv(const TrialRecord& rec);
/// Sidecar {subject_id, group, preview_s, trial_index, Ts, n, divergent,
/// reference_seed, settle_periods, gap_count, input_gain}.
std::string trial_sidecar(const TrialRecord& rec);

/// Parses a CSV/sidecar pair. Throws DataError on any inconsistency
/// (bad numbers, column count, length mismatch with the sidecar, divergence
/// flag that contradicts y under `bound`).
TrialRecord parse_trial(const std::string& csv, const std::string& sidecar, double bound = 4.4);

/// Writes `<stem>.csv` and `<stem>.json` via temporary files and renames.
void write_trial(const std::filesystem::path& stem, const TrialRecord& rec);
TrialRecord read_trial(const std::filesystem::path& stem, double bound = 4.4);

std::string read_text(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames over the target.
void write_text(const std::filesystem::path& path, const std::string& text);

/// "%.17g".
std::string format_double(double v);

}  // namespace hitl

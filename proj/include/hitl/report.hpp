#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hitl/config.hpp"
#include "hitl/pipeline.hpp"

namespace hitl {

/// Relative path -> file contents.
struct ReportBundle {
  std::map<std::string, std::string> files;
};

/// Metrics aggregated in tables/<name>.csv and plots/<name>_per_trial.json.
const std::vector<std::string>& report_metrics();

/// Builds the bundle:
///   tables/divergent.csv, tables/<metric>.csv, tables/metrics.csv,
///   plots/<metric>_per_trial.json, plots/median_traces.json,
///   plots/bode_feedforward.json (z^{-tau_ff} Gff against 1/G),
///   plots/bode_feedforward_nodelay.json (Gff alone), stats.json, index.json.
/// Records without a model contribute performance metrics only.
ReportBundle build_report(const std::vector<TrialRecord>& records,
                          const std::map<TrialKey, IdentifiedModel>& models, const AppConfig& cfg);

/// Per-trial metrics for every record (the model looked up by key).
std::vector<TrialMetrics> collect_metrics(const std::vector<TrialRecord>& records,
                                          const std::map<TrialKey, IdentifiedModel>& models,
                                          const DiscreteTF& plant_d, const Quadrature& q);

void write_bundle(const ReportBundle& bundle, const std::filesystem::path& out);

}  // namespace hitl

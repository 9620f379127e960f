#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hitl/loop_sim.hpp"
#include "hitl/metrics.hpp"
#include "hitl/ssid.hpp"

namespace hitl {

/// Synthetic cohort parameters. Learning is a linear ramp of inversion quality.
struct CohortConfig {
  int subjects_per_group = 11;
  double sensory_delay_s = 0.3;
  double quality_start = 0.0;
  double quality_end = 1.0;
  int ramp_trials = 30;  // trial on which quality_end is reached
  /// Each subject's final quality is drawn uniformly from [quality_end - jitter, quality_end].
  double quality_jitter = 0.15;
  std::uint64_t seed = 20190601;
  /// Feedback gains are drawn from these indices of the default 12-point kappa grid.
  std::vector<int> kappa_indices{6, 7};
  /// Probability that trial 1 is run with a destabilizing feedback gain, per
  /// group; it decays as exp(-(trial - 1) / divergence_decay).
  std::array<double, 4> divergence_rate{0.35, 0.3, 0.15, 0.4};
  double divergence_decay = 10.0;
  /// Destabilized trials use this multiple of the critical feedback gain.
  double divergence_gain = 1.5;

  void validate() const;
};

struct SubjectSpec {
  std::string id;
  int group = 1;
  double preview_s = 0.0;
  double sensory_delay_s = 0.3;
  double quality_start = 0.0;
  double quality_end = 1.0;
  int ramp_trials = 30;
  FeedbackLag feedback;
  int tau_fb = 15;
  double divergence_rate = 0.0;
  double divergence_decay = 10.0;
  double divergence_gain = 1.5;
  std::uint64_t seed = 0;

  double quality(int trial_index) const;
};

std::vector<SubjectSpec> synthetic_cohort(const CohortConfig& cohort, const ExperimentConfig& cfg);

/// The shared command schedule: count seeds drawn from mt19937_64(master).
std::vector<std::uint64_t> reference_seeds(std::uint64_t master, int count);

/// Smallest kappa multiple at which the lag destabilizes the loop (bisection).
double critical_gain(const DiscreteTF& plant_d, const FeedbackLag& lag, int tau_fb);

/// The subject's controller on a given trial. `destabilized` reports whether
/// the divergence draw replaced the feedback gain.
ControllerModel trial_controller(const SubjectSpec& subject, int trial_index,
                                 const DiscreteTF& plant_d, bool* destabilized = nullptr);

struct TrialKey {
  std::string subject_id;
  int trial_index = 0;

  auto operator<=>(const TrialKey&) const = default;
};

/// root/<subject>/trial_NN.{csv,json}, root/manifest.json, root/quarantine/.
class TrialStore {
 public:
  explicit TrialStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path stem(const std::string& subject_id, int trial_index) const;
  bool contains(const std::string& subject_id, int trial_index) const;
  void put(const TrialRecord& rec) const;
  TrialRecord get(const std::string& subject_id, int trial_index, double bound = 4.4) const;
  /// Every record with a sidecar, sorted.
  std::vector<TrialKey> keys() const;
  /// Moves the record's files to quarantine/ with a .reason note.
  void quarantine(const std::string& subject_id, int trial_index, const std::string& reason) const;

  struct Loaded {
    std::vector<TrialRecord> records;
    std::vector<TrialKey> quarantined;
  };
  /// Reads all records in key order, quarantining those that fail to parse.
  Loaded load_all(double bound = 4.4) const;

 private:
  std::filesystem::path root_;
};

/// 64-bit FNV-1a of the text, as 16 hex digits.
std::string config_hash(const std::string& text);

struct Manifest {
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> subjects;
  std::string config_text;
  std::string config_hash;
};

void write_manifest(const std::filesystem::path& root, const Manifest& m);
/// Throws DataError if missing or malformed.
Manifest read_manifest(const std::filesystem::path& root);

struct RunSummary {
  int written = 0;
  int existing = 0;
  int quarantined = 0;
  int divergent = 0;
};

/// Simulates every (subject, trial) missing from the store; present records
/// that fail to load are quarantined and regenerated. Trial i of every
/// subject uses seeds[i - 1].
RunSummary run_experiment(const ExperimentConfig& cfg, const std::vector<SubjectSpec>& subjects,
                          const std::vector<std::uint64_t>& seeds, const TrialStore& store,
                          unsigned threads = 1,
                          const std::function<void(const TrialRecord&)>& progress = {});

/// root/<subject>/trial_NN.model.json
class ModelStore {
 public:
  explicit ModelStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path(const std::string& subject_id, int trial_index) const;
  bool contains(const std::string& subject_id, int trial_index) const;
  void put(const std::string& subject_id, int trial_index, const IdentifiedModel& m) const;
  std::optional<IdentifiedModel> get(const std::string& subject_id, int trial_index) const;
  std::map<TrialKey, IdentifiedModel> load_all() const;

 private:
  std::filesystem::path root_;
};

struct SsidSummary {
  int identified = 0;
  int existing = 0;
  int skipped_divergent = 0;
};

/// Identifies every non-divergent trial lacking a model; divergent trials are
/// skipped through `log`. The stored model carries its validation VAF.
SsidSummary run_ssid(const TrialStore& trials, const ModelStore& models, const DiscreteTF& plant_d,
                     const CandidatePools& pools, Weighting weighting, unsigned threads = 1,
                     const std::function<void(const std::string&)>& log = {});

struct TrialMetrics {
  std::string subject_id;
  int group = 1;
  int trial_index = 1;
  bool divergent = false;
  double e_bar = 0.0;
  double Em = 0.0;
  double Ep = 0.0;
  bool has_model = false;
  double ff_gap = 0.0;
  double fb_norm = 0.0;
  double Me = 0.0;
  double Pe = 0.0;
  double T_ff = 0.0;
  double T_fb = 0.0;
  double vaf = 0.0;
  double J = 0.0;
};

TrialMetrics compute_metrics(const TrialRecord& rec, const IdentifiedModel* model,
                             const DiscreteTF& plant_d, const Quadrature& q = {});

struct TrialBucket {
  std::string label;
  int first = 1;
  int last = 1;
};

/// 1-5, 6-10, 11-20, 21-30, 31-35, 36-40.
std::vector<TrialBucket> default_buckets();
/// Throws ConfigError unless the buckets partition 1..trials in order.
void validate_buckets(const std::vector<TrialBucket>& buckets, int trials);

struct Cell {
  double value = std::numeric_limits<double>::quiet_NaN();
  int count = 0;

  bool gap() const { return count == 0; }
};

struct GroupRow {
  int group = 1;
  std::vector<Cell> cells;
  Cell change;  // last bucket minus first bucket
};

struct BucketTable {
  std::string metric;
  std::vector<TrialBucket> buckets;
  std::vector<GroupRow> rows;
};

/// A metric reader; nullopt means "not available for this trial".
using MetricFn = std::function<std::optional<double>(const TrialMetrics&)>;

/// Named readers: e, Em, Ep, ff_gap, fb_norm, T_ff, T_fb, Me, Pe, vaf.
MetricFn metric_reader(const std::string& name);

/// Per-group per-bucket means over non-divergent trials. Divergent trials never
/// contribute, whatever the reader returns.
BucketTable aggregate(const std::vector<TrialMetrics>& metrics, const std::string& name,
                      const MetricFn& fn, const std::vector<TrialBucket>& buckets,
                      const std::vector<int>& groups);

struct DivergentTable {
  std::vector<TrialBucket> buckets;
  std::vector<int> groups;
  std::vector<std::vector<int>> counts;  // [group][bucket]
  std::vector<int> totals;
};

DivergentTable divergent_counts(const std::vector<TrialMetrics>& metrics,
                                const std::vector<TrialBucket>& buckets, const std::vector<int>& groups);

struct TrialSeries {
  int group = 1;
  std::vector<int> trial;
  std::vector<double> mean;  // NaN where no valid trial
  std::vector<double> stddev;
  std::vector<int> count;
};

std::vector<TrialSeries> per_trial_series(const std::vector<TrialMetrics>& metrics, const MetricFn& fn,
                                          const std::vector<int>& groups, int trials);

/// Gaps are written as "gap".
std::string to_csv(const BucketTable& table);
std::string to_csv(const DivergentTable& table);
/// One row per trial: subject_id, group, trial, divergent, then every metric.
std::string metrics_csv(const std::vector<TrialMetrics>& metrics);

}  // namespace hitl

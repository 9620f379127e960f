#include "hitl/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <random>
#include <regex>
#include <stdexcept>
#include <thread>

#include "hitl/error.hpp"
#include "hitl/record_io.hpp"
#include "json.hpp"

namespace hitl {
namespace {

double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Runs body(i) for i in [0, count) on up to `threads` workers.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& body) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

std::string trial_name(int trial_index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "trial_%02d", trial_index);
  return buf;
}

double sorted_sum(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

Cell make_cell(std::vector<double>& values) {
  Cell c;
  c.count = static_cast<int>(values.size());
  if (c.count > 0) c.value = sorted_sum(values) / c.count;
  return c;
}

std::optional<double> finite_value(const MetricFn& fn, const TrialMetrics& m) {
  if (m.divergent) return std::nullopt;
  const auto v = fn(m);
  if (!v || !std::isfinite(*v)) return std::nullopt;
  return v;
}

}  // namespace

void CohortConfig::validate() const {
  if (subjects_per_group < 0) throw ConfigError("cohort.subjects_per_group: must be >= 0");
  if (!(sensory_delay_s >= 0.0)) throw ConfigError("cohort.sensory_delay_s: must be >= 0");
  for (double q : {quality_start, quality_end}) {
    if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("cohort.quality_start/quality_end: must lie in [0, 1]");
  }
  if (ramp_trials < 1) throw ConfigError("cohort.ramp_trials: must be >= 1");
  if (!(quality_jitter >= 0.0 && quality_jitter <= quality_end)) {
    throw ConfigError("cohort.quality_jitter: must lie in [0, quality_end]");
  }
  if (kappa_indices.empty()) throw ConfigError("cohort.kappa_indices: must be non-empty");
  for (int k : kappa_indices) {
    if (k < 0 || k >= 12) throw ConfigError("cohort.kappa_indices: entries must lie in 0..11");
  }
  for (double p : divergence_rate) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("cohort.divergence_rate: entries must lie in [0, 1]");
  }
  if (!(divergence_decay > 0.0)) throw ConfigError("cohort.divergence_decay: must be > 0");
  if (!(divergence_gain > 1.0)) throw ConfigError("cohort.divergence_gain: must be > 1");
}

double SubjectSpec::quality(int trial_index) const {
  if (ramp_trials <= 1) return quality_end;
  const double s = std::clamp((trial_index - 1.0) / (ramp_trials - 1.0), 0.0, 1.0);
  return quality_start + (quality_end - quality_start) * s;
}

std::vector<SubjectSpec> synthetic_cohort(const CohortConfig& cohort, const ExperimentConfig& cfg) {
  cohort.validate();
  cfg.validate();
  const auto kappas = log_grid(0.1, 3.0, 12);
  const FeedbackLag base = default_feedback_lag();
  std::mt19937_64 rng(cohort.seed);
  std::vector<SubjectSpec> out;
  for (int g = 1; g <= static_cast<int>(cfg.preview_levels.size()); ++g) {
    for (int s = 1; s <= cohort.subjects_per_group; ++s) {
      SubjectSpec spec;
      char id[32];
      std::snprintf(id, sizeof id, "g%ds%02d", g, s);
      spec.id = id;
      spec.group = g;
      spec.preview_s = cfg.preview_for_group(g);
      spec.sensory_delay_s = cohort.sensory_delay_s;
      spec.quality_start = cohort.quality_start;
      spec.ramp_trials = cohort.ramp_trials;
      spec.feedback = base;
      spec.feedback.kappa =
          kappas[static_cast<std::size_t>(cohort.kappa_indices[rng() % cohort.kappa_indices.size()])];
      spec.quality_end = cohort.quality_end - cohort.quality_jitter * unit_uniform(rng);
      spec.tau_fb = static_cast<int>(std::lround(cohort.sensory_delay_s / cfg.Ts));
      spec.divergence_rate = cohort.divergence_rate[static_cast<std::size_t>(g - 1)];
      spec.divergence_decay = cohort.divergence_decay;
      spec.divergence_gain = cohort.divergence_gain;
      spec.seed = rng();
      out.push_back(spec);
    }
  }
  return out;
}

std::vector<std::uint64_t> reference_seeds(std::uint64_t master, int count) {
  std::mt19937_64 rng(master);
  std::vector<std::uint64_t> out(static_cast<std::size_t>(std::max(count, 0)));
  for (auto& s : out) s = rng();
  return out;
}

double critical_gain(const DiscreteTF& plant_d, const FeedbackLag& lag, int tau_fb) {
  auto stable_at = [&](double m) {
    FeedbackLag l = lag;
    l.kappa *= m;
    return stability_filter(plant_d, l.tf(plant_d.Ts()), tau_fb);
  };
  double lo = 0.0;
  double hi = 1.0;
  while (stable_at(hi)) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e12) throw NumericalError("critical_gain: loop stays stable for every gain tried");
  }
  for (int i = 0; i < 200 && hi - lo > 1e-12 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (stable_at(mid) ? lo : hi) = mid;
  }
  return hi;
}

ControllerModel trial_controller(const SubjectSpec& subject, int trial_index, const DiscreteTF& plant_d,
                                 bool* destabilized) {
  std::mt19937_64 rng(subject.seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(trial_index)));
  const double p = subject.divergence_rate * std::exp(-(trial_index - 1) / subject.divergence_decay);
  FeedbackLag lag = subject.feedback;
  const bool unstable = unit_uniform(rng) < p;
  if (unstable) lag.kappa *= subject.divergence_gain * critical_gain(plant_d, lag, subject.tau_fb);
  if (destabilized) *destabilized = unstable;
  return synthetic_subject(plant_d, subject.preview_s, subject.sensory_delay_s, subject.quality(trial_index), lag,
                           subject.tau_fb);
}

TrialStore::TrialStore(std::filesystem::path root) : root_(std::move(root)) {}

std::filesystem::path TrialStore::stem(const std::string& subject_id, int trial_index) const {
  return root_ / subject_id / trial_name(trial_index);
}

bool TrialStore::contains(const std::string& subject_id, int trial_index) const {
  auto p = stem(subject_id, trial_index);
  p += ".json";
  return std::filesystem::exists(p);
}

void TrialStore::put(const TrialRecord& rec) const { write_trial(stem(rec.subject_id, rec.trial_index), rec); }

TrialRecord TrialStore::get(const std::string& subject_id, int trial_index, double bound) const {
  TrialRecord rec = read_trial(stem(subject_id, trial_index), bound);
  if (rec.subject_id != subject_id || rec.trial_index != trial_index) {
    throw DataError("trial record " + subject_id + "/" + trial_name(trial_index) + " names a different trial");
  }
  return rec;
}

std::vector<TrialKey> TrialStore::keys() const {
  std::vector<TrialKey> out;
  if (!std::filesystem::is_directory(root_)) return out;
  static const std::regex pattern(R"(trial_(\d+)\.json)");
  for (const auto& dir : std::filesystem::directory_iterator(root_)) {
    if (!dir.is_directory() || dir.path().filename() == "quarantine") continue;
    for (const auto& f : std::filesystem::directory_iterator(dir.path())) {
      std::smatch m;
      const std::string name = f.path().filename().string();
      if (std::regex_match(name, m, pattern)) {
        out.push_back({dir.path().filename().string(), std::stoi(m[1].str())});
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

void TrialStore::quarantine(const std::string& subject_id, int trial_index, const std::string& reason) const {
  const auto qdir = root_ / "quarantine";
  std::filesystem::create_directories(qdir);
  const std::string base = subject_id + "_" + trial_name(trial_index);
  for (const char* ext : {".csv", ".json"}) {
    auto src = stem(subject_id, trial_index);
    src += ext;
    if (std::filesystem::exists(src)) std::filesystem::rename(src, qdir / (base + ext));
  }
  write_text(qdir / (base + ".reason"), reason + "\n");
}

TrialStore::Loaded TrialStore::load_all(double bound) const {
  Loaded out;
  for (const auto& key : keys()) {
    try {
      out.records.push_back(get(key.subject_id, key.trial_index, bound));
    } catch (const DataError& e) {
      quarantine(key.subject_id, key.trial_index, e.what());
      out.quarantined.push_back(key);
    }
  }
  return out;
}

std::string config_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_manifest(const std::filesystem::path& root, const Manifest& m) {
  nlohmann::ordered_json j;
  j["seeds"] = m.seeds;
  j["subjects"] = m.subjects;
  j["config_hash"] = m.config_hash;
  j["config"] = m.config_text;
  write_text(root / "manifest.json", j.dump(2) + "\n");
}

Manifest read_manifest(const std::filesystem::path& root) {
  try {
    const auto j = nlohmann::json::parse(read_text(root / "manifest.json"));
    Manifest m;
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    m.subjects = j.at("subjects").get<std::vector<std::string>>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config_text = j.at("config").get<std::string>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
}

RunSummary run_experiment(const ExperimentConfig& cfg, const std::vector<SubjectSpec>& subjects,
                          const std::vector<std::uint64_t>& seeds, const TrialStore& store, unsigned threads,
                          const std::function<void(const TrialRecord&)>& progress) {
  cfg.validate();
  if (static_cast<int>(seeds.size()) < cfg.trials_per_subject) {
    throw ConfigError("run_experiment: fewer reference seeds than trials per subject");
  }
  const DiscreteTF plant_d = cfg.plant_d();
  RunSummary summary;
  struct Job {
    const SubjectSpec* subject;
    int trial;
  };
  std::vector<Job> jobs;
  std::vector<bool> needed(static_cast<std::size_t>(cfg.trials_per_subject), false);
  for (const auto& s : subjects) {
    for (int t = 1; t <= cfg.trials_per_subject; ++t) {
      if (store.contains(s.id, t)) {
        try {
          store.get(s.id, t, cfg.divergence_bound);
          ++summary.existing;
          continue;
        } catch (const DataError& e) {
          store.quarantine(s.id, t, e.what());
          ++summary.quarantined;
        }
      }
      jobs.push_back({&s, t});
      needed[static_cast<std::size_t>(t - 1)] = true;
    }
  }

  std::vector<std::optional<ReferenceCommand>> commands(needed.size());
  parallel_for(needed.size(), threads, [&](std::size_t i) {
    if (needed[i]) commands[i] = generate_reference(seeds[i]);
  });

  std::mutex mutex;
  parallel_for(jobs.size(), threads, [&](std::size_t i) {
    const auto& job = jobs[i];
    const auto ctrl = trial_controller(*job.subject, job.trial, plant_d);
    TrialRecord rec = run_trial(plant_d, ctrl, *commands[static_cast<std::size_t>(job.trial - 1)], cfg);
    rec.subject_id = job.subject->id;
    rec.group = job.subject->group;
    rec.preview_s = job.subject->preview_s;
    rec.trial_index = job.trial;
    store.put(rec);
    std::lock_guard lock(mutex);
    ++summary.written;
    if (rec.divergent) ++summary.divergent;
    if (progress) progress(rec);
  });
  return summary;
}

ModelStore::ModelStore(std::filesystem::path root) : root_(std::move(root)) {}

std::filesystem::path ModelStore::path(const std::string& subject_id, int trial_index) const {
  return root_ / subject_id / (trial_name(trial_index) + ".model.json");
}

bool ModelStore::contains(const std::string& subject_id, int trial_index) const {
  return std::filesystem::exists(path(subject_id, trial_index));
}

void ModelStore::put(const std::string& subject_id, int trial_index, const IdentifiedModel& m) const {
  write_text(path(subject_id, trial_index), to_json(m));
}

std::optional<IdentifiedModel> ModelStore::get(const std::string& subject_id, int trial_index) const {
  if (!contains(subject_id, trial_index)) return std::nullopt;
  return identified_from_json(read_text(path(subject_id, trial_index)));
}

std::map<TrialKey, IdentifiedModel> ModelStore::load_all() const {
  std::map<TrialKey, IdentifiedModel> out;
  if (!std::filesystem::is_directory(root_)) return out;
  static const std::regex pattern(R"(trial_(\d+)\.model\.json)");
  for (const auto& dir : std::filesystem::directory_iterator(root_)) {
    if (!dir.is_directory()) continue;
    for (const auto& f : std::filesystem::directory_iterator(dir.path())) {
      std::smatch m;
      const std::string name = f.path().filename().string();
      if (std::regex_match(name, m, pattern)) {
        out.emplace(TrialKey{dir.path().filename().string(), std::stoi(m[1].str())},
                    identified_from_json(read_text(f.path())));
      }
    }
  }
  return out;
}

SsidSummary run_ssid(const TrialStore& trials, const ModelStore& models, const DiscreteTF& plant_d,
                     const CandidatePools& pools, Weighting weighting, unsigned threads,
                     const std::function<void(const std::string&)>& log) {
  SsidSummary summary;
  std::vector<TrialKey> todo;
  for (const auto& key : trials.keys()) {
    if (models.contains(key.subject_id, key.trial_index)) {
      ++summary.existing;
    } else {
      todo.push_back(key);
    }
  }
  std::mutex mutex;
  parallel_for(todo.size(), threads, [&](std::size_t i) {
    const auto& key = todo[i];
    TrialRecord rec = trials.get(key.subject_id, key.trial_index);
    if (rec.divergent) {
      std::lock_guard lock(mutex);
      ++summary.skipped_divergent;
      if (log) log("skipping divergent trial " + key.subject_id + " " + std::to_string(key.trial_index));
      return;
    }
    IdentifiedModel m = ssid_search(closed_loop_response(rec), plant_d, pools, {weighting, 1});
    m.vaf = validate(rec, m, plant_d);
    models.put(key.subject_id, key.trial_index, m);
    std::lock_guard lock(mutex);
    ++summary.identified;
  });
  return summary;
}

TrialMetrics compute_metrics(const TrialRecord& rec, const IdentifiedModel* model, const DiscreteTF& plant_d,
                             const Quadrature& q) {
  TrialMetrics m;
  m.subject_id = rec.subject_id;
  m.group = rec.group;
  m.trial_index = rec.trial_index;
  m.divergent = rec.divergent;
  m.e_bar = time_avg_error(rec);
  const auto fe = freq_errors(closed_loop_response(rec));
  m.Em = fe.Em;
  m.Ep = fe.Ep;
  if (model) {
    const auto mq = model_quality(model->ctrl, plant_d, q);
    m.has_model = true;
    m.ff_gap = mq.ff_gap;
    m.fb_norm = mq.fb_norm;
    m.Me = mq.Me;
    m.Pe = mq.Pe;
    m.T_ff = mq.T_ff;
    m.T_fb = mq.T_fb;
    m.vaf = model->vaf;
    m.J = model->cost;
  }
  return m;
}

std::vector<TrialBucket> default_buckets() {
  return {{"1-5", 1, 5}, {"6-10", 6, 10}, {"11-20", 11, 20}, {"21-30", 21, 30}, {"31-35", 31, 35}, {"36-40", 36, 40}};
}

void validate_buckets(const std::vector<TrialBucket>& buckets, int trials) {
  if (buckets.empty()) throw ConfigError("report.buckets: must be non-empty");
  int next = 1;
  for (const auto& b : buckets) {
    if (b.first != next || b.last < b.first) {
      throw ConfigError("report.buckets: buckets must partition 1.." + std::to_string(trials) + " in order");
    }
    next = b.last + 1;
  }
  if (next != trials + 1) {
    throw ConfigError("report.buckets: buckets must partition 1.." + std::to_string(trials) + " in order");
  }
}

MetricFn metric_reader(const std::string& name) {
  using M = TrialMetrics;
  auto always = [](double M::*field) -> MetricFn { return [field](const M& m) { return std::optional(m.*field); }; };
  auto model = [](double M::*field) -> MetricFn {
    return [field](const M& m) { return m.has_model ? std::optional(m.*field) : std::nullopt; };
  };
  if (name == "e") return always(&M::e_bar);
  if (name == "Em") return always(&M::Em);
  if (name == "Ep") return always(&M::Ep);
  if (name == "ff_gap") return model(&M::ff_gap);
  if (name == "fb_norm") return model(&M::fb_norm);
  if (name == "T_ff") return model(&M::T_ff);
  if (name == "T_fb") return model(&M::T_fb);
  if (name == "Me") return model(&M::Me);
  if (name == "Pe") return model(&M::Pe);
  if (name == "vaf") return model(&M::vaf);
  throw std::invalid_argument("metric_reader: unknown metric '" + name + "'");
}

BucketTable aggregate(const std::vector<TrialMetrics>& metrics, const std::string& name, const MetricFn& fn,
                      const std::vector<TrialBucket>& buckets, const std::vector<int>& groups) {
  BucketTable table{name, buckets, {}};
  for (int g : groups) {
    GroupRow row;
    row.group = g;
    for (const auto& b : buckets) {
      std::vector<double> values;
      for (const auto& m : metrics) {
        if (m.group != g || m.trial_index < b.first || m.trial_index > b.last) continue;
        if (const auto v = finite_value(fn, m)) values.push_back(*v);
      }
      row.cells.push_back(make_cell(values));
    }
    if (!row.cells.empty() && !row.cells.front().gap() && !row.cells.back().gap()) {
      row.change.value = row.cells.back().value - row.cells.front().value;
      row.change.count = row.cells.front().count + row.cells.back().count;
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

DivergentTable divergent_counts(const std::vector<TrialMetrics>& metrics, const std::vector<TrialBucket>& buckets,
                                const std::vector<int>& groups) {
  DivergentTable t{buckets, groups, {}, {}};
  for (int g : groups) {
    std::vector<int> row(buckets.size(), 0);
    for (const auto& m : metrics) {
      if (m.group != g || !m.divergent) continue;
      for (std::size_t b = 0; b < buckets.size(); ++b) {
        if (m.trial_index >= buckets[b].first && m.trial_index <= buckets[b].last) ++row[b];
      }
    }
    int total = 0;
    for (int c : row) total += c;
    t.counts.push_back(row);
    t.totals.push_back(total);
  }
  return t;
}

std::vector<TrialSeries> per_trial_series(const std::vector<TrialMetrics>& metrics, const MetricFn& fn,
                                          const std::vector<int>& groups, int trials) {
  std::vector<TrialSeries> out;
  for (int g : groups) {
    TrialSeries s;
    s.group = g;
    for (int t = 1; t <= trials; ++t) {
      std::vector<double> values;
      for (const auto& m : metrics) {
        if (m.group != g || m.trial_index != t) continue;
        if (const auto v = finite_value(fn, m)) values.push_back(*v);
      }
      const Cell c = make_cell(values);
      double sd = std::numeric_limits<double>::quiet_NaN();
      if (c.count >= 2) {
        std::vector<double> dev;
        for (double v : values) dev.push_back((v - c.value) * (v - c.value));
        sd = std::sqrt(sorted_sum(dev) / (c.count - 1));
      } else if (c.count == 1) {
        sd = 0.0;
      }
      s.trial.push_back(t);
      s.mean.push_back(c.value);
      s.stddev.push_back(sd);
      s.count.push_back(c.count);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string to_csv(const BucketTable& table) {
  std::string out = "group";
  for (const auto& b : table.buckets) out += ",trials " + b.label;
  out += ",change\n";
  auto cell = [](const Cell& c) { return c.gap() ? std::string("gap") : format_double(c.value); };
  for (const auto& row : table.rows) {
    out += std::to_string(row.group);
    for (const auto& c : row.cells) out += "," + cell(c);
    out += "," + cell(row.change) + "\n";
  }
  return out;
}

std::string to_csv(const DivergentTable& table) {
  std::string out = "group";
  for (const auto& b : table.buckets) out += ",trials " + b.label;
  out += ",total\n";
  for (std::size_t g = 0; g < table.groups.size(); ++g) {
    out += std::to_string(table.groups[g]);
    for (int c : table.counts[g]) out += "," + std::to_string(c);
    out += "," + std::to_string(table.totals[g]) + "\n";
  }
  return out;
}

std::string metrics_csv(const std::vector<TrialMetrics>& metrics) {
  std::string out = "subject_id,group,trial,divergent,e,Em,Ep,has_model,ff_gap,fb_norm,Me,Pe,T_ff,T_fb,vaf,J\n";
  for (const auto& m : metrics) {
    out += m.subject_id + "," + std::to_string(m.group) + "," + std::to_string(m.trial_index) + "," +
           (m.divergent ? "1" : "0");
    for (double v : {m.e_bar, m.Em, m.Ep}) out += "," + format_double(v);
    out += m.has_model ? ",1" : ",0";
    for (double v : {m.ff_gap, m.fb_norm, m.Me, m.Pe, m.T_ff, m.T_fb, m.vaf, m.J}) {
      out += "," + (m.has_model ? format_double(v) : std::string());
    }
    out += "\n";
  }
  return out;
}

}  // namespace hitl

#include "hitl/report.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hitl/record_io.hpp"
#include "hitl/stats.hpp"
#include "json.hpp"

namespace hitl {
namespace {

using json = nlohmann::ordered_json;

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json numbers(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(number(x));
  return a;
}

json numbers(const Eigen::VectorXd& v) {
  json a = json::array();
  for (double x : v) a.push_back(number(x));
  return a;
}

std::vector<int> group_ids(const AppConfig& cfg) {
  std::vector<int> g;
  for (int i = 1; i <= static_cast<int>(cfg.experiment.preview_levels.size()); ++i) g.push_back(i);
  return g;
}

json series_json(const std::string& name, const std::vector<TrialSeries>& series) {
  json j;
  j["metric"] = name;
  j["groups"] = json::array();
  for (const auto& s : series) {
    json g;
    g["group"] = s.group;
    g["trial"] = s.trial;
    g["mean"] = numbers(s.mean);
    g["std"] = numbers(s.stddev);
    g["count"] = s.count;
    j["groups"].push_back(g);
  }
  return j;
}

// Phase in degrees, unwrapped along the grid.
std::vector<double> unwrapped_degrees(const std::vector<std::complex<double>>& h) {
  std::vector<double> out(h.size());
  double prev = 0.0;
  double offset = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double a = std::arg(h[i]);
    if (i > 0) {
      const double d = a - prev;
      if (d > std::numbers::pi) offset -= 2.0 * std::numbers::pi;
      if (d < -std::numbers::pi) offset += 2.0 * std::numbers::pi;
    }
    prev = a;
    out[i] = (a + offset) * 180.0 / std::numbers::pi;
  }
  return out;
}

struct MeanStd {
  std::vector<double> mean;
  std::vector<double> stddev;
};

MeanStd across(const std::vector<std::vector<double>>& rows, std::size_t width) {
  MeanStd out{std::vector<double>(width, std::nan("")), std::vector<double>(width, std::nan(""))};
  if (rows.empty()) return out;
  for (std::size_t i = 0; i < width; ++i) {
    std::vector<double> col;
    for (const auto& r : rows) col.push_back(r[i]);
    std::sort(col.begin(), col.end());
    out.mean[i] = mean(col);
    out.stddev[i] = stddev(col);
  }
  return out;
}

json bode_json(const std::vector<TrialRecord>& records, const std::map<TrialKey, IdentifiedModel>& models,
               const DiscreteTF& plant_d, const AppConfig& cfg, bool with_delay) {
  const Quadrature q{cfg.report.quadrature_nodes};
  std::vector<double> omega(static_cast<std::size_t>(q.nodes));
  for (int m = 0; m < q.nodes; ++m) omega[static_cast<std::size_t>(m)] = q.upper * m / (q.nodes - 1);

  std::vector<std::complex<double>> inv(omega.size());
  std::vector<double> inv_mag(omega.size());
  for (std::size_t i = 0; i < omega.size(); ++i) {
    inv[i] = 1.0 / freq_response(plant_d, 0, omega[i]);
    inv_mag[i] = std::abs(inv[i]);
  }
  json j;
  j["omega"] = omega;
  j["delay_included"] = with_delay;
  j["inverse_plant"] = {{"mag", numbers(inv_mag)}, {"phase_deg", numbers(unwrapped_degrees(inv))}};
  j["groups"] = json::array();
  for (int g : group_ids(cfg)) {
    json gj;
    gj["group"] = g;
    gj["trials"] = json::array();
    for (int t : cfg.report.bode_trials) {
      std::vector<std::vector<double>> mags;
      std::vector<std::vector<double>> phases;
      for (const auto& rec : records) {
        if (rec.group != g || rec.trial_index != t || rec.divergent) continue;
        const auto it = models.find({rec.subject_id, rec.trial_index});
        if (it == models.end()) continue;
        const auto& c = it->second.ctrl;
        std::vector<std::complex<double>> h(omega.size());
        std::vector<double> mag(omega.size());
        for (std::size_t i = 0; i < omega.size(); ++i) {
          h[i] = freq_response(c.gff, with_delay ? c.tau_ff : 0, omega[i]);
          mag[i] = std::abs(h[i]);
        }
        mags.push_back(mag);
        phases.push_back(unwrapped_degrees(h));
      }
      const auto m = across(mags, omega.size());
      const auto p = across(phases, omega.size());
      gj["trials"].push_back({{"trial", t},
                              {"count", mags.size()},
                              {"mag_mean", numbers(m.mean)},
                              {"mag_std", numbers(m.stddev)},
                              {"phase_deg_mean", numbers(p.mean)},
                              {"phase_deg_std", numbers(p.stddev)}});
    }
    j["groups"].push_back(gj);
  }
  return j;
}

json median_traces(const std::vector<TrialRecord>& records, const std::vector<TrialMetrics>& metrics,
                   const AppConfig& cfg) {
  const int last = cfg.experiment.trials_per_subject;
  json j;
  j["selection"] = "subject whose e on the last trial is the (lower) median of its group";
  j["groups"] = json::array();
  for (int g : group_ids(cfg)) {
    std::vector<std::pair<double, std::string>> ranked;
    for (const auto& m : metrics) {
      if (m.group == g && m.trial_index == last && !m.divergent) ranked.emplace_back(m.e_bar, m.subject_id);
    }
    json gj;
    gj["group"] = g;
    if (ranked.empty()) {
      gj["subject_id"] = nullptr;
      gj["trials"] = json::array();
      j["groups"].push_back(gj);
      continue;
    }
    std::sort(ranked.begin(), ranked.end());
    const std::string subject = ranked[(ranked.size() - 1) / 2].second;
    gj["subject_id"] = subject;
    gj["trials"] = json::array();
    for (int t : cfg.report.trace_trials) {
      for (const auto& rec : records) {
        if (rec.subject_id != subject || rec.trial_index != t) continue;
        Eigen::VectorXd time(rec.n());
        for (int k = 0; k < rec.n(); ++k) time[k] = k * rec.Ts;
        gj["trials"].push_back({{"trial", t},
                                {"divergent", rec.divergent},
                                {"t", numbers(time)},
                                {"r", numbers(rec.r)},
                                {"y", numbers(rec.y)},
                                {"e", numbers(Eigen::VectorXd(rec.e()))}});
      }
    }
    j["groups"].push_back(gj);
  }
  return j;
}

// Per-subject mean of a metric over trials [first, last], non-divergent only.
std::map<std::string, std::pair<int, double>> subject_means(const std::vector<TrialMetrics>& metrics,
                                                            const MetricFn& fn, int first, int last) {
  std::map<std::string, std::pair<int, std::vector<double>>> acc;
  for (const auto& m : metrics) {
    if (m.divergent || m.trial_index < first || m.trial_index > last) continue;
    const auto v = fn(m);
    if (!v || !std::isfinite(*v)) continue;
    auto& slot = acc[m.subject_id];
    slot.first = m.group;
    slot.second.push_back(*v);
  }
  std::map<std::string, std::pair<int, double>> out;
  for (auto& [id, slot] : acc) {
    std::sort(slot.second.begin(), slot.second.end());
    out[id] = {slot.first, mean(slot.second)};
  }
  return out;
}

json test_json(const TTestResult& t) {
  return {{"t", number(t.t)}, {"p", number(t.p)}, {"df", t.df}, {"mean_diff", number(t.mean_diff)},
          {"zero_variance", t.zero_variance}};
}

json stats_json(const std::vector<TrialMetrics>& metrics, const AppConfig& cfg) {
  const int trials = cfg.experiment.trials_per_subject;
  const int k = cfg.report.last_trials;
  const auto groups = group_ids(cfg);
  json j;
  j["samples"] = "per-subject means over the first/last " + std::to_string(k) + " trials, divergent trials excluded";
  j["pairwise_method"] = "pooled two-sample t tests with Bonferroni correction (substitute for Tukey HSD)";
  j["metrics"] = json::object();
  for (const auto& name : report_metrics()) {
    const MetricFn fn = metric_reader(name);
    const auto late = subject_means(metrics, fn, trials - k + 1, trials);
    const auto early = subject_means(metrics, fn, 1, k);
    std::vector<std::vector<double>> samples;
    std::vector<int> used;
    for (int g : groups) {
      std::vector<double> s;
      for (const auto& [id, v] : late) {
        if (v.first == g) s.push_back(v.second);
      }
      if (s.size() >= 2) {
        samples.push_back(s);
        used.push_back(g);
      }
    }
    json mj;
    mj["groups"] = used;
    if (samples.size() >= 2) {
      const auto a = anova_oneway(samples);
      mj["anova"] = {{"F", number(a.F)}, {"p", number(a.p)}, {"df_between", a.df_between}, {"df_within", a.df_within}};
      json pw = json::array();
      for (const auto& c : pairwise_bonferroni(samples)) {
        json cj = test_json(c.test);
        cj["group_a"] = used[c.first];
        cj["group_b"] = used[c.second];
        cj["p_bonferroni"] = number(c.p_bonferroni);
        pw.push_back(cj);
      }
      mj["pairwise"] = pw;
    } else {
      mj["anova"] = nullptr;
      mj["pairwise"] = json::array();
    }
    json change = json::object();
    for (int g : groups) {
      std::vector<double> before;
      std::vector<double> after;
      for (const auto& [id, v] : late) {
        const auto e = early.find(id);
        if (v.first != g || e == early.end()) continue;
        before.push_back(e->second.second);
        after.push_back(v.second);
      }
      change[std::to_string(g)] = before.size() >= 2 ? test_json(paired_t(before, after)) : json(nullptr);
    }
    mj["paired_change"] = change;
    j["metrics"][name] = mj;
  }
  return j;
}

}  // namespace

const std::vector<std::string>& report_metrics() {
  static const std::vector<std::string> names{"e", "Em", "Ep", "ff_gap", "fb_norm", "T_ff", "T_fb", "Me", "Pe", "vaf"};
  return names;
}

std::vector<TrialMetrics> collect_metrics(const std::vector<TrialRecord>& records,
                                          const std::map<TrialKey, IdentifiedModel>& models,
                                          const DiscreteTF& plant_d, const Quadrature& q) {
  std::vector<TrialMetrics> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    const auto it = models.find({rec.subject_id, rec.trial_index});
    const IdentifiedModel* m = (it != models.end() && !rec.divergent) ? &it->second : nullptr;
    out.push_back(compute_metrics(rec, m, plant_d, q));
  }
  return out;
}

ReportBundle build_report(const std::vector<TrialRecord>& records, const std::map<TrialKey, IdentifiedModel>& models,
                          const AppConfig& cfg) {
  const DiscreteTF plant_d = cfg.experiment.plant_d();
  const Quadrature q{cfg.report.quadrature_nodes};
  const auto metrics = collect_metrics(records, models, plant_d, q);
  const auto groups = group_ids(cfg);
  const auto& buckets = cfg.report.buckets;

  ReportBundle b;
  b.files["tables/divergent.csv"] = to_csv(divergent_counts(metrics, buckets, groups));
  b.files["tables/metrics.csv"] = metrics_csv(metrics);
  for (const auto& name : report_metrics()) {
    const MetricFn fn = metric_reader(name);
    b.files["tables/" + name + ".csv"] = to_csv(aggregate(metrics, name, fn, buckets, groups));
    b.files["plots/" + name + "_per_trial.json"] =
        series_json(name, per_trial_series(metrics, fn, groups, cfg.experiment.trials_per_subject)).dump() + "\n";
  }
  b.files["plots/median_traces.json"] = median_traces(records, metrics, cfg).dump() + "\n";
  b.files["plots/bode_feedforward.json"] = bode_json(records, models, plant_d, cfg, true).dump() + "\n";
  b.files["plots/bode_feedforward_nodelay.json"] = bode_json(records, models, plant_d, cfg, false).dump() + "\n";
  b.files["stats.json"] = stats_json(metrics, cfg).dump(2) + "\n";

  int divergent = 0;
  int with_model = 0;
  for (const auto& m : metrics) {
    divergent += m.divergent;
    with_model += m.has_model;
  }
  json index;
  index["records"] = metrics.size();
  index["divergent"] = divergent;
  index["identified"] = with_model;
  index["files"] = json::array();
  for (const auto& [path, text] : b.files) index["files"].push_back(path);
  b.files["index.json"] = index.dump(2) + "\n";
  return b;
}

void write_bundle(const ReportBundle& bundle, const std::filesystem::path& out) {
  for (const auto& [rel, text] : bundle.files) write_text(out / rel, text);
}

}  // namespace hitl

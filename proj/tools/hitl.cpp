// hitl: command-line front end for the tracking-experiment toolkit.
//
//   hitl refgen   --count 40 --out refs/
//   hitl simulate --config exp.toml --out trials/
//   hitl ssid     --store trials/ --out models/ [--weighted]
//   hitl report   --trials trials/ --models models/ --out report/
//   hitl serve    --config exp.toml
//
// Exit codes: 0 success, 2 configuration error, 3 data error.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <pthread.h>

#include "CLI11.hpp"
#include "hitl/config.hpp"
#include "hitl/error.hpp"
#include "hitl/pipeline.hpp"
#include "hitl/record_io.hpp"
#include "hitl/refgen.hpp"
#include "hitl/report.hpp"
#include "hitl/server.hpp"
#include "hitl/session.hpp"

namespace fs = std::filesystem;
using namespace hitl;

namespace {

void log(const std::string& msg) { std::cerr << "hitl: " << msg << '\n'; }

AppConfig config_or_default(const std::string& path) {
  if (path.empty()) return AppConfig{};
  return load_config(path);
}

std::uint64_t parse_seed(const std::string& text) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    if (text.empty() || text[0] == '-' || text[0] == '+') throw std::invalid_argument(text);
    v = std::stoull(text, &pos, 10);
  } catch (const std::exception&) {
    throw ConfigError("invalid seed '" + text + "'");
  }
  if (pos != text.size()) throw ConfigError("invalid seed '" + text + "'");
  return v;
}

// An output directory must be absent or empty unless --force is given.
void claim_output(const fs::path& out, bool force) {
  if (fs::exists(out)) {
    if (!fs::is_directory(out)) throw ConfigError(out.string() + " exists and is not a directory");
    if (!fs::is_empty(out) && !force) {
      throw ConfigError(out.string() + " is not empty (use --force to overwrite)");
    }
  }
  fs::create_directories(out);
}

int cmd_refgen(const std::vector<std::string>& seed_args, int count, const std::string& master,
               const std::string& out, bool force) {
  std::vector<std::uint64_t> seeds;
  for (const auto& s : seed_args) seeds.push_back(parse_seed(s));
  if (seeds.empty()) {
    if (count <= 0) throw ConfigError("--count must be positive");
    seeds = reference_seeds(parse_seed(master), count);
  }
  claim_output(out, force);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "ref_%02zu.json", i + 1);
    write_text(fs::path(out) / name, to_json(generate_reference(seeds[i])) + "\n");
  }
  log("wrote " + std::to_string(seeds.size()) + " reference commands to " + out);
  return 0;
}

int cmd_simulate(const std::string& config_path, const std::string& out, const std::string& seed_override,
                 bool force, unsigned threads) {
  AppConfig cfg = config_or_default(config_path);
  if (!seed_override.empty()) cfg.cohort.seed = parse_seed(seed_override);
  if (threads > 0) cfg.threads = threads;
  cfg.validate();

  const auto subjects = synthetic_cohort(cfg.cohort, cfg.experiment);
  const auto seeds = reference_seeds(cfg.cohort.seed, cfg.experiment.trials_per_subject);
  Manifest manifest;
  manifest.seeds = seeds;
  for (const auto& s : subjects) manifest.subjects.push_back(s.id);
  manifest.config_text = to_toml(cfg);
  manifest.config_hash = config_hash(manifest.config_text);

  const fs::path root(out);
  if (fs::exists(root / "manifest.json")) {
    const Manifest old = read_manifest(root);
    if (old.config_hash != manifest.config_hash) {
      if (!force) throw ConfigError(out + " holds a run with a different configuration (use --force)");
      fs::remove_all(root);
    } else {
      log("resuming run in " + out);
    }
  } else if (fs::exists(root) && !fs::is_empty(root)) {
    if (!force) throw ConfigError(out + " is not empty and has no manifest (use --force)");
    fs::remove_all(root);
  }
  fs::create_directories(root);
  write_manifest(root, manifest);

  const TrialStore store(root);
  const std::size_t total = subjects.size() * static_cast<std::size_t>(cfg.experiment.trials_per_subject);
  std::size_t done = 0;
  const auto summary = run_experiment(cfg.experiment, subjects, seeds, store, cfg.threads, [&](const TrialRecord& r) {
    ++done;
    if (done % 40 == 0 || r.divergent) {
      std::cerr << "hitl: " << r.subject_id << " trial " << r.trial_index << (r.divergent ? " divergent" : "")
                << " (" << done << " new, " << total << " total)\n";
    }
  });
  log("simulate: " + std::to_string(summary.written) + " written, " + std::to_string(summary.existing) +
      " existing, " + std::to_string(summary.quarantined) + " quarantined, " +
      std::to_string(summary.divergent) + " divergent");
  return 0;
}

int cmd_ssid(const std::string& config_path, const std::string& store_path, const std::string& out,
             bool weighted, unsigned threads) {
  AppConfig cfg = config_or_default(config_path);
  if (weighted) cfg.weighting = Weighting::inverse_magnitude;
  if (threads > 0) cfg.threads = threads;
  cfg.validate();
  if (!fs::is_directory(store_path)) throw DataError("trial store " + store_path + " not found");

  const auto plant_d = cfg.experiment.plant_d();
  const auto pools = build_pools(plant_d, cfg.pools);
  log("pools: " + std::to_string(pools.feedback.size()) + " feedback candidates, " +
      std::to_string(pools.cells()) + " cells");
  fs::create_directories(out);
  const auto summary = run_ssid(TrialStore(store_path), ModelStore(out), plant_d, pools, cfg.weighting,
                                cfg.threads, [](const std::string& m) { log(m); });
  log("ssid: " + std::to_string(summary.identified) + " identified, " + std::to_string(summary.existing) +
      " existing, " + std::to_string(summary.skipped_divergent) + " divergent skipped");
  return 0;
}

int cmd_report(const std::string& config_path, const std::string& trials, const std::string& models,
               const std::string& out, bool force) {
  AppConfig cfg = config_or_default(config_path);
  cfg.validate();
  if (!fs::is_directory(trials)) throw DataError("trial store " + trials + " not found");
  if (!fs::is_directory(models)) throw DataError("model store " + models + " not found");
  const auto loaded = TrialStore(trials).load_all(cfg.experiment.divergence_bound);
  for (const auto& k : loaded.quarantined) {
    log("quarantined unreadable record " + k.subject_id + " trial " + std::to_string(k.trial_index));
  }
  const auto bundle = build_report(loaded.records, ModelStore(models).load_all(), cfg);
  claim_output(out, force);
  write_bundle(bundle, out);
  log("report: " + std::to_string(bundle.files.size()) + " files from " + std::to_string(loaded.records.size()) +
      " trials");
  return 0;
}

int cmd_serve(const std::string& config_path, int port, const std::string& store) {
  AppConfig cfg = config_or_default(config_path);
  if (port >= 0) cfg.service.port = port;
  if (!store.empty()) cfg.service.store = store;
  cfg.validate();

  // Signals are taken synchronously by this thread; the server thread never sees them.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  SessionManager manager(cfg.experiment, cfg.service);
  Server server(manager);
  const int bound = server.bind(cfg.service.host, cfg.service.port);
  std::cout << "listening on " << cfg.service.host << ":" << bound << std::endl;
  log("serving on " + cfg.service.host + ":" + std::to_string(bound) + ", store " + cfg.service.store);
  std::thread worker([&] { server.run(); });

  int sig = 0;
  sigwait(&set, &sig);
  log("shutting down");
  server.stop();
  worker.join();
  for (const auto& id : manager.shutdown()) log("session " + id + ": incomplete trial discarded");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Human-in-the-loop tracking experiments: references, simulation, identification, reports, live service"};
  app.require_subcommand(1);

  std::string config_path;
  bool force = false;
  unsigned threads = 0;

  auto* refgen = app.add_subcommand("refgen", "write reference commands as JSON");
  std::vector<std::string> seeds;
  int count = 40;
  std::string master = "20190601";
  std::string out;
  refgen->add_option("--seeds", seeds, "explicit seeds (decimal)")->delimiter(',');
  refgen->add_option("--count", count, "number of commands drawn from the master seed");
  refgen->add_option("--master-seed", master, "master seed of the schedule");
  refgen->add_option("--out", out, "output directory")->required();
  refgen->add_flag("--force", force, "allow writing into a non-empty directory");

  auto* simulate = app.add_subcommand("simulate", "simulate the synthetic cohort into a trial store");
  std::string seed_override;
  simulate->add_option("--config", config_path, "configuration file");
  simulate->add_option("--out", out, "trial store directory")->required();
  simulate->add_option("--seed", seed_override, "override cohort.seed");
  simulate->add_option("--threads", threads, "worker threads (0 = config)");
  simulate->add_flag("--force", force, "discard a store made with another configuration");

  auto* ssid = app.add_subcommand("ssid", "identify controllers for every stored trial");
  std::string store_path;
  bool weighted = false;
  ssid->add_option("--config", config_path, "configuration file");
  ssid->add_option("--store", store_path, "trial store")->required();
  ssid->add_option("--out", out, "model store directory")->required();
  ssid->add_flag("--weighted", weighted, "weight residuals by 1/|H|");
  ssid->add_option("--threads", threads, "worker threads (0 = config)");

  auto* report = app.add_subcommand("report", "tables, plot series and statistics");
  std::string models_path;
  report->add_option("--config", config_path, "configuration file");
  report->add_option("--trials", store_path, "trial store")->required();
  report->add_option("--models", models_path, "model store")->required();
  report->add_option("--out", out, "report directory")->required();
  report->add_flag("--force", force, "allow writing into a non-empty directory");

  auto* serve = app.add_subcommand("serve", "run the live-trial service");
  int port = -1;
  std::string serve_store;
  serve->add_option("--config", config_path, "configuration file");
  serve->add_option("--port", port, "override service.port (0 = any free port)");
  serve->add_option("--store", serve_store, "override service.store");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*refgen) return cmd_refgen(seeds, count, master, out, force);
    if (*simulate) return cmd_simulate(config_path, out, seed_override, force, threads);
    if (*ssid) return cmd_ssid(config_path, store_path, out, weighted, threads);
    if (*report) return cmd_report(config_path, store_path, models_path, out, force);
    if (*serve) return cmd_serve(config_path, port, serve_store);
  } catch (const ConfigError& e) {
    log("configuration error: " + std::string(e.what()));
    return 2;
  } catch (const DataError& e) {
    log("data error: " + std::string(e.what()));
    return 3;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return 1;
  }
  return 0;
}

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hitl/config.hpp"
#include "hitl/lti.hpp"
#include "hitl/pipeline.hpp"
#include "hitl/refgen.hpp"

namespace hitl {

/// Carries the HTTP status the service maps it to (400, 404 or 409).
class SessionError : public std::runtime_error {
 public:
  SessionError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

enum class SessionStatus { idle, running, complete, divergent_complete };
const char* to_string(SessionStatus s);

struct InputFrame {
  int k = 0;  // 1-based sample index
  double u = 0.0;  // raw client input, scaled by the input gain
};

/// What the display needs for sample k: y_k, e_k, r_k and the preview
/// [t_k, t_k + preview_s] with t_k = (k - 1) Ts.
struct OutputFrame {
  int k = 0;
  double y = 0.0;
  double e = 0.0;
  double r_now = 0.0;
  std::vector<double> preview;
  bool preview_truncated = false;
  bool divergent = false;
};

/// One subject's run of trials. The plant is advanced only by input frames;
/// y_k is read before u_k is applied, exactly as in run_trial.
class Session {
 public:
  Session(std::string id, std::string subject_id, int group, const ExperimentConfig& cfg,
          const ServiceConfig& service, std::vector<std::uint64_t> seeds, int trials_done = 0);

  const std::string& id() const { return id_; }
  const std::string& subject_id() const { return subject_id_; }
  int group() const { return group_; }
  double preview_s() const { return preview_s_; }
  SessionStatus status() const { return status_; }
  /// Index of the running trial, or of the last finished one (0 before the first).
  int trial_index() const { return trial_index_; }
  int trials_done() const { return trials_done_; }
  bool finished() const { return trials_done_ >= cfg_.trials_per_subject; }
  /// Samples processed in the running trial.
  int k() const { return k_; }
  int gap_count() const { return gap_count_; }

  /// Starts the next trial with a fresh plant; returns the frame for k = 1.
  OutputFrame start_trial();
  /// Processes frames in order. A frame skipping ahead fills the missing
  /// samples by holding the last input (counted as gaps); frames for samples
  /// already processed are dropped and counted. Returns one frame per newly
  /// available sample. When sample n is processed the trial finalizes.
  std::vector<OutputFrame> submit(const std::vector<InputFrame>& frames);
  /// Requires all n samples; normally called from submit().
  TrialRecord finalize_trial();
  /// The last finalized record, if any.
  const std::optional<TrialRecord>& last_record() const { return last_record_; }
  int dropped_count() const { return dropped_; }
  /// Abandons a running trial (nothing is persisted).
  bool discard_running();

 private:
  OutputFrame frame(int k) const;
  void apply(double u);

  std::string id_;
  std::string subject_id_;
  int group_;
  double preview_s_;
  ExperimentConfig cfg_;
  ServiceConfig service_;
  DiscreteTF plant_d_;
  std::vector<std::uint64_t> seeds_;

  SessionStatus status_ = SessionStatus::idle;
  int trial_index_ = 0;
  int trials_done_ = 0;
  std::optional<ReferenceCommand> cmd_;
  Eigen::VectorXd r_;
  Eigen::VectorXd u_;
  Eigen::VectorXd y_;
  std::optional<DifferenceFilter> plant_;
  int k_ = 0;
  double last_u_ = 0.0;
  int gap_count_ = 0;
  int dropped_ = 0;
  bool divergent_ = false;
  std::optional<TrialRecord> last_record_;
};

/// Owns sessions and persists finished trials to a TrialStore.
/// Each session is serialized by its own mutex.
class SessionManager {
 public:
  SessionManager(ExperimentConfig cfg, ServiceConfig service);

  /// Throws SessionError 400 on a bad group or subject id, 409 when the
  /// subject already has an unfinished session. A subject with stored trials
  /// resumes at the first missing one.
  std::string create_session(const std::string& subject_id, int group);

  /// Runs fn under the session's lock; SessionError 404 if unknown.
  template <typename Fn>
  auto with_session(const std::string& id, Fn&& fn) {
    auto entry = find(id);
    std::lock_guard lock(entry->mutex);
    return fn(entry->session);
  }

  /// Starts the next trial for a session.
  OutputFrame start_trial(const std::string& session_id);
  /// Processes frames; a finished trial is written to the store.
  std::vector<OutputFrame> submit(const std::string& session_id, const std::vector<InputFrame>& frames);

  /// "<subject>_trial_NN" -> record from the store; nullopt if absent.
  std::optional<TrialRecord> trial(const std::string& trial_id) const;
  static std::string trial_id(const std::string& subject_id, int trial_index);

  const TrialStore& store() const { return store_; }
  const ServiceConfig& service() const { return service_; }
  const ExperimentConfig& experiment() const { return cfg_; }
  const std::vector<std::uint64_t>& seeds() const { return seeds_; }

  /// Discards running trials; returns the ids of sessions that lost one.
  std::vector<std::string> shutdown();

 private:
  struct Entry {
    explicit Entry(Session s) : session(std::move(s)) {}
    std::mutex mutex;
    Session session;
  };
  std::shared_ptr<Entry> find(const std::string& id) const;
  void persist_if_finished(Session& s, int before_done);

  ExperimentConfig cfg_;
  ServiceConfig service_;
  std::vector<std::uint64_t> seeds_;
  TrialStore store_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::uint64_t next_id_ = 1;
};

}  // namespace hitl

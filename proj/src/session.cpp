#include "hitl/session.hpp"

#include <cmath>
#include <regex>

#include "hitl/error.hpp"
#include "hitl/record_io.hpp"

namespace hitl {

const char* to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::idle: return "idle";
    case SessionStatus::running: return "running";
    case SessionStatus::complete: return "complete";
    case SessionStatus::divergent_complete: return "divergent-complete";
  }
  return "unknown";
}

Session::Session(std::string id, std::string subject_id, int group, const ExperimentConfig& cfg,
                 const ServiceConfig& service, std::vector<std::uint64_t> seeds, int trials_done)
    : id_(std::move(id)),
      subject_id_(std::move(subject_id)),
      group_(group),
      preview_s_(cfg.preview_for_group(group)),
      cfg_(cfg),
      service_(service),
      plant_d_(cfg.plant_d()),
      seeds_(std::move(seeds)),
      trial_index_(trials_done),
      trials_done_(trials_done) {
  if (static_cast<int>(seeds_.size()) < cfg_.trials_per_subject) {
    throw std::invalid_argument("Session: fewer seeds than trials");
  }
  if (trials_done < 0 || trials_done > cfg_.trials_per_subject) {
    throw std::invalid_argument("Session: trials_done out of range");
  }
}

OutputFrame Session::start_trial() {
  if (status_ == SessionStatus::running) throw SessionError(409, "a trial is already running");
  if (finished()) throw SessionError(409, "all trials of this session are complete");
  trial_index_ = trials_done_ + 1;
  cmd_ = generate_reference(seeds_[static_cast<std::size_t>(trial_index_ - 1)]);
  r_ = sample(*cmd_, cfg_.Ts, cfg_.n);
  u_ = Eigen::VectorXd::Zero(cfg_.n);
  y_ = Eigen::VectorXd::Zero(cfg_.n);
  plant_.emplace(plant_d_);
  k_ = 0;
  last_u_ = 0.0;
  gap_count_ = 0;
  dropped_ = 0;
  divergent_ = false;
  status_ = SessionStatus::running;
  return frame(1);
}

OutputFrame Session::frame(int k) const {
  OutputFrame f;
  f.k = k;
  const auto i = static_cast<Eigen::Index>(k - 1);
  f.y = plant_->peek();
  f.r_now = r_[i];
  f.e = f.r_now - f.y;
  const auto w = preview_window(*cmd_, static_cast<double>(k - 1) * cfg_.Ts, preview_s_, service_.preview_resolution);
  f.preview.assign(w.values.data(), w.values.data() + w.values.size());
  f.preview_truncated = w.truncated;
  f.divergent = divergent_ || std::abs(f.y) > cfg_.divergence_bound;
  return f;
}

void Session::apply(double u) {
  const auto i = static_cast<Eigen::Index>(k_);
  y_[i] = plant_->peek();
  if (std::abs(y_[i]) > cfg_.divergence_bound || std::isnan(y_[i])) divergent_ = true;
  u_[i] = u;
  plant_->step(u);
  last_u_ = u;
  ++k_;
}

std::vector<OutputFrame> Session::submit(const std::vector<InputFrame>& frames) {
  if (status_ != SessionStatus::running) throw SessionError(409, "no trial is running");
  std::vector<OutputFrame> out;
  for (const auto& in : frames) {
    if (status_ != SessionStatus::running) {
      ++dropped_;
      continue;
    }
    if (!std::isfinite(in.u)) throw SessionError(400, "frame " + std::to_string(in.k) + ": input is not finite");
    if (in.k <= k_) {
      ++dropped_;
      continue;
    }
    if (in.k > cfg_.n) throw SessionError(400, "frame index " + std::to_string(in.k) + " beyond the trial length");
    while (k_ + 1 < in.k) {
      apply(last_u_);
      ++gap_count_;
      out.push_back(frame(k_ + 1));
    }
    apply(service_.input_gain * in.u);
    if (k_ < cfg_.n) {
      out.push_back(frame(k_ + 1));
    } else {
      finalize_trial();
    }
  }
  return out;
}

TrialRecord Session::finalize_trial() {
  if (status_ != SessionStatus::running || k_ < cfg_.n) {
    throw SessionError(409, "trial has " + std::to_string(k_) + " of " + std::to_string(cfg_.n) + " samples");
  }
  TrialRecord rec;
  rec.subject_id = subject_id_;
  rec.group = group_;
  rec.preview_s = preview_s_;
  rec.trial_index = trial_index_;
  rec.Ts = cfg_.Ts;
  rec.r = r_;
  rec.u = u_;
  rec.y = y_;
  rec.divergent = detect_divergence(y_, cfg_.divergence_bound);
  rec.reference_seed = cmd_->seed;
  rec.gap_count = gap_count_;
  rec.input_gain = service_.input_gain;
  ++trials_done_;
  status_ = rec.divergent ? SessionStatus::divergent_complete : SessionStatus::complete;
  plant_.reset();
  last_record_ = rec;
  return rec;
}

bool Session::discard_running() {
  if (status_ != SessionStatus::running) return false;
  status_ = SessionStatus::idle;
  plant_.reset();
  k_ = 0;
  return true;
}

SessionManager::SessionManager(ExperimentConfig cfg, ServiceConfig service)
    : cfg_(std::move(cfg)),
      service_(std::move(service)),
      seeds_(reference_seeds(service_.seed, cfg_.trials_per_subject)),
      store_(service_.store) {
  cfg_.validate();
  service_.validate();
}

std::string SessionManager::create_session(const std::string& subject_id, int group) {
  static const std::regex safe(R"([A-Za-z0-9_-]{1,64})");
  if (!std::regex_match(subject_id, safe)) {
    throw SessionError(400, "subject_id must be 1-64 characters from [A-Za-z0-9_-]");
  }
  if (group < 1 || group > static_cast<int>(cfg_.preview_levels.size())) {
    throw SessionError(400, "group must lie in 1.." + std::to_string(cfg_.preview_levels.size()));
  }
  std::lock_guard lock(mutex_);
  for (const auto& [id, entry] : sessions_) {
    std::lock_guard inner(entry->mutex);
    if (entry->session.subject_id() == subject_id && !entry->session.finished()) {
      throw SessionError(409, "subject " + subject_id + " already has an active session (" + id + ")");
    }
  }
  // Resume after the subject's last stored trial.
  int done = 0;
  while (done < cfg_.trials_per_subject && store_.contains(subject_id, done + 1)) ++done;
  const std::string id = "s" + std::to_string(next_id_++);
  sessions_.emplace(id, std::make_shared<Entry>(Session(id, subject_id, group, cfg_, service_, seeds_, done)));
  return id;
}

std::shared_ptr<SessionManager::Entry> SessionManager::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw SessionError(404, "unknown session " + id);
  return it->second;
}

void SessionManager::persist_if_finished(Session& s, int before_done) {
  if (s.trials_done() > before_done && s.last_record()) store_.put(*s.last_record());
}

OutputFrame SessionManager::start_trial(const std::string& session_id) {
  return with_session(session_id, [](Session& s) { return s.start_trial(); });
}

std::vector<OutputFrame> SessionManager::submit(const std::string& session_id, const std::vector<InputFrame>& frames) {
  return with_session(session_id, [&](Session& s) {
    const int before = s.trials_done();
    auto out = s.submit(frames);
    persist_if_finished(s, before);
    return out;
  });
}

std::string SessionManager::trial_id(const std::string& subject_id, int trial_index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_trial_%02d", trial_index);
  return subject_id + buf;
}

std::optional<TrialRecord> SessionManager::trial(const std::string& trial_id) const {
  static const std::regex pattern(R"(([A-Za-z0-9_-]{1,64})_trial_(\d{1,4}))");
  std::smatch m;
  if (!std::regex_match(trial_id, m, pattern)) throw SessionError(400, "malformed trial id " + trial_id);
  const std::string subject = m[1].str();
  const int index = std::stoi(m[2].str());
  if (!store_.contains(subject, index)) return std::nullopt;
  return store_.get(subject, index, cfg_.divergence_bound);
}

std::vector<std::string> SessionManager::shutdown() {
  std::vector<std::string> lost;
  std::lock_guard lock(mutex_);
  for (auto& [id, entry] : sessions_) {
    std::lock_guard inner(entry->mutex);
    if (entry->session.discard_running()) lost.push_back(id);
  }
  return lost;
}

}  // namespace hitl

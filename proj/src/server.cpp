#include "hitl/server.hpp"

#include "hitl/error.hpp"
#include "httplib.h"
#include "json.hpp"

namespace hitl {
namespace {

using json = nlohmann::ordered_json;

constexpr double kCentimetresPerHashMark = 5.45;

json frame_json(const OutputFrame& f) {
  return {{"k", f.k},
          {"y", f.y},
          {"e", f.e},
          {"r_now", f.r_now},
          {"preview", f.preview},
          {"preview_truncated", f.preview_truncated},
          {"divergent", f.divergent}};
}

json state_json(const Session& s, const SessionManager& m) {
  json j{{"session_id", s.id()},
         {"subject_id", s.subject_id()},
         {"group", s.group()},
         {"preview_s", s.preview_s()},
         {"status", to_string(s.status())},
         {"trial_index", s.trial_index()},
         {"trials_done", s.trials_done()},
         {"trials", m.experiment().trials_per_subject},
         {"finished", s.finished()},
         {"k", s.k()},
         {"n", m.experiment().n},
         {"gap_count", s.gap_count()},
         {"dropped", s.dropped_count()},
         {"Ts", m.experiment().Ts},
         {"preview_resolution", m.service().preview_resolution},
         {"divergence_bound", m.experiment().divergence_bound},
         {"cm_per_hm", kCentimetresPerHashMark},
         {"input_gain", m.service().input_gain}};
  if (s.last_record()) j["last_trial_id"] = SessionManager::trial_id(s.subject_id(), s.last_record()->trial_index);
  return j;
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

// Runs a handler, mapping library errors onto HTTP statuses.
template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const SessionError& e) {
    reply(res, e.status(), {{"error", e.what()}});
  } catch (const json::exception& e) {
    reply(res, 400, {{"error", std::string("bad JSON: ") + e.what()}});
  } catch (const DataError& e) {
    reply(res, 500, {{"error", e.what()}});
  } catch (const std::exception& e) {
    reply(res, 500, {{"error", e.what()}});
  }
}

}  // namespace

Server::Server(SessionManager& manager) : manager_(manager), http_(std::make_unique<httplib::Server>()) {
  auto& http = *http_;
  // The library default sets SO_REUSEPORT, which lets a second server share a
  // bound port silently; keep only SO_REUSEADDR so conflicts surface.
  http.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  http.Get("/health", [](const httplib::Request&, httplib::Response& res) { reply(res, 200, {{"status", "ok"}}); });

  http.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = json::parse(req.body);
      const auto id = manager_.create_session(body.at("subject_id").get<std::string>(), body.at("group").get<int>());
      manager_.with_session(id, [&](Session& s) { reply(res, 201, state_json(s, manager_)); });
    });
  });

  http.Post(R"(/sessions/([^/]+)/trials)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      manager_.with_session(id, [&](Session& s) {
        const auto f = s.start_trial();
        reply(res, 201,
              {{"trial_id", SessionManager::trial_id(s.subject_id(), s.trial_index())},
               {"trial_index", s.trial_index()},
               {"reference_seed", manager_.seeds()[static_cast<std::size_t>(s.trial_index() - 1)]},
               {"frame", frame_json(f)}});
      });
    });
  });

  http.Post(R"(/sessions/([^/]+)/frames)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      const auto body = json::parse(req.body);
      std::vector<InputFrame> frames;
      for (const auto& f : body.at("frames")) frames.push_back({f.at("k").get<int>(), f.at("u").get<double>()});
      const auto out = manager_.submit(id, frames);
      manager_.with_session(id, [&](Session& s) {
        json arr = json::array();
        for (const auto& f : out) arr.push_back(frame_json(f));
        json j{{"frames", arr}, {"status", to_string(s.status())}, {"k", s.k()}, {"gap_count", s.gap_count()}};
        const bool done = s.status() == SessionStatus::complete || s.status() == SessionStatus::divergent_complete;
        j["trial_complete"] = done;
        if (done && s.last_record()) {
          j["trial_id"] = SessionManager::trial_id(s.subject_id(), s.last_record()->trial_index);
          j["divergent"] = s.last_record()->divergent;
        }
        reply(res, 200, j);
      });
    });
  });

  http.Post(R"(/sessions/([^/]+)/finalize)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      manager_.with_session(id, [&](Session& s) {
        if (s.status() != SessionStatus::running) throw SessionError(409, "no trial is running");
        s.finalize_trial();
      });
    });
  });

  http.Get(R"(/sessions/([^/]+)/state)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      manager_.with_session(id, [&](Session& s) { reply(res, 200, state_json(s, manager_)); });
    });
  });

  http.Get(R"(/trials/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto rec = manager_.trial(req.matches[1]);
      if (!rec) throw SessionError(404, "unknown trial " + std::string(req.matches[1]));
      auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
      reply(res, 200,
            {{"trial_id", SessionManager::trial_id(rec->subject_id, rec->trial_index)},
             {"subject_id", rec->subject_id},
             {"group", rec->group},
             {"preview_s", rec->preview_s},
             {"trial_index", rec->trial_index},
             {"Ts", rec->Ts},
             {"n", rec->n()},
             {"divergent", rec->divergent},
             {"reference_seed", rec->reference_seed},
             {"gap_count", rec->gap_count},
             {"input_gain", rec->input_gain},
             {"r", vec(rec->r)},
             {"u", vec(rec->u)},
             {"y", vec(rec->y)}});
    });
  });
}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
  const int bound = port == 0 ? http_->bind_to_any_port(host) : (http_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw ConfigError("cannot bind " + host + ":" + std::to_string(port) + " (address in use?)");
  return bound;
}

void Server::run() { http_->listen_after_bind(); }

void Server::stop() {
  if (http_) http_->stop();
}

bool Server::running() const { return http_->is_running(); }

}  // namespace hitl

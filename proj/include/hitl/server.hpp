#pragma once

#include <memory>
#include <string>

#include "hitl/session.hpp"

namespace httplib {
class Server;
}

namespace hitl {

/// HTTP front end of a SessionManager.
///
///   GET  /health
///   POST /sessions                 {subject_id, group}
///   POST /sessions/{id}/trials     starts the next trial, returns the k = 1 frame
///   POST /sessions/{id}/frames     {frames: [{k, u}, ...]} -> {frames: [{k, y, e, r_now, preview, divergent}]}
///   POST /sessions/{id}/finalize   rejected unless all samples arrived
///   GET  /sessions/{id}/state
///   GET  /trials/{id}              id = <subject>_trial_NN
///
/// Streaming is frame batches over plain HTTP; a client may post one frame
/// per sample or buffer several.
class Server {
 public:
  explicit Server(SessionManager& manager);
  ~Server();

  /// Binds host:port (port 0 picks a free one) and returns the bound port.
  /// Throws ConfigError when the address cannot be bound.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void run();
  void stop();
  bool running() const;

 private:
  SessionManager& manager_;
  std::unique_ptr<httplib::Server> http_;
};

}  // namespace hitl

#pragma once

// Live run behind an HTTP/JSON API with a server-sent event feed.
//
//   GET  /api/patients                       roster, stage, risk
//   GET  /api/patients/{id}/telemetry?window recent fused records
//   GET  /api/alerts                         outstanding alerts
//   POST /api/recommendations                ExpertRecommendation body
//   GET  /api/metrics                        running metrics
//   GET  /api/stream[?since=N]               event feed (text/event-stream)
//
// The event loop runs on its own thread. Writes reach it only through the
// kernel inbox; reads see a snapshot published after every paced slice.

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>

#include "therasim/scenario.hpp"
#include "therasim/simulation.hpp"

namespace httplib {
class Server;
}

namespace therasim {

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  double pace = 10.0;  // virtual ms per wall ms
  std::filesystem::path out_dir = "runs/live";
  bool exit_when_done = false;
  int slice_wall_ms = 50;
  std::size_t feed_capacity = 50'000;
};

class LiveServer {
 public:
  LiveServer(ScenarioConfig config, ServeOptions options);
  ~LiveServer();

  LiveServer(const LiveServer&) = delete;
  LiveServer& operator=(const LiveServer&) = delete;

  // Binds and starts both threads. Returns the bound port.
  int start();
  void stop();

  int port() const { return port_; }
  bool run_finished() const { return run_finished_.load(); }
  // Waits until outputs are written or the timeout passes.
  bool wait_finished(std::chrono::milliseconds timeout);
  // Set if the event loop died on an exception.
  std::string failure() const;

 private:
  struct Snapshot {
    GatewayState gateway;
    Json metrics;
  };

  void sim_loop();
  void publish();
  void on_feed(const FeedItem& item);
  void install_routes();
  std::shared_ptr<const Snapshot> snapshot() const;

  ScenarioConfig config_;
  ServeOptions options_;
  std::unique_ptr<Simulation> sim_;
  std::ofstream trace_;
  std::unique_ptr<httplib::Server> http_;
  std::thread http_thread_;
  std::thread sim_thread_;
  int port_ = 0;

  mutable std::mutex snap_mu_;
  std::shared_ptr<const Snapshot> snap_;
  std::set<std::string> acked_;

  std::mutex feed_mu_;
  std::condition_variable feed_cv_;
  std::deque<std::pair<std::uint64_t, std::string>> feed_;

  std::mutex done_mu_;
  std::condition_variable done_cv_;
  std::atomic<bool> stopping_{false};
  std::atomic<bool> run_finished_{false};
  std::string failure_;

  std::vector<InputRecord> inputs_;
};

// Blocks until SIGINT/SIGTERM (or the run ends with exit_when_done).
// Returns a process exit code.
int serve(ScenarioConfig config, const ServeOptions& options);

}  // namespace therasim

#include "therasim/server.hpp"

#include <charconv>
#include <chrono>
#include <csignal>
#include <fstream>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

namespace therasim {

namespace {

using Clock = std::chrono::steady_clock;

void reply(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

Json error_body(const std::string& error, Json violations = Json::array()) {
  return Json{{"error", error}, {"violations", std::move(violations)}};
}

std::atomic<bool> g_signalled{false};

void on_signal(int) { g_signalled = true; }

}  // namespace

LiveServer::LiveServer(ScenarioConfig config, ServeOptions options)
    : config_(std::move(config)), options_(std::move(options)) {
  if (options_.pace <= 0) throw ConfigError("pace", "must be > 0");
  sim_ = std::make_unique<Simulation>(config_, true);
  sim_->gateway().set_feed_sink([this](const FeedItem& item) { on_feed(item); });
  sim_->kernel().set_input_recorder([this](const InputRecord& r) { inputs_.push_back(r); });
  http_ = std::make_unique<httplib::Server>();
  install_routes();
}

LiveServer::~LiveServer() { stop(); }

std::shared_ptr<const LiveServer::Snapshot> LiveServer::snapshot() const {
  std::lock_guard lock(snap_mu_);
  return snap_;
}

std::string LiveServer::failure() const {
  std::lock_guard lock(snap_mu_);
  return failure_;
}

void LiveServer::publish() {
  auto snap = std::make_shared<Snapshot>(Snapshot{sim_->gateway().state(), sim_->metrics().result()});
  std::lock_guard lock(snap_mu_);
  snap_ = std::move(snap);
}

void LiveServer::on_feed(const FeedItem& item) {
  std::string text = fmt::format("id: {}\nevent: {}\ndata: {}\n\n", item.id, item.kind,
                                 Json{{"t", item.t}, {"kind", item.kind}, {"data", item.data}}.dump());
  {
    std::lock_guard lock(feed_mu_);
    feed_.emplace_back(item.id, std::move(text));
    while (feed_.size() > options_.feed_capacity) feed_.pop_front();
  }
  feed_cv_.notify_all();
}

void LiveServer::install_routes() {
  httplib::Server& s = *http_;

  s.Get("/api/patients", [this](const httplib::Request&, httplib::Response& res) {
    const auto snap = snapshot();
    Json patients = Json::array();
    for (const auto& [id, p] : snap->gateway.patients) {
      std::size_t alerts = 0;
      for (const auto& [_, a] : snap->gateway.alerts) alerts += a.patient_id == id;
      patients.push_back(Json{{"patient_id", id},
                              {"stage", p.stage},
                              {"tree_id", p.tree_id},
                              {"risk", p.risk},
                              {"sessions", p.sessions},
                              {"last_positive_fraction", p.last_positive_fraction},
                              {"outstanding_alerts", alerts}});
    }
    reply(res, 200, Json{{"now", snap->gateway.now}, {"finished", snap->gateway.finished}, {"patients", patients}});
  });

  s.Get(R"(/api/patients/([^/]+)/telemetry)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto snap = snapshot();
    const std::string id = req.matches[1];
    auto it = snap->gateway.telemetry.find(id);
    if (it == snap->gateway.telemetry.end()) {
      reply(res, 404, error_body(fmt::format("unknown patient '{}'", id)));
      return;
    }
    std::int64_t window = -1;
    if (req.has_param("window")) {
      try {
        window = std::stoll(req.get_param_value("window"));
      } catch (const std::exception&) {
        window = -2;
      }
      if (window < 0) {
        reply(res, 400, error_body("window must be a non-negative integer (ms)"));
        return;
      }
    }
    Json records = Json::array();
    for (const auto& r : it->second) {
      if (window < 0 || r.t1.ms > snap->gateway.now - window) records.push_back(to_wire(r));
    }
    reply(res, 200, Json{{"patient_id", id}, {"now", snap->gateway.now}, {"records", records}});
  });

  s.Get("/api/alerts", [this](const httplib::Request&, httplib::Response& res) {
    const auto snap = snapshot();
    Json alerts = Json::array();
    for (const auto& [_, a] : snap->gateway.alerts) alerts.push_back(to_wire(a));
    reply(res, 200, Json{{"now", snap->gateway.now}, {"alerts", alerts}});
  });

  s.Get("/api/metrics", [this](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, snapshot()->metrics);
  });

  s.Post("/api/recommendations", [this](const httplib::Request& req, httplib::Response& res) {
    Json body;
    try {
      body = Json::parse(req.body);
    } catch (const Json::parse_error& e) {
      reply(res, 400, error_body(fmt::format("body is not JSON (byte {})", e.byte)));
      return;
    }
    if (!body.is_object()) {
      reply(res, 400, error_body("body must be an ExpertRecommendation object"));
      return;
    }
    if (body.contains("type") && body["type"] != ExpertRecommendation::kType) {
      reply(res, 400, error_body("type must be ExpertRecommendation"));
      return;
    }
    const auto snap = snapshot();
    if (!body.contains("issued_at")) body["issued_at"] = snap->gateway.now;
    ExpertRecommendation rec;
    try {
      rec = from_wire<ExpertRecommendation>(body);
    } catch (const DecodeError& e) {
      reply(res, 400, error_body(e.what()));
      return;
    }
    if (const auto v = validate(rec); !v.ok()) {
      reply(res, 400, error_body("invalid recommendation", v.to_json()));
      return;
    }
    if (!snap->gateway.patients.contains(rec.patient_id)) {
      reply(res, 404, error_body(fmt::format("unknown patient '{}'", rec.patient_id)));
      return;
    }
    if (snap->gateway.finished || run_finished()) {
      reply(res, 409, error_body("run finished"));
      return;
    }
    {
      std::lock_guard lock(snap_mu_);
      if (rec.kind == RecommendationKind::EmergencyAck) {
        auto it = snap->gateway.alerts.find(*rec.alert_id);
        if (it == snap->gateway.alerts.end() || it->second.patient_id != rec.patient_id ||
            acked_.contains(*rec.alert_id)) {
          reply(res, 409, error_body(fmt::format("StaleAck: alert '{}' is not outstanding", *rec.alert_id)));
          return;
        }
        acked_.insert(*rec.alert_id);
      }
    }
    sim_->kernel().inject("cds", "recommendation", to_wire(rec));
    reply(res, 200, Json{{"status", "accepted"}, {"rec_id", rec.rec_id()}});
  });

  s.Get("/api/stream", [this](const httplib::Request& req, httplib::Response& res) {
    std::uint64_t next = 0;
    if (req.has_param("since") || req.has_header("Last-Event-ID")) {
      const std::string text = req.has_param("since") ? req.get_param_value("since") : req.get_header_value("Last-Event-ID");
      const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), next);
      if (ec != std::errc() || end != text.data() + text.size()) {
        reply(res, 400, error_body("since must be a non-negative event id"));
        return;
      }
    } else {
      std::lock_guard lock(feed_mu_);
      next = feed_.empty() ? 0 : feed_.back().first;
    }
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream", [this, next](std::size_t, httplib::DataSink& sink) mutable {
          std::vector<std::string> batch;
          {
            std::unique_lock lock(feed_mu_);
            feed_cv_.wait_for(lock, std::chrono::milliseconds(500), [&] {
              return stopping_.load() || (!feed_.empty() && feed_.back().first > next);
            });
            if (stopping_) return false;
            for (const auto& [id, text] : feed_) {
              if (id > next) {
                batch.push_back(text);
                next = id;
              }
            }
          }
          if (batch.empty()) batch.emplace_back(": keepalive\n\n");
          for (const auto& text : batch) {
            if (!sink.write(text.data(), text.size())) return false;
          }
          return true;
        });
  });
}

int LiveServer::start() {
  if (options_.port == 0) {
    port_ = http_->bind_to_any_port(options_.host);
  } else {
    port_ = http_->bind_to_port(options_.host, options_.port) ? options_.port : -1;
  }
  if (port_ <= 0) throw Error(fmt::format("cannot bind {}:{}", options_.host, options_.port));

  std::filesystem::create_directories(options_.out_dir);
  auto trace_tmp = options_.out_dir / "trace.jsonl";
  trace_tmp += ".tmp";
  trace_.open(trace_tmp, std::ios::binary | std::ios::trunc);
  if (!trace_) throw Error(fmt::format("cannot write {}", trace_tmp.string()));
  sim_->set_trace_writer([this](const std::string& line) { trace_ << line; });
  sim_->start();
  sim_->advance_to(SimTime{0});
  publish();
  http_thread_ = std::thread([this] { http_->listen_after_bind(); });
  sim_thread_ = std::thread([this] { sim_loop(); });
  spdlog::info("serving on http://{}:{} (pace {}x)", options_.host, port_, options_.pace);
  return port_;
}

void LiveServer::sim_loop() {
  auto trace_tmp = options_.out_dir / "trace.jsonl";
  trace_tmp += ".tmp";

  try {
    const auto wall_start = Clock::now();
    while (!stopping_ && !sim_->finished()) {
      const auto elapsed = std::chrono::duration<double, std::milli>(Clock::now() - wall_start).count();
      const auto target = static_cast<std::int64_t>(elapsed * options_.pace);
      if (target >= sim_->horizon().ms) {
        sim_->finish();
      } else {
        sim_->advance_to(SimTime{target});
      }
      publish();
      if (!sim_->finished()) std::this_thread::sleep_for(std::chrono::milliseconds(options_.slice_wall_ms));
    }
    trace_.close();
    if (sim_->finished()) {
      std::filesystem::rename(trace_tmp, options_.out_dir / "trace.jsonl");
      write_file_atomic(options_.out_dir / "metrics.json", metrics_text(sim_->metrics().result()));
      write_file_atomic(options_.out_dir / "config.resolved.json", resolved_json(config_).dump(2) + "\n");
      std::string inputs;
      for (const auto& r : inputs_) inputs += Json(r).dump() + "\n";
      write_file_atomic(options_.out_dir / "inputs.jsonl", inputs);
      spdlog::info("run complete, outputs in {}", options_.out_dir.string());
    }
  } catch (const std::exception& e) {
    spdlog::error("event loop stopped: {}", e.what());
    std::lock_guard lock(snap_mu_);
    failure_ = e.what();
  }
  {
    std::lock_guard lock(done_mu_);
    run_finished_ = true;
  }
  done_cv_.notify_all();
}

bool LiveServer::wait_finished(std::chrono::milliseconds timeout) {
  std::unique_lock lock(done_mu_);
  return done_cv_.wait_for(lock, timeout, [this] { return run_finished_.load(); });
}

void LiveServer::stop() {
  if (stopping_.exchange(true)) return;
  feed_cv_.notify_all();
  if (sim_thread_.joinable()) sim_thread_.join();
  if (http_) http_->stop();
  if (http_thread_.joinable()) http_thread_.join();
}

int serve(ScenarioConfig config, const ServeOptions& options) {
  LiveServer server(std::move(config), options);
  server.start();
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_signalled) {
    if (options.exit_when_done && server.wait_finished(std::chrono::milliseconds(100))) break;
    if (!options.exit_when_done) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  server.stop();
  return server.failure().empty() ? 0 : 1;
}

}  // namespace therasim

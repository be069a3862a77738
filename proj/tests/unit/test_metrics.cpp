#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "therasim/metrics.hpp"
#include "therasim/scenario.hpp"
#include "therasim/simulation.hpp"

using namespace therasim;

namespace {

const std::filesystem::path kSource = THERASIM_SOURCE_DIR;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::uint64_t fnv(const std::string& bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// One short emergency run shared by the cases below.
const std::filesystem::path& emergency_run() {
  static const std::filesystem::path dir = [] {
    const auto out = std::filesystem::temp_directory_path() / "therasim_metrics_test";
    std::filesystem::remove_all(out);
    RunOptions opt;
    opt.out_dir = out;
    opt.duration_ms = 120000;
    cli_run(kSource / "scenarios" / "emergency.json", opt);
    return out;
  }();
  return dir;
}

std::uint64_t corrupt_line(const std::string& text) {
  std::istringstream in(text);
  try {
    metrics_from_trace(in);
  } catch (const CorruptTrace& e) {
    return e.line();
  }
  return 0;
}

}  // namespace

TEST_CASE("replay reproduces metrics.json byte for byte") {
  const auto& dir = emergency_run();
  CHECK(metrics_text(cli_replay(dir)) == slurp(dir / "metrics.json"));
}

TEST_CASE("metrics agree with an independent pass over the trace") {
  const auto& dir = emergency_run();
  const auto lines = lines_of(slurp(dir / "trace.jsonl"));
  const Json m = Json::parse(slurp(dir / "metrics.json"));

  std::uint64_t h = 14695981039346656037ULL;
  std::uint64_t bytes = 0;
  std::uint64_t alerts = 0;
  std::vector<std::int64_t> latencies;
  std::map<std::string, int> outcomes;
  std::uint64_t fused = 0;
  for (const auto& line : lines) {
    h = fnv("\n", fnv(line, h));
    const Json j = Json::parse(line);
    const Json& p = j["payload"];
    if (p.is_object() && p.contains("link")) bytes += p["size"].get<std::uint64_t>();
    if (j["target"] == "cds" && j["kind"] == "alert") {
      ++alerts;
      latencies.push_back(j["t"].get<std::int64_t>() - p["msg"]["created_at"].get<std::int64_t>());
    }
    if (j["target"] == "cds" && j["kind"] == "fused_record") ++fused;
    if (j["target"] == "gateway" && j["kind"] == "session_closed") ++outcomes[p["outcome"].get<std::string>()];
  }
  const Json& g = m["global"];
  CHECK(g["trace_events"] == lines.size());
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  CHECK(g["trace_hash"] == hex);
  CHECK(g["bytes_moved"] == bytes);
  CHECK(g["alerts"] == alerts);
  CHECK(alerts == 1);
  const Json& p1 = m["patients"]["p1"];
  CHECK(p1["alert_latencies_ms"] == Json(latencies));
  CHECK(p1["uplink_records"] == fused);
  CHECK(p1["sessions_by_outcome"]["Success"] == outcomes["Success"]);
  CHECK(p1["sessions_by_outcome"]["Failure"] == outcomes["Failure"]);
  CHECK(m["complete"] == true);
}

TEST_CASE("replay only reads") {
  const auto& dir = emergency_run();
  std::map<std::string, std::pair<std::string, std::filesystem::file_time_type>> before;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    before[e.path().filename().string()] = {slurp(e.path()), e.last_write_time()};
  }
  cli_replay(dir);
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto& [content, mtime] = before.at(e.path().filename().string());
    CHECK(slurp(e.path()) == content);
    CHECK(e.last_write_time() == mtime);
    ++n;
  }
  CHECK(n == before.size());
}

TEST_CASE("corrupt traces are reported with a line number") {
  const std::string good = slurp(emergency_run() / "trace.jsonl");
  const auto lines = lines_of(good);
  REQUIRE(lines.size() > 10);

  // Cut mid-line.
  CHECK(corrupt_line(good.substr(0, good.size() - 5)) == lines.size());

  // Missing run_end.
  std::string no_end;
  for (std::size_t i = 0; i + 1 < lines.size(); ++i) no_end += lines[i] + "\n";
  CHECK(corrupt_line(no_end) == lines.size());

  // First line is not run_start.
  std::string no_start;
  for (std::size_t i = 1; i < lines.size(); ++i) no_start += lines[i] + "\n";
  CHECK(corrupt_line(no_start) == 1);

  // Garbage in the middle.
  std::string garbage;
  for (std::size_t i = 0; i < lines.size(); ++i) garbage += (i == 5 ? std::string("{not json") : lines[i]) + "\n";
  CHECK(corrupt_line(garbage) == 6);

  // Anything after run_end.
  CHECK(corrupt_line(good + lines[1] + "\n") == lines.size() + 1);

  CHECK(corrupt_line("") == 1);
  CHECK_THROWS_AS(cli_replay("/nonexistent/run"), CorruptTrace);
}

TEST_CASE("metrics text is two-space JSON with a trailing newline") {
  CHECK(metrics_text(Json{{"a", 1}}) == "{\n  \"a\": 1\n}\n");
}

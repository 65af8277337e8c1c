// Runs every verify config and prints one line per acceptance criterion.

#include <cstdio>
#include <filesystem>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "homlab/acceptance.hpp"

using namespace homlab;

int main(int argc, char** argv) {
  CLI::App app{"homlab acceptance"};
  std::string dir = "configs/verify";
  std::string out;
  std::size_t threads = 1;
  app.add_option("dir", dir, "directory of verify configs");
  app.add_option("--out", out, "keep CSV and JSON outputs here");
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  thread_cap() = threads;

  struct Tally {
    int configs = 0;
    int failed = 0;
    double seconds = 0.0;
    std::string first_failure;
  };
  std::map<int, Tally> tally;
  std::vector<std::filesystem::path> files;
  try {
    files = config_files(dir);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 1;
  }
  for (const auto& p : files) {
    const auto v = verify_config(p, out);
    auto& t = tally[v.criterion];
    ++t.configs;
    t.seconds += v.outcome.seconds;
    std::string why = v.outcome.message;
    for (const auto& m : v.missing) why += (why.empty() ? "" : "; ") + ("missing check " + m);
    if (!v.pass()) {
      ++t.failed;
      if (t.first_failure.empty()) t.first_failure = p.filename().string() + ": " + why;
    }
    std::fprintf(stderr, "  %-44s %s %7.1f s%s%s\n", p.filename().string().c_str(), v.pass() ? "ok  " : "FAIL",
                 v.outcome.seconds, why.empty() ? "" : "  ", why.c_str());
  }

  int failures = 0;
  for (const auto& c : criteria()) {
    const auto it = tally.find(c.id);
    std::string detail;
    bool pass = false;
    if (it == tally.end()) {
      detail = "no verify config";
    } else {
      const auto& t = it->second;
      const bool in_budget = t.seconds <= c.budget_seconds;
      pass = t.failed == 0 && in_budget;
      char buf[160];
      std::snprintf(buf, sizeof buf, "%d config(s), %.1f s of %.0f s budget", t.configs, t.seconds, c.budget_seconds);
      detail = buf;
      if (!t.first_failure.empty()) detail += "; " + t.first_failure;
      if (!in_budget) detail += "; over budget";
    }
    failures += !pass;
    std::printf("[%s] criterion %2d %s: %s\n", pass ? "PASS" : "FAIL", c.id, c.title.c_str(), detail.c_str());
  }
  for (const auto& [id, t] : tally) {
    if (!find_criterion(id)) {
      std::printf("[FAIL] configs without a valid criterion: %s\n", t.first_failure.c_str());
      ++failures;
    }
  }
  std::fflush(stdout);
  return failures == 0 ? 0 : 1;
}

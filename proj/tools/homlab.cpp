#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "homlab/acceptance.hpp"

using namespace homlab;

int main(int argc, char** argv) {
  CLI::App app{"homlab: stochastic homogenization experiments"};
  app.set_version_flag("--version", std::string(version()));
  app.require_subcommand(0, 1);

  std::string config;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string out = "out";
  app.add_option("--config", config, "experiment config (INI)");
  auto* seed_opt = app.add_option("--seed", seed, "master seed, overrides experiment.seed");
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", out, "output directory");

  auto* run = app.add_subcommand("run", "run one config");
  run->add_option("--config", config, "experiment config (INI)");
  run->add_option("--seed", seed, "master seed, overrides experiment.seed");
  run->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  run->add_option("--out", out, "output directory");

  std::vector<std::string> targets;
  int criterion = 0;
  auto* verify = app.add_subcommand("verify", "run every config of a directory and report per criterion");
  verify->add_option("targets", targets, "config files or directories")->default_val("configs/verify");
  verify->add_option("--criterion", criterion, "only configs for this criterion");
  verify->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  verify->add_option("--out", out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_config;
  }
  thread_cap() = threads;

  if (verify->parsed()) {
    if (targets.empty()) targets.push_back("configs/verify");
    int rc = exit_ok;
    try {
      for (const auto& t : targets) {
        for (const auto& p : config_files(t)) {
          if (criterion != 0 && config_criterion(p) != criterion) continue;
          const auto v = verify_config(p, out);
          std::string why = v.outcome.message;
          for (const auto& m : v.missing) why += (why.empty() ? "" : "; ") + ("missing check " + m);
          std::printf("[%s] %s (criterion %d, %.1f s)%s%s\n", v.pass() ? "PASS" : "FAIL",
                      p.filename().string().c_str(), v.criterion, v.outcome.seconds, why.empty() ? "" : ": ",
                      why.c_str());
          rc = std::max(rc, v.pass() ? int{exit_ok} : v.outcome.code == exit_config ? int{exit_config} : int{exit_science});
        }
      }
    } catch (const ConfigError& e) {
      std::fprintf(stderr, "config error: %s\n", e.what());
      return exit_config;
    }
    return rc;
  }

  if (config.empty()) {
    std::fprintf(stderr, "config error: --config: required\n");
    return exit_config;
  }
  std::optional<std::uint64_t> s;
  if (seed_opt->count() > 0 || run->get_option("--seed")->count() > 0) s = seed;
  const auto o = run_config(config, s, out);
  if (o.code != exit_ok) {
    std::fprintf(stderr, "%s\n", o.message.c_str());
  } else {
    std::printf("%s: %s -> %s\n", o.result.kind.c_str(), o.result.name.c_str(), out.c_str());
  }
  return o.code;
}

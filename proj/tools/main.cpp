#include <cstdlib>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "harness/cli.hpp"

namespace {

harness::CliConfig load_config(const std::string& config_path) {
  std::string path = config_path;
  if (path.empty()) {
    const char* env = std::getenv("HARNESS_CONFIG");
    if (env != nullptr) {
      path = env;
    }
  }
  if (path.empty()) {
    throw std::runtime_error("no config: pass --config or set HARNESS_CONFIG");
  }
  return harness::CliConfig::load(path);
}

// "y,n,y" -> scripted answers for non-interactive runs.
std::vector<bool> parse_answers(const std::string& spec) {
  std::vector<bool> answers;
  std::istringstream in(spec);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) {
      answers.push_back(item[0] == 'y' || item[0] == 'Y');
    }
  }
  return answers;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"agent harness runtime: sessions, memory, audit, benchmarks"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "path to the harness config file");

  // run
  auto* run = app.add_subcommand("run", "run a session on a task (or a task file)");
  std::string task;
  std::string answers;
  run->add_option("task", task, "task text or path to a task file")->required();
  run->add_option("--answers", answers,
                  "scripted y/n answers for permission prompts (e.g. y,n)");

  // memory
  auto* memory = app.add_subcommand("memory", "inspect and maintain the memory store");
  memory->require_subcommand(1);
  auto* memory_list = memory->add_subcommand("list", "list entries");
  auto* memory_verify = memory->add_subcommand("verify", "verify one entry against the environment");
  std::string verify_id;
  long long now_flag = -1;
  memory_verify->add_option("id", verify_id, "entry id")->required();
  memory_verify->add_option("--now", now_flag, "logical timestamp to verify at");
  auto* memory_sweep = memory->add_subcommand("sweep", "deprecate stale low-confidence entries");
  long long sweep_now = -1;
  long long sweep_horizon = -1;
  memory_sweep->add_option("--now", sweep_now, "logical timestamp to sweep at");
  memory_sweep->add_option("--horizon", sweep_horizon, "staleness horizon in logical ticks");

  // audit
  auto* audit = app.add_subcommand("audit", "inspect and verify the audit log");
  audit->require_subcommand(1);
  auto* audit_show = audit->add_subcommand("show", "print audit records");
  std::string kind_filter;
  audit_show->add_option("--kind", kind_filter, "only records of this kind");
  auto* audit_verify = audit->add_subcommand("verify", "recompute the digest chain");

  // bench
  auto* bench = app.add_subcommand("bench", "run a benchmark scenario");
  std::string scenario_path;
  bench->add_option("scenario", scenario_path, "scenario file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const harness::CliConfig config = load_config(config_path);
    if (run->parsed()) {
      if (!answers.empty()) {
        harness::ScriptedOperator channel(parse_answers(answers));
        return harness::cmd_run(config, task, channel, std::cout);
      }
      harness::InteractiveOperator channel(std::cin, std::cout);
      return harness::cmd_run(config, task, channel, std::cout);
    }
    if (memory_list->parsed()) {
      return harness::cmd_memory_list(config, std::cout);
    }
    if (memory_verify->parsed()) {
      return harness::cmd_memory_verify(
          config, verify_id,
          now_flag >= 0 ? std::optional<harness::LogicalTime>(now_flag) : std::nullopt, std::cout);
    }
    if (memory_sweep->parsed()) {
      return harness::cmd_memory_sweep(
          config, sweep_now >= 0 ? std::optional<harness::LogicalTime>(sweep_now) : std::nullopt,
          sweep_horizon >= 0 ? std::optional<harness::LogicalTime>(sweep_horizon) : std::nullopt,
          std::cout);
    }
    if (audit_show->parsed()) {
      return harness::cmd_audit_show(config, kind_filter, std::cout);
    }
    if (audit_verify->parsed()) {
      return harness::cmd_audit_verify(config, std::cout);
    }
    if (bench->parsed()) {
      return harness::cmd_bench(config, scenario_path, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

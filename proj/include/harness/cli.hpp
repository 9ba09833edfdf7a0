#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "harness/governance.hpp"
#include "harness/orchestration.hpp"

namespace harness {

// Resolved CLI configuration. Paths in the file are taken relative to the
// config file's directory; anything unresolvable is named in the error.
struct CliConfig {
  std::filesystem::path store;
  std::filesystem::path audit_log;
  std::filesystem::path policy;
  std::filesystem::path registry;
  std::filesystem::path environment;  // optional: empty when not configured
  std::string substrate_kind = "scripted";
  std::filesystem::path substrate_path;
  std::filesystem::path workdir = "out";
  int budget = 256;
  int horizon = 6;
  int max_retries = 2;
  int retrieve_k = 4;
  int max_candidates = 64;
  double action_risk = 0.5;
  double staleness_tau = 7.0;
  std::string review_token = "review-ok";

  static CliConfig load(const std::filesystem::path& path);
};

// Interactive y/n resolution on the terminal.
class InteractiveOperator : public OperatorChannel {
 public:
  InteractiveOperator(std::istream& in, std::ostream& out) : in_(&in), out_(&out) {}
  std::optional<bool> ask(const std::string& question) override;

 private:
  std::istream* in_;
  std::ostream* out_;
};

// Each command returns its process exit status: 0 iff the operation
// succeeded. All of them route through the same module operations as
// programmatic use.
int cmd_run(const CliConfig& config, const std::string& task_or_file, OperatorChannel& channel,
            std::ostream& out);
int cmd_memory_list(const CliConfig& config, std::ostream& out);
int cmd_memory_verify(const CliConfig& config, const std::string& id,
                      std::optional<LogicalTime> now, std::ostream& out);
int cmd_memory_sweep(const CliConfig& config, std::optional<LogicalTime> now,
                     std::optional<LogicalTime> horizon, std::ostream& out);
int cmd_audit_show(const CliConfig& config, const std::string& kind_filter, std::ostream& out);
int cmd_audit_verify(const CliConfig& config, std::ostream& out);
int cmd_bench(const CliConfig& config, const std::filesystem::path& scenario_path,
              std::ostream& out);

}  // namespace harness

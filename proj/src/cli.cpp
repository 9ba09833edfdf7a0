#include "harness/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "harness/evals.hpp"

namespace harness {

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& value) {
  const std::filesystem::path p(value);
  return p.is_absolute() ? p : base / p;
}

void require_exists(const std::filesystem::path& path, const std::string& what) {
  if (!std::filesystem::exists(path)) {
    throw std::runtime_error(what + " path not found: " + path.string());
  }
}

// Highest logical timestamp in the store, so CLI operations continue the
// session clock instead of restarting it.
LogicalTime store_now(const MemoryStore& store) {
  LogicalTime now = 0;
  for (const auto& entry : store.entries()) {
    now = std::max({now, entry.created_at, entry.last_verified_at, entry.last_accessed_at});
  }
  return now + 1;
}

AuditLog open_audit(const CliConfig& config) {
  if (std::filesystem::exists(config.audit_log)) {
    return AuditLog::load(config.audit_log);
  }
  return AuditLog(config.audit_log);
}

}  // namespace

CliConfig CliConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("config path not found: " + path.string());
  }
  nlohmann::json j;
  in >> j;
  const std::filesystem::path base = path.parent_path();

  CliConfig config;
  config.store = resolve(base, j.at("store").get<std::string>());
  config.audit_log = resolve(base, j.at("audit_log").get<std::string>());
  config.policy = resolve(base, j.at("policy").get<std::string>());
  config.registry = resolve(base, j.at("registry").get<std::string>());
  if (j.contains("environment")) {
    config.environment = resolve(base, j.at("environment").get<std::string>());
  }
  if (j.contains("substrate")) {
    config.substrate_kind = j.at("substrate").value("kind", "scripted");
    if (j.at("substrate").contains("path")) {
      config.substrate_path = resolve(base, j.at("substrate").at("path").get<std::string>());
    }
  }
  config.workdir = resolve(base, j.value("workdir", "out"));
  config.budget = j.value("budget", config.budget);
  config.horizon = j.value("horizon", config.horizon);
  config.max_retries = j.value("max_retries", config.max_retries);
  config.retrieve_k = j.value("k", config.retrieve_k);
  config.max_candidates = j.value("max_candidates", config.max_candidates);
  config.action_risk = j.value("action_risk", config.action_risk);
  config.staleness_tau = j.value("staleness_tau", config.staleness_tau);
  config.review_token = j.value("review_token", config.review_token);

  require_exists(config.store, "store");
  require_exists(config.policy, "policy");
  require_exists(config.registry, "registry");
  if (!config.environment.empty()) {
    require_exists(config.environment, "environment");
  }
  if (config.substrate_kind == "scripted") {
    require_exists(config.substrate_path, "substrate script");
  } else if (config.substrate_kind == "remote") {
    throw std::runtime_error(
        "remote substrate endpoints are not supported in this build; bind a scripted fixture");
  } else {
    throw std::runtime_error("unknown substrate kind: " + config.substrate_kind);
  }
  return config;
}

std::optional<bool> InteractiveOperator::ask(const std::string& question) {
  (*out_) << question << " [y/n] " << std::flush;
  std::string line;
  if (!std::getline(*in_, line)) {
    return std::nullopt;  // channel closed
  }
  return !line.empty() && (line[0] == 'y' || line[0] == 'Y');
}

int cmd_run(const CliConfig& config, const std::string& task_or_file, OperatorChannel& channel,
            std::ostream& out) {
  std::vector<std::string> tasks;
  if (std::filesystem::exists(task_or_file) &&
      std::filesystem::is_regular_file(task_or_file)) {
    std::ifstream in(task_or_file);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) {
        tasks.push_back(line);
      }
    }
  } else {
    tasks.push_back(task_or_file);
  }
  if (tasks.empty()) {
    out << "error: task file is empty\n";
    return 1;
  }

  std::filesystem::create_directories(config.workdir);
  AuditLog audit = open_audit(config);
  LogicalClock clock;

  ScoringConfig scoring;
  scoring.tau = config.staleness_tau;
  MemoryStore store(audit, scoring);
  store.load(config.store);

  Governor governor(audit, config.review_token);
  const PermissionPolicy policy = PermissionPolicy::load(config.policy);
  governor.evolution().guardrails = policy;

  const ExecutorRegistry executors = ExecutorRegistry::builtins();
  const PredicateRegistry predicates = PredicateRegistry::builtins();
  const SkillRegistry registry = SkillRegistry::load(config.registry, executors, predicates);

  DriftingEnvironment env;
  if (!config.environment.empty()) {
    std::ifstream env_in(config.environment);
    nlohmann::json j;
    env_in >> j;
    env = DriftingEnvironment::from_json(j.is_object() && j.contains("facts")
                                             ? j
                                             : nlohmann::json{{"facts", j}});
  }

  ScriptedSubstrate substrate = ScriptedSubstrate::load(config.substrate_path);

  SessionConfig session_config;
  session_config.session_id = "cli";
  session_config.budget = config.budget;
  session_config.horizon = config.horizon;
  session_config.max_retries = config.max_retries;
  session_config.retrieve_k = config.retrieve_k;
  session_config.max_candidates = config.max_candidates;
  session_config.action_risk = config.action_risk;
  session_config.scoring = scoring;

  Session session(session_config, store, governor, policy, registry, executors, predicates,
                  substrate, config.environment.empty() ? nullptr : &env, &channel, clock);
  const Trajectory trajectory = session.run_session(tasks, config.horizon);

  for (const auto& turn : trajectory.turns) {
    std::string action = "none";
    std::string detail;
    if (turn.proposal) {
      action = to_string(turn.proposal->action);
      if (turn.routing && turn.routing->chosen) {
        detail = " skill=" + turn.routing->chosen->name;
      }
    }
    out << "turn " << turn.index << " episode " << turn.episode << " action=" << action << detail
        << " verified=" << (turn.outcome_verdict == "pass" ? "yes"
                            : turn.outcome_verdict.empty() ? "-"
                                                           : "no")
        << " tokens=" << turn.tokens_consumed << (turn.solved ? " solved" : "")
        << (turn.escalated ? " escalated:" + turn.escalation_reason : "") << "\n";
  }
  out << "status: " << to_string(trajectory.status) << "\n";

  const auto trajectory_path = config.workdir / "trajectory.jsonl";
  trajectory.save(trajectory_path);
  store.save(config.store);
  out << "trajectory: " << trajectory_path.string() << "\n";
  return 0;
}

int cmd_memory_list(const CliConfig& config, std::ostream& out) {
  AuditLog audit = open_audit(config);
  MemoryStore store(audit);
  store.load(config.store);

  out << "id         status      conf   verified_at  scope\n";
  for (const auto& entry : store.entries()) {
    char line[256];
    std::snprintf(line, sizeof(line), "%-10s %-11s %.3f  %-11lld %s", entry.id.c_str(),
                  to_string(entry.status).c_str(), entry.confidence,
                  static_cast<long long>(entry.last_verified_at), entry.scope_key.c_str());
    out << line << "\n";
  }
  return 0;
}

int cmd_memory_verify(const CliConfig& config, const std::string& id,
                      std::optional<LogicalTime> now, std::ostream& out) {
  AuditLog audit = open_audit(config);
  ScoringConfig scoring;
  scoring.tau = config.staleness_tau;
  MemoryStore store(audit, scoring);
  store.load(config.store);

  DriftingEnvironment env;
  bool has_env = false;
  if (!config.environment.empty()) {
    std::ifstream env_in(config.environment);
    nlohmann::json j;
    env_in >> j;
    env = DriftingEnvironment::from_json(j.is_object() && j.contains("facts")
                                             ? j
                                             : nlohmann::json{{"facts", j}});
    has_env = true;
  }

  const LogicalTime ts = now.value_or(store_now(store));
  const VerificationOutcome outcome = store.verify_entry(id, has_env ? &env : nullptr, ts);
  out << "entry " << id << ": "
      << (outcome.status == VerifyStatus::Pass          ? "pass"
          : outcome.status == VerifyStatus::Fail        ? "fail"
                                                        : "indeterminate")
      << " confidence " << outcome.confidence_before << " -> " << outcome.confidence_after
      << (outcome.deprecated ? " (deprecated)" : "") << "\n";
  store.save(config.store);
  return 0;
}

int cmd_memory_sweep(const CliConfig& config, std::optional<LogicalTime> now,
                     std::optional<LogicalTime> horizon, std::ostream& out) {
  AuditLog audit = open_audit(config);
  ScoringConfig scoring;
  scoring.tau = config.staleness_tau;
  MemoryStore store(audit, scoring);
  store.load(config.store);

  const LogicalTime ts = now.value_or(store_now(store));
  const LogicalTime h = horizon.value_or(static_cast<LogicalTime>(config.staleness_tau));
  const auto demoted = store.sweep(ts, h);
  if (demoted.empty()) {
    out << "sweep: nothing demoted\n";
  } else {
    out << "sweep demoted:";
    for (const auto& id : demoted) {
      out << " " << id;
    }
    out << "\n";
  }
  store.save(config.store);
  return 0;
}

int cmd_audit_show(const CliConfig& config, const std::string& kind_filter, std::ostream& out) {
  require_exists(config.audit_log, "audit log");
  const AuditLog log = AuditLog::load(config.audit_log);
  for (const auto& record : log.records()) {
    if (!kind_filter.empty() && to_string(record.kind) != kind_filter) {
      continue;
    }
    out << record.seq << " ts=" << record.ts << " " << to_string(record.kind) << " "
        << record.outcome << " payload=" << record.payload_digest.substr(0, 12) << "\n";
  }
  return 0;
}

int cmd_audit_verify(const CliConfig& config, std::ostream& out) {
  require_exists(config.audit_log, "audit log");
  const AuditLog log = AuditLog::load(config.audit_log);
  const auto bad = log.verify_chain();
  if (bad) {
    out << "first-bad-seq " << *bad << "\n";
    return 1;
  }
  out << "ok\n";
  return 0;
}

int cmd_bench(const CliConfig& config, const std::filesystem::path& scenario_path,
              std::ostream& out) {
  require_exists(scenario_path, "scenario");
  const ScenarioSpec spec = ScenarioSpec::load(scenario_path);
  const auto workdir = config.workdir / spec.name;
  const ScenarioArtifacts artifacts = run_scenario(spec, workdir);
  out << artifacts.report.to_table();
  out << "report: " << artifacts.report_path.string() << "\n";
  return 0;
}

}  // namespace harness

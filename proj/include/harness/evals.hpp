#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "harness/environment.hpp"
#include "harness/governance.hpp"
#include "harness/memory.hpp"
#include "harness/orchestration.hpp"
#include "harness/skills.hpp"

namespace harness {

// What the scenario author knows that the harness must rediscover: relevant
// memory per query, minimal sufficient context per task, where staleness was
// injected, and which facts each handoff must carry.
struct GroundTruth {
  std::map<int, std::set<std::string>> relevant_scope_keys;  // per episode
  std::map<int, std::set<std::string>> minimal_scope_keys;   // per episode
  std::vector<int> staleness_episodes;
  std::vector<std::set<std::string>> required_facts;  // per handoff, in order
};

struct RoleSpec {
  PermissionPolicy policy;
  nlohmann::json substrate_script;
  int budget = 128;
  std::vector<std::string> registry_names;
};

struct ChoreographyStep {
  int before_episode = 0;
  std::string op;  // dispatch | step | handoff
  // dispatch
  std::string role;
  std::string task;
  int budget = 0;
  std::vector<std::string> registry_names;
  // step / handoff
  std::string handle;
  std::string from;
  std::string to;
  std::optional<AgentMessage> message;
};

struct ScenarioSpec {
  std::string name;
  std::vector<std::string> episodes;  // one task per episode
  DriftingEnvironment environment;
  SessionConfig session;
  int turns_per_episode = 3;
  PermissionPolicy policy;
  nlohmann::json skills_json = nlohmann::json::array();
  nlohmann::json substrate_script;
  std::map<std::string, RoleSpec> roles;
  std::vector<ChoreographyStep> choreography;
  GroundTruth truth;
  std::vector<TranscriptExtractor::Candidate> extractor_candidates;
  std::vector<bool> operator_answers;
  std::string review_token = "review-ok";

  static ScenarioSpec load(const std::filesystem::path& path);
  static ScenarioSpec from_json(const nlohmann::json& j);
  // Throws when any reference cannot resolve; runs before any episode does.
  void validate() const;
};

struct MetricValue {
  double value = 1.0;
  bool vacuous = false;  // declared-vacuous convention engaged (e.g. empty store)
};

struct DriftResult {
  std::vector<double> series;
  double slope = 0.0;
  int sign = 0;
  bool single_episode = false;
};

struct ProcessMetrics {
  long tokens = 0;
  int tool_calls = 0;
  int retries = 0;
  int failed_actions = 0;
  int interventions = 0;
  int verifications = 0;  // verification cost: count of verify events
  int failure_recurrences = 0;

  nlohmann::json to_json() const;
};

struct BenchmarkReport {
  std::string scenario;
  std::vector<int> success_series;
  std::vector<double> hygiene_pre_episode;  // after mutations, before the episode runs
  double one_shot = 0.0;
  MetricValue precision;
  MetricValue hygiene;
  MetricValue efficiency;
  MetricValue fidelity;
  MetricValue recovery;
  DriftResult drift;
  int safety_violations = 0;
  ProcessMetrics process;

  nlohmann::json to_json() const;
  // Plain-text table, one row per benchmark dimension, stable column order.
  std::string to_table() const;
  void save(const std::filesystem::path& path) const;
};

// ---- Metric primitives (pure, read-only over trace artifacts) ----

// Fraction of retrieved entries that are ground-truth relevant, per query,
// averaged. Retrieval includes segments refresh later removed.
MetricValue memory_precision(const std::vector<Turn>& turns,
                             const std::map<int, std::set<std::string>>& relevant,
                             const std::map<std::string, std::string>& entry_scope_by_id);

// Fraction of active entries the environment still confirms.
MetricValue memory_hygiene(const std::vector<MemoryEntry>& entries, const Environment& env);

// Minimal-sufficient tokens over assembled tokens, clipped to 1, averaged
// over turns. Mandatory segments count in both numerator and denominator.
MetricValue context_efficiency(const std::vector<Turn>& turns,
                               const std::map<int, std::set<std::string>>& minimal,
                               const std::function<int(const std::string&)>& scope_token_count);

// Required facts carried across handoffs; empty requirement is 1.0.
MetricValue communication_fidelity(const std::vector<AgentMessage>& messages,
                                   const std::vector<std::set<std::string>>& required);

// Per-episode success plus the sign of the least-squares slope.
DriftResult drift_curve(const std::vector<int>& successes);

// Among turns that retrieved a stale-invalid entry, the fraction where the
// entry was re-verified (audit-visible) before any skill ran in that turn.
MetricValue recovery_rate(const std::vector<Turn>& turns, const AuditLog& audit,
                          const std::map<std::string, std::string>& initial_facts,
                          const std::vector<DriftingEnvironment::Mutation>& mutations,
                          const std::map<std::string, MemoryEntry>& entries_by_id);

// Executed invocations lacking a preceding allow for the same action.
int safety_check(const AuditLog& audit);

ProcessMetrics process_metrics(const std::vector<Turn>& turns, const AuditLog& audit);

// Entry ids a turn retrieved, including ones refresh removed afterwards.
std::vector<std::string> retrieved_entry_ids(const Turn& turn);

struct ScenarioArtifacts {
  BenchmarkReport report;
  std::filesystem::path trajectory_path;
  std::filesystem::path audit_path;
  std::filesystem::path store_path;
  std::filesystem::path report_path;
};

// Runs every episode against one persistent session, applying environment
// mutations on schedule, then scores the run. Artifacts land under workdir.
ScenarioArtifacts run_scenario(const ScenarioSpec& spec, const std::filesystem::path& workdir);

}  // namespace harness

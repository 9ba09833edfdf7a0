#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "harness/audit.hpp"
#include "harness/environment.hpp"
#include "harness/governance.hpp"

namespace harness {

using ArgRecord = nlohmann::json;
using ResultRecord = nlohmann::json;

using PrePredicate = std::function<bool(const ArgRecord&)>;
using PostPredicate =
    std::function<bool(const ArgRecord&, const ResultRecord&, const Environment*)>;

// Predicates are named, registered functions: audit records and compose
// checks refer to them by stable name.
class PredicateRegistry {
 public:
  void register_pre(const std::string& name, PrePredicate fn);
  void register_post(const std::string& name, PostPredicate fn);
  bool has_pre(const std::string& name) const { return pre_.count(name) != 0; }
  bool has_post(const std::string& name) const { return post_.count(name) != 0; }
  bool eval_pre(const std::string& name, const ArgRecord& args) const;
  bool eval_post(const std::string& name, const ArgRecord& args, const ResultRecord& result,
                 const Environment* env) const;

  static PredicateRegistry builtins();

 private:
  std::map<std::string, PrePredicate> pre_;
  std::map<std::string, PostPredicate> post_;
};

using Executor = std::function<ResultRecord(const ArgRecord&, const Environment*)>;

class ExecutorRegistry {
 public:
  void bind(const std::string& name, Executor fn);
  bool has(const std::string& name) const { return executors_.count(name) != 0; }
  const Executor& get(const std::string& name) const;

  static ExecutorRegistry builtins();

 private:
  std::map<std::string, Executor> executors_;
};

struct SkillSpec {
  std::string name;
  int version = 1;
  std::set<std::string> capability_tags;
  std::vector<std::string> preconditions;   // predicate names over the argument record
  std::vector<std::string> postconditions;  // predicate names over (args, result, environment)
  double cost_estimate = 0.0;
  double min_route_confidence = 0.5;
  std::string executor;  // executor binding name; defaults to the skill name

  void validate() const;
  nlohmann::json to_json() const;
  static SkillSpec from_json(const nlohmann::json& j);
};

// Ordered registry of skills, one live version per name. Loading binds
// executors and predicates by name and fails on anything unbound.
class SkillRegistry {
 public:
  void register_skill(SkillSpec spec);
  const SkillSpec* find(const std::string& name) const;
  const std::vector<SkillSpec>& all() const { return skills_; }
  bool empty() const { return skills_.empty(); }

  // A registry restricted to the named skills, for subagent dispatch.
  SkillRegistry subset(const std::vector<std::string>& names) const;

  static SkillRegistry load(const std::filesystem::path& path, const ExecutorRegistry& executors,
                            const PredicateRegistry& predicates);
  static SkillRegistry from_json(const nlohmann::json& j, const ExecutorRegistry& executors,
                                 const PredicateRegistry& predicates);

 private:
  std::vector<SkillSpec> skills_;
  std::map<std::string, std::size_t> index_;
};

struct SubtaskDescriptor {
  std::string id;
  std::set<std::string> tags;
};

struct RankedSkill {
  std::string name;
  int version = 0;
  double match_score = 0.0;
  double cost = 0.0;
};

struct RoutingDecision {
  std::string subtask_id;
  std::optional<RankedSkill> chosen;  // nullopt = escalation
  std::string escalation_reason;      // "no-skill" or "low-confidence"
  double best_score = 0.0;
  double threshold = 0.0;  // min_route_confidence of the best candidate
  std::vector<RankedSkill> alternatives;

  bool escalated() const { return !chosen.has_value(); }
};

// Tag-overlap routing with cost/name tie-breaks, behind a replaceable policy
// interface so a learned scorer can be slotted in.
class RoutingPolicy {
 public:
  virtual ~RoutingPolicy() = default;
  virtual double match_score(const SubtaskDescriptor& subtask, const SkillSpec& skill) const = 0;
};

class TagOverlapPolicy : public RoutingPolicy {
 public:
  double match_score(const SubtaskDescriptor& subtask, const SkillSpec& skill) const override;
};

class Router {
 public:
  Router(AuditLog& audit, std::string agent = "main");

  // Deterministic: identical (subtask, registry) yields an identical
  // decision. A decision differing from the previous one for the same
  // tag-set is audited as a routing change.
  RoutingDecision route(const SubtaskDescriptor& subtask, const SkillRegistry& registry,
                        LogicalTime now);

  void set_policy(const RoutingPolicy* policy) { policy_ = policy; }

 private:
  AuditLog* audit_;
  std::string agent_;
  const RoutingPolicy* policy_ = nullptr;
  TagOverlapPolicy default_policy_;
  std::map<std::string, std::string> last_by_tagset_;
};

struct PredicateResult {
  std::string name;
  bool passed = false;
};

struct SkillOutcome {
  std::string invocation_id;
  std::string skill_name;
  int skill_version = 0;
  ResultRecord result;
  std::vector<PredicateResult> postcondition_results;

  // Derived, never stored: all postconditions passed.
  bool verified() const {
    for (const auto& r : postcondition_results) {
      if (!r.passed) {
        return false;
      }
    }
    return true;
  }

  nlohmann::json to_json() const;
  static SkillOutcome from_json(const nlohmann::json& j);
};

enum class InvokeStatus { Executed, Denied, PreconditionFailed, ExecutorError };

struct InvokeResult {
  InvokeStatus status = InvokeStatus::Denied;
  std::optional<SkillOutcome> outcome;  // absent when the gate denies or preconditions refuse
  std::string detail;
  std::optional<std::uint64_t> permission_seq;
  std::optional<std::uint64_t> invocation_seq;
};

// Gated execution: preconditions, then permission, then the executor, then
// every postcondition by name. Nothing executes without a prior allow in
// the audit log.
InvokeResult invoke(const RoutingDecision& decision, const ArgRecord& args,
                    const SkillRegistry& registry, const ExecutorRegistry& executors,
                    const PredicateRegistry& predicates, Governor& governor,
                    const PermissionPolicy& policy, OperatorChannel* channel,
                    const Environment* env, const std::string& invocation_id, LogicalTime now,
                    const std::string& agent = "main");

enum class OutcomeVerdict { Pass, Fail, VersionMismatch };

// Fails iff any postcondition failed; a version mismatch is an error and
// counts as a failure for write-back purposes.
OutcomeVerdict verify_outcome(const SkillOutcome& outcome, const SkillSpec& spec);

struct ComposeResult {
  bool valid = false;
  std::vector<std::string> steps;  // name@version per step, when valid
  std::string missing_predicate;
  std::size_t failing_step = 0;  // index of the step whose precondition is unmet
};

// A pipeline is valid iff each step's named preconditions all appear among
// the previous step's named postconditions.
ComposeResult compose(const std::vector<SkillSpec>& pipeline);

struct EscalationRecord {
  std::string subtask_id;
  std::string reason;
  double best_score = 0.0;
  double threshold = 0.0;

  nlohmann::json to_json() const;
};

// Builds the escalation record; escalations raised by subagents leave a
// collaboration-failure trace.
EscalationRecord escalate(const SubtaskDescriptor& subtask, const std::string& reason,
                          double best_score, double threshold, AuditLog& audit, bool from_subagent,
                          LogicalTime now, const std::string& agent = "main");

}  // namespace harness

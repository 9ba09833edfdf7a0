#pragma once

#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "harness/audit.hpp"
#include "harness/environment.hpp"
#include "harness/memory.hpp"

namespace harness {

enum class Decision { Allow, Deny, Ask };

std::string to_string(Decision d);
std::optional<Decision> decision_from_string(const std::string& text);

struct PolicyRule {
  std::string pattern;  // exact action name, or a "prefix.*" wildcard
  Decision decision = Decision::Deny;
};

// Action patterns resolve most-specific-first: exact match beats any
// wildcard, longer wildcard prefixes beat shorter ones, and the default
// applies when nothing matches.
struct PermissionPolicy {
  std::vector<PolicyRule> rules;
  Decision fallback = Decision::Deny;

  Decision lookup(const std::string& action) const;

  nlohmann::json to_json() const;
  static PermissionPolicy from_json(const nlohmann::json& j);
  static PermissionPolicy load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// Resolves "ask" decisions. Returns nullopt when the channel is closed,
// which callers must treat as deny.
class OperatorChannel {
 public:
  virtual ~OperatorChannel() = default;
  virtual std::optional<bool> ask(const std::string& question) = 0;
};

class ScriptedOperator : public OperatorChannel {
 public:
  explicit ScriptedOperator(std::vector<bool> answers)
      : answers_(answers.begin(), answers.end()) {}

  std::optional<bool> ask(const std::string&) override {
    if (answers_.empty()) {
      return std::nullopt;  // closed
    }
    const bool answer = answers_.front();
    answers_.pop_front();
    return answer;
  }

 private:
  std::deque<bool> answers_;
};

enum class UpdatePolicy { Online, ReviewRequired };

// The four-way split of everything that may change over an agent's life.
// Updates to one partition must never touch another, and guardrails only
// move with a valid review token.
struct EvolutionState {
  std::vector<std::string> memory_ids;
  std::map<std::string, int> skill_versions;
  std::map<std::string, std::string> preferences;
  PermissionPolicy guardrails;

  UpdatePolicy memory_policy = UpdatePolicy::Online;
  UpdatePolicy skills_policy = UpdatePolicy::Online;
  UpdatePolicy preferences_policy = UpdatePolicy::Online;
  // Guardrails are review-required by construction; there is no knob.

  nlohmann::json snapshot() const;
};

struct GuardrailChange {
  PolicyRule rule;
  bool remove = false;
  std::optional<Decision> new_fallback;
};

// What a memory write-back came from, as far as the gate needs to know.
struct WriteSource {
  std::string invocation_id;
  bool verified = false;
};

// Permission checks, verification-gated memory writes, guardrail review,
// and the audit trail behind all of them.
class Governor {
 public:
  Governor(AuditLog& audit, std::string review_token);

  // Audits every decision (kind tool-invocation); "ask" goes through the
  // operator channel and a closed channel denies.
  Decision check_permission(const std::string& action, const PermissionPolicy& policy,
                            OperatorChannel* channel, LogicalTime now,
                            const std::string& agent = "main");

  // The write gate. Rejects unverified skill output and candidates the
  // verifier disproves; audits the decision as the operation's one
  // memory-write record.
  GateDecision gate_write(const MemoryEntry& candidate, const std::optional<WriteSource>& source,
                          const Environment* verifier, LogicalTime now,
                          const std::string& agent = "main");

  // Convenience: a WriteGate closure bound to one source/verifier pair.
  WriteGate make_write_gate(std::optional<WriteSource> source, const Environment* verifier,
                            LogicalTime now, const std::string& agent = "main");

  // Applied iff the review token matches; audited either way.
  bool update_guardrails(const GuardrailChange& change, const std::optional<std::string>& token,
                         LogicalTime now);

  // Online partitions update through the ordinary path, no token needed.
  void update_preference(const std::string& key, const std::string& value);
  void note_memory_write(const std::string& entry_id);
  // Registering a skill version changes the routing surface, so it leaves
  // a routing-change trace.
  void register_skill_version(const std::string& name, int version, LogicalTime now);

  EvolutionState& evolution() { return evolution_; }
  const EvolutionState& evolution() const { return evolution_; }
  AuditLog& audit() { return *audit_; }
  int ask_resolutions() const { return ask_resolutions_; }

 private:
  AuditLog* audit_;
  std::string review_token_;
  EvolutionState evolution_;
  int ask_resolutions_ = 0;
};

}  // namespace harness
